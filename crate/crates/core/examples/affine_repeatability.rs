//! Repeatability of a jittery detector under random affine warps.

use semls::repeatability::{mare, sample_affine, transform_segments, AffineSampling, RepeatPair, DEFAULT_MIN_LEN};
use semls::synth;

fn main() -> semls::Result<()> {
    let (w, h) = (640.0, 480.0);
    let mut rng = synth::rng(5);
    let cfg = AffineSampling::default();
    let mut pairs = Vec::new();
    for seed in 0..30 {
        let scene = synth::random_scene(&mut rng, w, h, 30, 4);
        let t = sample_affine(seed, &cfg, w, h)?;
        let warped: Vec<_> = transform_segments(&scene, &t, w, h, DEFAULT_MIN_LEN)
            .into_iter()
            .map(|ws| ws.segment)
            .collect();
        // the detector sees both images with independent localization noise
        pairs.push(RepeatPair {
            dets_i: synth::noisy_detections(&mut rng, &scene, w, h, 1.5, 4),
            dets_it: synth::noisy_detections(&mut rng, &warped, w, h, 1.5, 4),
            transform: t,
        });
    }
    for agnostic in [false, true] {
        let r = mare(&pairs, agnostic)?;
        let per: Vec<String> = r.re.iter().map(|v| format!("{v:.3}")).collect();
        println!(
            "category agnostic {agnostic:<5}  Re {}  mARe {:.4}",
            per.join(" "),
            r.mare
        );
    }
    Ok(())
}
