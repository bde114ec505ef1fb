//! Forward pass of both bi-atrous module variants on a feature map.

use ndarray::Array3;
use rand::Rng;
use semls::bam::{bam_forward, BamParams, BamVariant};
use semls::synth;

fn main() -> semls::Result<()> {
    let mut rng = synth::rng(2);
    let x = Array3::from_shape_fn((16, 56, 56), |_| rng.random_range(-1.0..1.0));
    for variant in [BamVariant::Bam51, BamVariant::Bam33] {
        for (name, cfg) in ["vertical", "horizontal", "square"].iter().zip(variant.configs()) {
            println!(
                "{variant:?} {name:<10} kernel {:?} rate {:?} pad {:?} extent {:?}",
                cfg.kernel,
                cfg.rate,
                cfg.pad,
                cfg.effective_extent()
            );
        }
        let params = BamParams::random(16, variant, &mut rng);
        let y = bam_forward(&x, &params, variant)?;
        let active = y.iter().filter(|v| **v > 0.0).count() as f64 / y.len() as f64;
        println!(
            "{variant:?}: {:?} -> {:?}, {:.1}% positive\n",
            x.dim(),
            y.dim(),
            100.0 * active
        );
    }
    Ok(())
}
