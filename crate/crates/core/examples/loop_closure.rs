//! Loop closure on a synthetic route and its recall at fixed precision.

use semls::lcd::{
    build_index, detect_loops, recall_at_precision, LoopGroundTruth, RansacParams, VoteParams, PRECISION_LEVELS,
};
use semls::synth;

fn main() -> semls::Result<()> {
    let scene = synth::loop_scene(4, 200, 120, 0.6);
    let index = build_index(scene.database)?;
    let gt = LoopGroundTruth::from_poses(&scene.queries, &index, 10.0)?;
    let matches = detect_loops(&scene.queries, &index, &VoteParams::default(), &RansacParams::default())?;
    for m in matches.iter().take(5) {
        println!(
            "{} -> {:?}  inliers {}  votes {:.3}  correct {}",
            m.query_id,
            m.frame_id,
            m.score,
            m.raw_score,
            m.frame_id.as_deref().is_some_and(|f| gt.is_correct(&m.query_id, f))
        );
    }
    let report = recall_at_precision(&gt.outcomes(&matches), &PRECISION_LEVELS)?;
    for (p, r) in &report.levels {
        println!("R@P{p:.2} = {r:.3}");
    }
    Ok(())
}
