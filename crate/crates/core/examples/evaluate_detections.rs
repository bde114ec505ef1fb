//! mAP@0.5 and mAP3@0.5 on a synthetic detection set.

use semls::eval::{evaluate, DetectionSet};
use semls::segment::CategoryRegistry;
use semls::synth;

fn main() {
    let registry = CategoryRegistry::default();
    let mut rng = synth::rng(11);
    let mut gt = DetectionSet::new();
    let mut det = DetectionSet::new();
    for i in 0..20 {
        let scene = synth::random_scene(&mut rng, 1242.0, 375.0, 25, registry.len());
        det.insert(
            format!("{i:06}"),
            synth::noisy_detections(&mut rng, &scene, 1242.0, 375.0, 3.0, registry.len()),
        );
        gt.insert(format!("{i:06}"), scene);
    }

    let report = evaluate(&gt, &det, &registry);
    for c in &report.categories {
        println!(
            "{:<10} gt {:>4}  det {:>4}  AP@0.5 {:.3}  AP@0.75 {:.3}  AP {:.3}",
            c.name.as_deref().unwrap_or("?"),
            c.n_gt,
            c.n_det,
            c.ap_per_threshold[0],
            c.ap_per_threshold[5],
            c.ap
        );
    }
    println!("mAP@0.5  {:.4}", report.map.unwrap_or(0.0));
    println!("mAP3@0.5 {:.4}", report.map3.unwrap_or(0.0));

    let perfect = evaluate(&gt, &gt_with_confidence(&gt), &registry);
    println!(
        "detections equal to ground truth: mAP@0.5 {:.4}",
        perfect.map.unwrap_or(0.0)
    );
}

fn gt_with_confidence(gt: &DetectionSet) -> DetectionSet {
    gt.iter()
        .map(|(k, v)| {
            (
                k.clone(),
                v.iter().map(|s| s.clone().with_confidence(0.9).unwrap()).collect(),
            )
        })
        .collect()
}
