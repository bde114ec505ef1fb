//! Snapping a drifted label onto the image edge it belongs to.

use semls::refine::{gradient_candidates, refine_labels, CandidateParams, REFINE_THRESHOLD};
use semls::segment::SemLs;
use semls::synth;

fn main() -> semls::Result<()> {
    // bright block whose left edge runs along x = 100
    let img = synth::rectangle_image(200, 200, 100..200, 50..150);
    let candidates = gradient_candidates(&img, &CandidateParams::default());
    for c in &candidates {
        println!(
            "candidate ({:.2},{:.2})-({:.2},{:.2}) support {} rms {:.3}",
            c.p1.x, c.p1.y, c.p2.x, c.p2.y, c.support, c.rms
        );
    }

    let labels = [
        SemLs::from_coords(101.0, 50.0, 101.0, 150.0, 0)?,
        SemLs::from_coords(30.0, 20.0, 70.0, 35.0, 1)?,
    ];
    let (refined, report) = refine_labels(&labels, &candidates, REFINE_THRESHOLD);
    println!("replaced {}, kept {}", report.replaced, report.kept);
    for (before, after) in labels.iter().zip(&refined) {
        println!("{:?} -> {:?}", before.endpoints(), after.endpoints());
    }
    Ok(())
}
