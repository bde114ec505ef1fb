//! Training targets, losses and decoding for the center-point detector heads.

use ndarray::Array3;
use semls::detector::{
    decode_detections, make_targets, total_loss, DecodeParams, DirectionMode, Encoding, Heads, LossWeights,
};
use semls::segment::{encode_general, SemLs};

fn main() -> semls::Result<()> {
    let segs = [
        SemLs::from_coords(12.0, 10.0, 80.0, 44.0, 0)?,
        SemLs::from_coords(100.0, 90.0, 104.0, 20.0, 1)?,
        SemLs::from_coords(20.0, 110.0, 110.0, 100.0, 2)?,
    ];
    let anns: Vec<_> = segs.iter().map(encode_general).collect();
    let targets = make_targets(&anns, 3, 128, 128, 4)?;
    println!("feature map {:?}, {} objects", targets.feature_dims(), targets.count);

    let enc = Encoding::LineAsObj;
    let mode = DirectionMode::Classification;
    let ideal = Heads::ideal(&targets, enc, mode);
    let w = LossWeights::default();
    println!("ideal heads: {:?}", total_loss(&ideal, &targets, &w, enc, mode)?);

    let mut blurred = ideal.clone();
    blurred.heatmap = blurred.heatmap.mapv(|v| 0.2 + 0.6 * v);
    blurred.offset = &blurred.offset + &Array3::from_elem(blurred.offset.raw_dim(), 0.1);
    let b = total_loss(&blurred, &targets, &w, enc, mode)?;
    println!(
        "perturbed heads: heatmap {:.4}, offset {:.4}, total {:.4}",
        b.heatmap, b.offset, b.total
    );

    let params = DecodeParams {
        encoding: enc,
        direction_mode: mode,
        ..DecodeParams::default()
    };
    for d in decode_detections(&ideal, &params)? {
        let [a, b] = d.endpoints();
        println!(
            "decoded k={} ({:.1},{:.1})-({:.1},{:.1}) conf {:.2}",
            d.category,
            a.x,
            a.y,
            b.x,
            b.y,
            d.confidence.unwrap_or(0.0)
        );
    }
    Ok(())
}
