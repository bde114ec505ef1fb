//! The two segment encodings and how they round-trip.

use semls::segment::{
    decode_angmidlen, decode_general, encode_angmidlen, encode_box, encode_general, ObjectBox, Point, SemLs,
};

fn main() -> semls::Result<()> {
    let segments = [
        SemLs::from_coords(10.0, 20.0, 90.0, 60.0, 0)?,
        SemLs::from_coords(10.0, 60.0, 90.0, 20.0, 1)?,
        SemLs::from_coords(50.0, 10.0, 50.0, 90.0, 1)?,
    ];
    for s in &segments {
        let a = encode_angmidlen(s)?;
        let g = encode_general(s);
        let (p1, p2) = decode_angmidlen(&a)?;
        println!("{:?} -> {:?}", s.endpoints(), (p1, p2));
        println!("  angle {:.2} deg, length {:.2}", a.alpha, a.len);
        println!(
            "  box {:.1}x{:.1} at ({:.1}, {:.1}), d_g {}",
            g.w,
            g.h,
            g.xc,
            g.yc,
            g.d_g()
        );
        println!("  decoded {:?}", decode_general(&g)?);
    }

    // plain objects share the general record with d_g = 2
    let b = ObjectBox::new(Point::new(5.0, 5.0), Point::new(25.0, 45.0), 3)?;
    let g = encode_box(&b);
    println!("box -> d_g {} -> {:?}", g.d_g(), decode_general(&g)?);
    Ok(())
}
