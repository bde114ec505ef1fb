//! ACL between segment pairs, and why box IoU is not enough for segments.

use semls::acl::{acl, equal_iou_cases, sim_angle, sim_center, sim_length};
use semls::segment::SemLs;

fn main() -> semls::Result<()> {
    let reference = SemLs::from_coords(0.0, 0.0, 10.0, 0.0, 0)?;
    let other = SemLs::from_coords(2.0, 0.0, 10.0, 0.0, 0)?;
    println!(
        "angle {:.3}  center {:.3}  length {:.3}  ->  acl {:.3}",
        sim_angle(&reference, &other),
        sim_center(&reference, &other),
        sim_length(&reference, &other),
        acl(&reference, &other, false).value()
    );

    let relabeled = SemLs::from_coords(2.0, 0.0, 10.0, 0.0, 1)?;
    println!("other category: {}", acl(&reference, &relabeled, false).value());
    println!("category agnostic: {:.3}", acl(&reference, &relabeled, true).value());

    println!("\nsame box IoU, different segments:");
    println!(
        "{:<8} {:<8} {:<8} {:>8} {:>8}",
        "angle", "center", "length", "box IoU", "ACL"
    );
    for case in equal_iou_cases(0.6) {
        let p = case.pattern;
        println!(
            "{:<8} {:<8} {:<8} {:>8.4} {:>8.4}",
            p.angle_differs,
            p.center_differs,
            p.length_differs,
            case.box_iou(),
            case.acl()
        );
    }
    Ok(())
}
