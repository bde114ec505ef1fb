//! Seeded synthetic data for examples, self-checks and command fixtures.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry3d::SyntheticRig;
use crate::io::{self, AnnotatedImage, AnnotationSet, PairRecord, PoseRecord, SegmentRecord, TripletRecord};
use crate::lcd::{FrameSignature, SignatureSegment};
use crate::refine::GrayImage;
use crate::repeatability::{sample_affine, transform_segments, AffineSampling, DEFAULT_MIN_LEN};
use crate::segment::{CategoryRegistry, Point, SemLs};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A segment inside `[0, w] x [0, h]` at least `min_len` long.
pub fn random_segment<R: Rng>(rng: &mut R, w: f64, h: f64, min_len: f64, category: usize) -> SemLs {
    loop {
        let a = Point::new(rng.random_range(0.0..w), rng.random_range(0.0..h));
        let b = Point::new(rng.random_range(0.0..w), rng.random_range(0.0..h));
        if a.distance(&b) >= min_len {
            return SemLs::new(a, b, category).expect("distinct endpoints");
        }
    }
}

/// `n` random segments with categories drawn from `0..num_categories`.
pub fn random_scene<R: Rng>(rng: &mut R, w: f64, h: f64, n: usize, num_categories: usize) -> Vec<SemLs> {
    (0..n)
        .map(|_| {
            let k = rng.random_range(0..num_categories);
            random_segment(rng, w, h, 10.0, k)
        })
        .collect()
}

/// Segments whose centers fall in feature cells at least two cells apart,
/// so that every one survives 3x3 peak extraction after target encoding.
pub fn separated_scene<R: Rng>(
    rng: &mut R,
    width: usize,
    height: usize,
    stride: usize,
    n: usize,
    num_categories: usize,
) -> Vec<SemLs> {
    let (w, h) = (width as f64, height as f64);
    let mut cells: Vec<(i64, i64)> = Vec::new();
    let mut out = Vec::new();
    let mut attempts = 0;
    while out.len() < n && attempts < 100 * n {
        attempts += 1;
        let k = rng.random_range(0..num_categories);
        let s = random_segment(rng, w - 1.0, h - 1.0, 8.0, k);
        let c = s.center();
        let cell = (
            (c.x / stride as f64).floor() as i64,
            (c.y / stride as f64).floor() as i64,
        );
        if cells
            .iter()
            .all(|o| (o.0 - cell.0).abs().max((o.1 - cell.1).abs()) >= 2)
        {
            cells.push(cell);
            out.push(s);
        }
    }
    out
}

/// Detections derived from ground truth: endpoints jittered by up to
/// `jitter` px, some labels dropped and random false positives added.
pub fn noisy_detections<R: Rng>(
    rng: &mut R,
    gt: &[SemLs],
    w: f64,
    h: f64,
    jitter: f64,
    num_categories: usize,
) -> Vec<SemLs> {
    let mut out = Vec::new();
    for s in gt {
        if rng.random_bool(0.15) {
            continue;
        }
        let [a, b] = s.endpoints();
        let mut j = |p: Point| {
            Point::new(
                (p.x + rng.random_range(-jitter..=jitter)).clamp(0.0, w),
                (p.y + rng.random_range(-jitter..=jitter)).clamp(0.0, h),
            )
        };
        let (a, b) = (j(a), j(b));
        if let Ok(d) = s.with_geometry(a, b) {
            let conf = rng.random_range(0.5..1.0);
            out.push(d.with_confidence(conf).expect("in range"));
        }
    }
    for _ in 0..gt.len() / 4 + 1 {
        let k = rng.random_range(0..num_categories);
        let conf = rng.random_range(0.3..0.9);
        out.push(
            random_segment(rng, w, h, 10.0, k)
                .with_confidence(conf)
                .expect("in range"),
        );
    }
    out
}

/// Dark background with a bright axis-aligned rectangle.
pub fn rectangle_image(width: usize, height: usize, x: std::ops::Range<usize>, y: std::ops::Range<usize>) -> GrayImage {
    GrayImage::from_fn(
        width,
        height,
        |px, py| if x.contains(&px) && y.contains(&py) { 200 } else { 40 },
    )
}

/// A database of places and queries revisiting some of them.
#[derive(Clone, Debug)]
pub struct LoopScene {
    pub database: Vec<FrameSignature>,
    pub queries: Vec<FrameSignature>,
}

fn place_layout<R: Rng>(rng: &mut R, n: usize) -> Vec<SignatureSegment> {
    (0..n)
        .map(|_| SignatureSegment {
            category: rng.random_range(0..4),
            alpha: rng.random_range(0.0..180.0),
            center: Point::new(rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)),
            length: rng.random_range(0.03..0.3),
        })
        .collect()
}

/// `places` database frames along a 20 m spaced route; each query either
/// revisits a place (small viewpoint change and jitter, some segments lost)
/// or shows an unseen place far from the route.
pub fn loop_scene(seed: u64, places: usize, queries: usize, revisit_rate: f64) -> LoopScene {
    let mut rng = rng(seed);
    let layouts: Vec<_> = (0..places)
        .map(|_| {
            let n = rng.random_range(8..20);
            place_layout(&mut rng, n)
        })
        .collect();
    let database = layouts
        .iter()
        .enumerate()
        .map(|(i, segs)| FrameSignature {
            frame_id: format!("db{i:04}"),
            segments: segs.clone(),
            pose: Some([20.0 * i as f64, 0.0, 0.0]),
        })
        .collect();
    let queries = (0..queries)
        .map(|qi| {
            let frame_id = format!("q{qi:04}");
            if rng.random_bool(revisit_rate) {
                let p = rng.random_range(0..places);
                let (dx, dy, s) = (
                    rng.random_range(-0.03..0.03),
                    rng.random_range(-0.03..0.03),
                    rng.random_range(0.95..1.05),
                );
                let mut segments = Vec::new();
                for g in &layouts[p] {
                    if !rng.random_bool(0.85) {
                        continue;
                    }
                    segments.push(SignatureSegment {
                        category: g.category,
                        alpha: (g.alpha + rng.random_range(-2.0..2.0)).rem_euclid(180.0),
                        center: Point::new(
                            0.5 + s * (g.center.x - 0.5) + dx + rng.random_range(-0.005..0.005),
                            0.5 + s * (g.center.y - 0.5) + dy + rng.random_range(-0.005..0.005),
                        ),
                        length: g.length * s * rng.random_range(0.95..1.05),
                    });
                }
                FrameSignature {
                    frame_id,
                    segments,
                    pose: Some([
                        20.0 * p as f64 + rng.random_range(-3.0..3.0),
                        rng.random_range(-3.0..3.0),
                        0.0,
                    ]),
                }
            } else {
                let n = rng.random_range(8..20);
                FrameSignature {
                    frame_id,
                    segments: place_layout(&mut rng, n),
                    pose: Some([20.0 * places as f64 + 1000.0 + 50.0 * qi as f64, 500.0, 0.0]),
                }
            }
        })
        .collect();
    LoopScene { database, queries }
}

/// Paths of the files written by [`write_fixtures`].
#[derive(Clone, Debug)]
pub struct Fixtures {
    pub dir: PathBuf,
    pub pairs: PathBuf,
    pub ground_truth: PathBuf,
    pub detections: PathBuf,
    pub warped_detections: PathBuf,
    pub transforms: PathBuf,
    pub labels: PathBuf,
    pub image: PathBuf,
    pub track_labels: PathBuf,
    pub calibration: PathBuf,
    pub triplets: PathBuf,
    pub lcd_query: PathBuf,
    pub lcd_database: PathBuf,
    pub poses: PathBuf,
}

fn signature_image(f: &FrameSignature, w: u32, h: u32) -> AnnotatedImage {
    let mut img = AnnotatedImage::new(f.frame_id.clone(), w, h);
    let diag = (w as f64).hypot(h as f64);
    for g in &f.segments {
        let (c, half) = (
            Point::new(g.center.x * w as f64, g.center.y * h as f64),
            0.5 * g.length * diag,
        );
        let (s, co) = g.alpha.to_radians().sin_cos();
        let a = Point::new(
            (c.x - half * co).clamp(0.0, w as f64),
            (c.y - half * s).clamp(0.0, h as f64),
        );
        let b = Point::new(
            (c.x + half * co).clamp(0.0, w as f64),
            (c.y + half * s).clamp(0.0, h as f64),
        );
        if let Ok(seg) = SemLs::new(a, b, g.category) {
            img.segments.push(seg);
        }
    }
    img
}

/// Writes a small input file for every command into `dir`.
pub fn write_fixtures(dir: &Path, seed: u64) -> Result<Fixtures> {
    fs::create_dir_all(dir)?;
    let reg = CategoryRegistry::default();
    let mut rng = rng(seed);
    let p = |name: &str| dir.join(name);
    let fx = Fixtures {
        dir: dir.to_path_buf(),
        pairs: p("pairs.jsonl"),
        ground_truth: p("gt.jsonl"),
        detections: p("det.jsonl"),
        warped_detections: p("det_warped.jsonl"),
        transforms: p("transforms.jsonl"),
        labels: p("labels.jsonl"),
        image: p("edge.pgm"),
        track_labels: p("tracks.jsonl"),
        calibration: p("calibration.jsonl"),
        triplets: p("triplets.jsonl"),
        lcd_query: p("lcd_query.jsonl"),
        lcd_database: p("lcd_db.jsonl"),
        poses: p("poses.jsonl"),
    };

    let rec = |s: &SemLs| {
        let [a, b] = s.endpoints();
        SegmentRecord {
            x1: a.x,
            y1: a.y,
            x2: b.x,
            y2: b.y,
            category: reg.name(s.category).expect("default category").to_owned(),
            score: None,
            track_id: None,
            d_g: None,
        }
    };
    let same = SemLs::from_coords(10.0, 10.0, 110.0, 60.0, 1)?;
    let shifted = SemLs::from_coords(14.0, 10.0, 114.0, 60.0, 1)?;
    let pairs = [
        PairRecord {
            reference: rec(&same),
            other: rec(&same),
            category_agnostic: false,
        },
        PairRecord {
            reference: rec(&same),
            other: rec(&shifted),
            category_agnostic: false,
        },
    ];
    io::write_jsonl(&fx.pairs, &pairs)?;

    let (w, h) = (640u32, 480u32);
    let mut gt = AnnotationSet::default();
    let mut det = AnnotationSet::default();
    let mut warped = AnnotationSet::default();
    let mut transforms = std::collections::BTreeMap::new();
    for i in 0..4 {
        let id = format!("img{i}");
        let segs = random_scene(&mut rng, w as f64, h as f64, 12, 4);
        let mut g = AnnotatedImage::new(id.clone(), w, h);
        g.segments = segs.clone();
        let mut d = AnnotatedImage::new(id.clone(), w, h);
        d.segments = noisy_detections(&mut rng, &segs, w as f64, h as f64, 2.0, 4);
        let t = sample_affine(rng.random(), &AffineSampling::default(), w as f64, h as f64)?;
        let mut dw = AnnotatedImage::new(id.clone(), w, h);
        let moved: Vec<SemLs> = transform_segments(&d.segments, &t, w as f64, h as f64, DEFAULT_MIN_LEN)
            .into_iter()
            .map(|ws| ws.segment)
            .collect();
        // re-detection in the warped image is imperfect too
        dw.segments = noisy_detections(&mut rng, &moved, w as f64, h as f64, 1.5, 4);
        transforms.insert(id, t);
        gt.images.push(g);
        det.images.push(d);
        warped.images.push(dw);
    }
    io::save_annotations(&fx.ground_truth, &gt, &reg)?;
    io::save_annotations(&fx.detections, &det, &reg)?;
    io::save_annotations(&fx.warped_detections, &warped, &reg)?;
    io::save_transforms(&fx.transforms, &transforms)?;

    let edge = rectangle_image(200, 200, 100..200, 50..150);
    io::write_pgm(&fx.image, &edge)?;
    let mut labels = AnnotatedImage::new("edge", 200, 200);
    labels
        .segments
        .push(SemLs::from_coords(101.0, 50.0, 101.0, 150.0, 0)?.with_track_id(1));
    labels.segments.push(SemLs::from_coords(20.0, 20.0, 60.0, 30.0, 1)?);
    io::save_annotations(&fx.labels, &AnnotationSet { images: vec![labels] }, &reg)?;

    let rig = SyntheticRig::default();
    let triplets = rig.triplets(20, 1.0, rng.random());
    let (lv, pv, rv) = rig.views();
    let (iw, ih) = (rig.width as u32, rig.height as u32);
    let mut imgs = [
        AnnotatedImage::new("left", iw, ih),
        AnnotatedImage::new("pre", iw, ih),
        AnnotatedImage::new("right", iw, ih),
    ];
    for t in &triplets {
        imgs[0].segments.push(t.left.segment.clone());
        imgs[1].segments.push(t.pre.segment.clone());
        imgs[2].segments.push(t.right.segment.clone());
    }
    io::save_annotations(&fx.track_labels, &AnnotationSet { images: imgs.to_vec() }, &reg)?;
    let views = [("left", lv), ("pre", pv), ("right", rv)]
        .map(|(k, v)| (k.to_owned(), v))
        .into_iter()
        .collect();
    io::save_calibration(&fx.calibration, &views)?;
    io::write_jsonl(
        &fx.triplets,
        &[TripletRecord {
            left: "left".into(),
            pre: "pre".into(),
            right: "right".into(),
        }],
    )?;

    let scene = loop_scene(rng.random(), 30, 20, 0.7);
    let to_set = |fs: &[FrameSignature]| AnnotationSet {
        images: fs.iter().map(|f| signature_image(f, w, h)).collect(),
    };
    io::save_annotations(&fx.lcd_database, &to_set(&scene.database), &reg)?;
    io::save_annotations(&fx.lcd_query, &to_set(&scene.queries), &reg)?;
    let poses: Vec<PoseRecord> = scene
        .database
        .iter()
        .chain(&scene.queries)
        .map(|f| PoseRecord {
            frame_id: f.frame_id.clone(),
            position: f.pose.expect("scene frames have poses"),
        })
        .collect();
    io::write_jsonl(&fx.poses, &poses)?;
    Ok(fx)
}
