//! Command-line front end.
//!
//! Every command prints a plain-text report. With `--out DIR` the numbers
//! behind it are also written to CSV files in `DIR` (created if missing).
//! Exit status: 0 on success, 1 for invalid input, 2 for degenerate or empty
//! data, 64 for usage errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::acl::{acl, sim_angle, sim_center, sim_length};
use crate::error::{Error, Result};
use crate::eval::{evaluate, overlap_thresholds, EvalReport, RECALL_POINTS};
use crate::geometry3d::{triplet_projection_error, Observation, Triplet};
use crate::io::{self, AnnotationSet};
use crate::lcd::{
    build_index, detect_loops, FrameSignature, LoopGroundTruth, RansacParams, VoteParams, PRECISION_LEVELS,
};
use crate::refine::{gradient_candidates, refine_labels, CandidateParams, REFINE_THRESHOLD};
use crate::repeatability::{mare, repeatability, RepeatPair, REPEAT_THRESHOLDS};
use crate::segment::{CategoryRegistry, SemLs};
use crate::selfcheck::run_losscheck;

/// Exit status for command-line usage errors.
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "semls", version, about = "Semantic line segment evaluation toolkit")]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// TOML file overriding default parameters.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory receiving CSV outputs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// ACL of each segment pair in a pairs file.
    Acl {
        #[arg(long)]
        pairs: PathBuf,
    },
    /// mAP@0.5 and mAP3@0.5 of detections against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        det: PathBuf,
    },
    /// Repeatability under known affine warps.
    Repeat {
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        warped: PathBuf,
        #[arg(long)]
        transforms: PathBuf,
        /// Ignore categories when matching.
        #[arg(long)]
        agnostic: bool,
    },
    /// Snap labels onto gradient-supported candidates.
    Refine(RefineArgs),
    /// Triplet projection error of tracked labels.
    Projerr {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long)]
        triplets: PathBuf,
    },
    /// Loop closure detection and recall at precision.
    Lcd {
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        /// Ground-truth loop distance in meters.
        #[arg(long)]
        d_loop: Option<f64>,
    },
    /// Per-category label counts.
    Stats {
        #[arg(long)]
        annotations: PathBuf,
    },
    /// Numerical checks of the detector losses, decoder and BAM.
    Losscheck,
}

#[derive(Debug, Args)]
struct RefineArgs {
    #[arg(long)]
    labels: PathBuf,
    /// Grayscale PGM to extract candidates from.
    #[arg(long, conflicts_with = "candidates", required_unless_present = "candidates")]
    image: Option<PathBuf>,
    /// Image the PGM belongs to; needed when the labels file has several.
    #[arg(long, requires = "image")]
    image_id: Option<String>,
    /// Precomputed candidates instead of an image.
    #[arg(long)]
    candidates: Option<PathBuf>,
    /// Where to write the refined labels (default: `<out>/refined.jsonl`).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct Config {
    /// Category names in index order; replaces the default registry.
    categories: Option<Vec<String>>,
    lcd: LcdConfig,
    refine: RefineConfig,
    repeat: RepeatConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct LcdConfig {
    tau_alpha: Option<f64>,
    tau_center: Option<f64>,
    tau_length: Option<f64>,
    top_k: Option<usize>,
    iterations: Option<usize>,
    inlier_radius: Option<f64>,
    scale_min: Option<f64>,
    scale_max: Option<f64>,
    d_loop: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RefineConfig {
    threshold: Option<f64>,
    rho: Option<f64>,
    tau_deg: Option<f64>,
    min_len: Option<f64>,
    max_rms: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RepeatConfig {
    category_agnostic: Option<bool>,
}

impl Config {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1),
            msg: e.message().to_string(),
        })
    }

    fn registry(&self) -> Result<CategoryRegistry> {
        match &self.categories {
            Some(names) => CategoryRegistry::from_names(names),
            None => Ok(CategoryRegistry::default()),
        }
    }

    fn vote(&self) -> VoteParams {
        let d = VoteParams::default();
        VoteParams {
            tau_alpha: self.lcd.tau_alpha.unwrap_or(d.tau_alpha),
            tau_center: self.lcd.tau_center.unwrap_or(d.tau_center),
            tau_length: self.lcd.tau_length.unwrap_or(d.tau_length),
            top_k: self.lcd.top_k.unwrap_or(d.top_k),
        }
    }

    fn ransac(&self, seed: u64) -> RansacParams {
        let d = RansacParams::default();
        RansacParams {
            iterations: self.lcd.iterations.unwrap_or(d.iterations),
            inlier_radius: self.lcd.inlier_radius.unwrap_or(d.inlier_radius),
            scale_range: (
                self.lcd.scale_min.unwrap_or(d.scale_range.0),
                self.lcd.scale_max.unwrap_or(d.scale_range.1),
            ),
            seed,
        }
    }

    fn candidates(&self) -> CandidateParams {
        let d = CandidateParams::default();
        CandidateParams {
            rho: self.refine.rho.unwrap_or(d.rho),
            tau_deg: self.refine.tau_deg.unwrap_or(d.tau_deg),
            min_len: self.refine.min_len.unwrap_or(d.min_len),
            max_rms: self.refine.max_rms.unwrap_or(d.max_rms),
        }
    }
}

struct Ctx<'a, W: Write> {
    seed: u64,
    out_dir: Option<PathBuf>,
    config: Config,
    registry: CategoryRegistry,
    stdout: &'a mut W,
}

impl<W: Write> Ctx<'_, W> {
    fn csv<S: Serialize>(&self, name: &str, rows: &[S]) -> Result<()> {
        match &self.out_dir {
            Some(dir) => io::write_csv(&dir.join(name), rows),
            None => Ok(()),
        }
    }
}

/// Parses `args` (program name first) and runs the command, writing the
/// report to `stdout` and diagnostics to `stderr`. Returns the exit status.
pub fn run<I, T, W, E>(args: I, stdout: &mut W, stderr: &mut E) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
    W: Write,
    E: Write,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    0
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

/// [`run`] on the process's standard streams.
pub fn run_command<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run(args, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

fn dispatch<W: Write>(cli: Cli, stdout: &mut W) -> Result<i32> {
    let config = Config::load(cli.config.as_deref())?;
    let registry = config.registry()?;
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir)?;
    }
    let mut ctx = Ctx {
        seed: cli.seed,
        out_dir: cli.out,
        config,
        registry,
        stdout,
    };
    match cli.command {
        Command::Acl { pairs } => cmd_acl(&mut ctx, &pairs),
        Command::Eval { gt, det } => cmd_eval(&mut ctx, &gt, &det),
        Command::Repeat {
            dets,
            warped,
            transforms,
            agnostic,
        } => cmd_repeat(&mut ctx, &dets, &warped, &transforms, agnostic),
        Command::Refine(args) => cmd_refine(&mut ctx, &args),
        Command::Projerr {
            annotations,
            calibration,
            triplets,
        } => cmd_projerr(&mut ctx, &annotations, &calibration, &triplets),
        Command::Lcd {
            query,
            db,
            poses,
            d_loop,
        } => cmd_lcd(&mut ctx, &query, &db, &poses, d_loop),
        Command::Stats { annotations } => cmd_stats(&mut ctx, &annotations),
        Command::Losscheck => cmd_losscheck(&mut ctx),
    }
}

#[derive(Serialize)]
struct AclRow {
    index: usize,
    acl: f64,
    sim_angle: f64,
    sim_center: f64,
    sim_length: f64,
}

fn cmd_acl<W: Write>(ctx: &mut Ctx<W>, path: &Path) -> Result<i32> {
    let pairs = io::load_pairs(path, &ctx.registry)?;
    let mut rows = Vec::with_capacity(pairs.len());
    for (index, (a, b, agnostic)) in pairs.iter().enumerate() {
        let v = acl(a, b, *agnostic).value();
        writeln!(ctx.stdout, "{v:?}")?;
        rows.push(AclRow {
            index,
            acl: v,
            sim_angle: sim_angle(a, b),
            sim_center: sim_center(a, b),
            sim_length: sim_length(a, b),
        });
    }
    ctx.csv("acl.csv", &rows)?;
    Ok(0)
}

#[derive(Serialize)]
struct ApRow<'a> {
    kind: &'a str,
    category: String,
    n_gt: usize,
    n_det: usize,
    threshold: f64,
    ap: f64,
}

#[derive(Serialize)]
struct PrRow<'a> {
    kind: &'a str,
    category: String,
    threshold: f64,
    recall: f64,
    precision: f64,
}

fn report_eval<W: Write>(
    ctx: &mut Ctx<W>,
    kind: &'static str,
    r: &EvalReport,
    ap_rows: &mut Vec<ApRow<'static>>,
    pr_rows: &mut Vec<PrRow<'static>>,
) -> Result<()> {
    let ths = overlap_thresholds();
    writeln!(ctx.stdout, "{kind}")?;
    writeln!(
        ctx.stdout,
        "{:<12} {:>6} {:>6} {:>8} {:>8}",
        "category", "gt", "det", "AP@0.5", "AP"
    )?;
    for c in &r.categories {
        let name = c.name.clone().unwrap_or_else(|| format!("#{}", c.category));
        writeln!(
            ctx.stdout,
            "{:<12} {:>6} {:>6} {:>8.4} {:>8.4}",
            name, c.n_gt, c.n_det, c.ap_per_threshold[0], c.ap
        )?;
        for (ti, &th) in ths.iter().enumerate() {
            ap_rows.push(ApRow {
                kind,
                category: name.clone(),
                n_gt: c.n_gt,
                n_det: c.n_det,
                threshold: th,
                ap: c.ap_per_threshold[ti],
            });
            if let Some(curve) = c.pr_curves.get(ti) {
                for (i, &p) in curve.iter().enumerate() {
                    pr_rows.push(PrRow {
                        kind,
                        category: name.clone(),
                        threshold: th,
                        recall: i as f64 / (RECALL_POINTS - 1) as f64,
                        precision: p,
                    });
                }
            }
        }
    }
    let show = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    writeln!(ctx.stdout, "mAP@0.5  {}", show(r.map))?;
    writeln!(ctx.stdout, "mAP3@0.5 {}", show(r.map3))?;
    Ok(())
}

fn cmd_eval<W: Write>(ctx: &mut Ctx<W>, gt_path: &Path, det_path: &Path) -> Result<i32> {
    let gt = io::load_annotations(gt_path, &ctx.registry)?;
    let det = io::load_annotations(det_path, &ctx.registry)?;
    let seg = evaluate(&gt.segments_by_image(), &det.segments_by_image(), &ctx.registry);
    let has_boxes = gt.images.iter().any(|i| !i.boxes.is_empty());
    let boxes = if has_boxes {
        Some(evaluate(&gt.boxes_by_image(), &det.boxes_by_image(), &ctx.registry))
    } else {
        None
    };
    if seg.empty_ground_truth && !has_boxes {
        writeln!(ctx.stdout, "ground truth is empty: nothing to evaluate")?;
        return Ok(2);
    }
    let (mut ap_rows, mut pr_rows) = (Vec::new(), Vec::new());
    report_eval(ctx, "segments", &seg, &mut ap_rows, &mut pr_rows)?;
    if let Some(b) = &boxes {
        report_eval(ctx, "boxes", b, &mut ap_rows, &mut pr_rows)?;
    }
    ctx.csv("eval_ap.csv", &ap_rows)?;
    ctx.csv("eval_pr.csv", &pr_rows)?;
    Ok(0)
}

#[derive(Serialize)]
struct RepeatRow {
    image_id: String,
    threshold: f64,
    re: f64,
}

fn cmd_repeat<W: Write>(
    ctx: &mut Ctx<W>,
    dets: &Path,
    warped: &Path,
    transforms: &Path,
    agnostic: bool,
) -> Result<i32> {
    let agnostic = agnostic || ctx.config.repeat.category_agnostic.unwrap_or(false);
    let a = io::load_annotations(dets, &ctx.registry)?.segments_by_image();
    let b = io::load_annotations(warped, &ctx.registry)?.segments_by_image();
    let ts = io::load_transforms(transforms)?;
    let mut pairs = Vec::new();
    let mut ids = Vec::new();
    for (id, t) in &ts {
        let (Some(di), Some(dt)) = (a.get(id), b.get(id)) else {
            return Err(Error::validation(format!(
                "image `{id}` is missing from the detection files"
            )));
        };
        ids.push(id.clone());
        pairs.push(RepeatPair {
            dets_i: di.clone(),
            dets_it: dt.clone(),
            transform: *t,
        });
    }
    let report = mare(&pairs, agnostic)?;
    let mut rows = Vec::new();
    for (id, p) in ids.iter().zip(&pairs) {
        for th in REPEAT_THRESHOLDS {
            rows.push(RepeatRow {
                image_id: id.clone(),
                threshold: th,
                re: repeatability(&p.dets_i, &p.dets_it, &p.transform, th, agnostic)?,
            });
        }
    }
    writeln!(ctx.stdout, "{} image pairs", pairs.len())?;
    for (th, re) in report.thresholds.iter().zip(&report.re) {
        writeln!(ctx.stdout, "Re@{th:.1} {re:.4}")?;
    }
    writeln!(ctx.stdout, "mARe   {:.4}", report.mare)?;
    ctx.csv("repeat.csv", &rows)?;
    Ok(0)
}

#[derive(Serialize)]
struct RefineRow {
    image_id: String,
    index: usize,
    acl: f64,
    moved: f64,
}

fn cmd_refine<W: Write>(ctx: &mut Ctx<W>, args: &RefineArgs) -> Result<i32> {
    let threshold = ctx.config.refine.threshold.unwrap_or(REFINE_THRESHOLD);
    let mut set = io::load_annotations(&args.labels, &ctx.registry)?;
    let candidates = match (&args.image, &args.candidates) {
        (Some(img_path), _) => {
            let img = io::read_pgm(img_path)?;
            let id = match &args.image_id {
                Some(id) => id.clone(),
                None if set.images.len() == 1 => set.images[0].image_id.clone(),
                None => {
                    return Err(Error::validation(
                        "--image-id is required when the labels cover several images",
                    ))
                }
            };
            if set.image(&id).is_none() {
                return Err(Error::validation(format!("image `{id}` has no labels")));
            }
            BTreeMap::from([(id, gradient_candidates(&img, &ctx.config.candidates()))])
        }
        (None, Some(path)) => io::load_candidates(path)?,
        (None, None) => return Err(Error::validation("either --image or --candidates is required")),
    };
    let (mut replaced, mut kept) = (0, 0);
    let mut rows = Vec::new();
    for img in &mut set.images {
        let Some(cands) = candidates.get(&img.image_id) else {
            kept += img.segments.len();
            continue;
        };
        let (refined, report) = refine_labels(&img.segments, cands, threshold);
        replaced += report.replaced;
        kept += report.kept;
        rows.extend(report.changes.iter().map(|c| RefineRow {
            image_id: img.image_id.clone(),
            index: c.index,
            acl: c.acl,
            moved: c.moved,
        }));
        img.segments = refined;
    }
    writeln!(ctx.stdout, "replaced {replaced}")?;
    writeln!(ctx.stdout, "kept     {kept}")?;
    for r in &rows {
        writeln!(
            ctx.stdout,
            "  {} #{}: acl {:.4}, moved {:.3} px",
            r.image_id, r.index, r.acl, r.moved
        )?;
    }
    let dest = args
        .output
        .clone()
        .or_else(|| ctx.out_dir.as_ref().map(|d| d.join("refined.jsonl")));
    if let Some(dest) = dest {
        io::save_annotations(&dest, &set, &ctx.registry)?;
    }
    ctx.csv("refine.csv", &rows)?;
    Ok(0)
}

#[derive(Serialize)]
struct ProjRow {
    left: String,
    pre: String,
    right: String,
    track_id: i64,
    error: Option<f64>,
}

fn tracked(set: &AnnotationSet, id: &str) -> Result<BTreeMap<i64, SemLs>> {
    let img = set
        .image(id)
        .ok_or_else(|| Error::validation(format!("image `{id}` is missing from the annotations")))?;
    let mut out = BTreeMap::new();
    for s in &img.segments {
        if let Some(t) = s.track_id {
            if out.insert(t, s.clone()).is_some() {
                return Err(Error::validation(format!("track id {t} appears twice in image `{id}`")));
            }
        }
    }
    Ok(out)
}

fn cmd_projerr<W: Write>(ctx: &mut Ctx<W>, annotations: &Path, calibration: &Path, triplets: &Path) -> Result<i32> {
    let set = io::load_annotations(annotations, &ctx.registry)?;
    let views = io::load_calibration(calibration)?;
    let view = |id: &str| {
        views
            .get(id)
            .cloned()
            .ok_or_else(|| Error::validation(format!("image `{id}` has no calibration")))
    };
    let mut all = Vec::new();
    let mut names = Vec::new();
    for rec in io::load_triplets(triplets)? {
        let (lv, pv, rv) = (view(&rec.left)?, view(&rec.pre)?, view(&rec.right)?);
        let (l, p, r) = (
            tracked(&set, &rec.left)?,
            tracked(&set, &rec.pre)?,
            tracked(&set, &rec.right)?,
        );
        for (tid, ls) in &l {
            let (Some(ps), Some(rs)) = (p.get(tid), r.get(tid)) else {
                continue;
            };
            let obs = |v: &crate::geometry3d::CameraView, s: &SemLs| Observation {
                view: *v,
                segment: s.clone(),
            };
            all.push(Triplet::new(obs(&lv, ls), obs(&pv, ps), obs(&rv, rs))?);
            names.push(rec.clone());
        }
    }
    let report = triplet_projection_error(&all)?;
    writeln!(ctx.stdout, "triplets   {}", all.len())?;
    writeln!(ctx.stdout, "degenerate {}", report.degenerate)?;
    writeln!(ctx.stdout, "mean error {:.6} px", report.mean)?;
    let rows: Vec<ProjRow> = report
        .per_triplet
        .iter()
        .zip(&names)
        .map(|(t, n)| ProjRow {
            left: n.left.clone(),
            pre: n.pre.clone(),
            right: n.right.clone(),
            track_id: t.track_id,
            error: t.error,
        })
        .collect();
    ctx.csv("projerr.csv", &rows)?;
    Ok(0)
}

fn signatures(set: &AnnotationSet, poses: &BTreeMap<String, [f64; 3]>) -> Result<Vec<FrameSignature>> {
    set.images
        .iter()
        .map(|i| {
            FrameSignature::from_segments(
                i.image_id.clone(),
                &i.segments,
                i.width as f64,
                i.height as f64,
                poses.get(&i.image_id).copied(),
            )
        })
        .collect()
}

#[derive(Serialize)]
struct LevelRow {
    precision: f64,
    recall: f64,
}

fn cmd_lcd<W: Write>(ctx: &mut Ctx<W>, query: &Path, db: &Path, poses: &Path, d_loop: Option<f64>) -> Result<i32> {
    let d_loop = d_loop.or(ctx.config.lcd.d_loop).unwrap_or(10.0);
    let poses = io::load_poses(poses)?;
    let queries = signatures(&io::load_annotations(query, &ctx.registry)?, &poses)?;
    let index = build_index(signatures(&io::load_annotations(db, &ctx.registry)?, &poses)?)?;
    let gt = LoopGroundTruth::from_poses(&queries, &index, d_loop)?;
    let matches = detect_loops(&queries, &index, &ctx.config.vote(), &ctx.config.ransac(ctx.seed))?;
    let outcomes = gt.outcomes(&matches);
    let report = crate::lcd::recall_at_precision(&outcomes, &PRECISION_LEVELS)?;
    let loops = outcomes.iter().filter(|o| o.has_loop).count();
    writeln!(
        ctx.stdout,
        "queries {} ({} with a true loop), database frames {}",
        queries.len(),
        loops,
        index.frames().len()
    )?;
    let levels: Vec<LevelRow> = report
        .levels
        .iter()
        .map(|&(precision, recall)| LevelRow { precision, recall })
        .collect();
    for l in &levels {
        writeln!(ctx.stdout, "R@P{:.2} {:.4}", l.precision, l.recall)?;
    }
    ctx.csv("lcd_matches.csv", &matches)?;
    ctx.csv("lcd_recall.csv", &levels)?;
    ctx.csv("roc.csv", &report.roc)?;
    Ok(0)
}

#[derive(Serialize)]
struct StatsRow {
    category: String,
    count: usize,
}

fn cmd_stats<W: Write>(ctx: &mut Ctx<W>, annotations: &Path) -> Result<i32> {
    let set = io::load_annotations(annotations, &ctx.registry)?;
    let s = io::dataset_stats(&set, &ctx.registry)?;
    writeln!(ctx.stdout, "{:<12} {:>8}", "category", "labels")?;
    for (name, n) in &s.per_category {
        writeln!(ctx.stdout, "{name:<12} {n:>8}")?;
    }
    writeln!(ctx.stdout, "{:<12} {:>8}", "total", s.total)?;
    writeln!(ctx.stdout, "{:<12} {:>8}", "images", s.images)?;
    writeln!(ctx.stdout, "{:<12} {:>8.2}", "labels/image", s.labels_per_image)?;
    let rows: Vec<StatsRow> = s
        .per_category
        .iter()
        .map(|(c, n)| StatsRow {
            category: c.clone(),
            count: *n,
        })
        .collect();
    ctx.csv("stats.csv", &rows)?;
    Ok(0)
}

fn cmd_losscheck<W: Write>(ctx: &mut Ctx<W>) -> Result<i32> {
    let results = run_losscheck(ctx.seed);
    for r in &results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        writeln!(ctx.stdout, "{tag} {:<18} {}", r.name, r.detail)?;
    }
    ctx.csv("losscheck.csv", &results)?;
    Ok(if results.iter().all(|r| r.passed) { 0 } else { 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let mut argv = vec!["semls"];
        argv.extend_from_slice(args);
        let code = run(argv, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn unknown_command_is_usage_error() {
        let (code, _, err) = call(&["frobnicate"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("Usage"), "{err}");
        assert_eq!(call(&[]).0, EXIT_USAGE);
    }

    #[test]
    fn help_exits_zero() {
        let (code, out, _) = call(&["--help"]);
        assert_eq!(code, 0);
        for c in [
            "acl",
            "eval",
            "repeat",
            "refine",
            "projerr",
            "lcd",
            "stats",
            "losscheck",
        ] {
            assert!(out.contains(c), "{c}");
        }
    }

    #[test]
    fn acl_on_identical_pair_prints_one() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("p.jsonl");
        fs::write(
            &f,
            r#"{"reference":{"x1":0,"y1":0,"x2":10,"y2":0,"category":"pole"},"other":{"x1":0,"y1":0,"x2":10,"y2":0,"category":"pole"}}
{"reference":{"x1":0,"y1":0,"x2":10,"y2":0,"category":"pole"},"other":{"x1":2,"y1":0,"x2":10,"y2":0,"category":"pole"}}
"#,
        )
        .unwrap();
        let (code, out, _) = call(&["acl", "--pairs", f.to_str().unwrap()]);
        assert_eq!(code, 0);
        let vals: Vec<f64> = out.lines().map(|l| l.parse().unwrap()).collect();
        assert_eq!(vals[0], 1.0);
        assert!((vals[1] - 0.64).abs() < 1e-12);
        assert_eq!(out.lines().next(), Some("1.0"));
    }

    #[test]
    fn missing_file_is_exit_one() {
        let (code, _, err) = call(&["stats", "--annotations", "/nonexistent/x.jsonl"]);
        assert_eq!(code, 1);
        assert!(err.starts_with("error:"));
    }

    #[test]
    fn empty_ground_truth_is_exit_two() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("e.jsonl");
        fs::write(&f, "{\"image_id\":\"a\",\"width\":10,\"height\":10,\"segments\":[]}\n").unwrap();
        let p = f.to_str().unwrap();
        assert_eq!(call(&["eval", "--gt", p, "--det", p]).0, 2);
    }

    #[test]
    fn config_overrides_and_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.toml");
        fs::write(
            &good,
            "categories = [\"a\", \"b\"]\n[lcd]\ntau_alpha = 5.0\nd_loop = 3.0\n",
        )
        .unwrap();
        let c = Config::load(Some(&good)).unwrap();
        assert_eq!(c.vote().tau_alpha, 5.0);
        assert_eq!(c.vote().top_k, VoteParams::default().top_k);
        assert_eq!(c.registry().unwrap().names(), ["a", "b"]);
        let bad = dir.path().join("bad.toml");
        fs::write(&bad, "[lcd]\ntau_alhpa = 5.0\n").unwrap();
        assert!(matches!(Config::load(Some(&bad)), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn reruns_write_identical_files() {
        let dir = tempfile::tempdir().unwrap();
        let fx = crate::synth::write_fixtures(&dir.path().join("fx"), 2).unwrap();
        let s = |p: &Path| p.to_str().unwrap().to_owned();
        let outputs: Vec<Vec<(String, Vec<u8>)>> = ["a", "b"]
            .iter()
            .map(|name| {
                let out = s(&dir.path().join(name));
                let lcd = [
                    "lcd",
                    "--query",
                    &s(&fx.lcd_query),
                    "--db",
                    &s(&fx.lcd_database),
                    "--poses",
                    &s(&fx.poses),
                ];
                let refine = ["refine", "--labels", &s(&fx.labels), "--image", &s(&fx.image)];
                for cmd in [&lcd[..], &refine[..], &["losscheck"][..]] {
                    let mut args = cmd.to_vec();
                    args.extend(["--seed", "5", "--out", &out]);
                    assert_eq!(call(&args).0, 0);
                }
                let mut files: Vec<_> = fs::read_dir(&out)
                    .unwrap()
                    .map(|e| {
                        let p = e.unwrap().path();
                        (
                            p.file_name().unwrap().to_string_lossy().into_owned(),
                            fs::read(&p).unwrap(),
                        )
                    })
                    .collect();
                files.sort();
                files
            })
            .collect();
        assert!(outputs[0].len() >= 6);
        assert_eq!(outputs[0], outputs[1]);
    }

    #[test]
    fn eval_on_identical_files_is_perfect() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("gt.jsonl");
        fs::write(
            &f,
            r#"{"image_id":"a","width":100,"height":100,"segments":[{"x1":1,"y1":1,"x2":50,"y2":60,"category":"pole","score":0.9},{"x1":10,"y1":90,"x2":90,"y2":92,"category":"curb","score":0.8}]}
"#,
        )
        .unwrap();
        let p = f.to_str().unwrap();
        let (code, out, _) = call(&["eval", "--gt", p, "--det", p]);
        assert_eq!(code, 0);
        assert!(out.contains("mAP@0.5  1.0000"), "{out}");
        assert!(out.contains("mAP3@0.5 1.0000"), "{out}");
    }
}
