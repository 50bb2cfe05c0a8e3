//! Command-line front end. Every subcommand is a thin wrapper over one
//! library operation.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::blending::{poisson_blend_with, BlendRegion, GuidanceMode};
use crate::coco::validate_output_dir;
use crate::error::{Error, Result};
use crate::io;
use crate::matting::{solve_alpha, MattingParams};
use crate::outline::{
    default_jitter_radius, interior_anchor, jittered_samples, outline_to_polygon, ray_distances, Point, PolarOutline,
};
use crate::pool::{canonical_json, IngestParams, Pool};
use crate::raster::{make_trimap, ElementShape, StructuringElement};
use crate::solver::CgOptions;
use crate::synth::{synthesize, SynthParams};

pub const THREADS_ENV: &str = "SCENEFORGE_THREADS";

/// Every tunable, as read from `--config` and overridden by flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub directions: usize,
    pub trimap_shape: ElementShape,
    pub erode_radius: usize,
    pub dilate_radius: usize,
    pub window_radius: usize,
    pub epsilon: f64,
    pub tol: f64,
    pub max_iter: Option<usize>,
    pub incomplete_iou: f64,
    pub mode: GuidanceMode,
    pub region_alpha: f64,
    pub objects_min: usize,
    pub objects_max: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    pub margin: usize,
    pub seed: u64,
    /// 0 uses every available core.
    pub threads: usize,
}

impl Default for Config {
    fn default() -> Self {
        let ingest = IngestParams::default();
        let synth = SynthParams::default();
        Self {
            directions: ingest.directions,
            trimap_shape: ingest.trimap_erode.shape,
            erode_radius: ingest.trimap_erode.radius,
            dilate_radius: ingest.trimap_dilate.radius,
            window_radius: ingest.matting.window_radius,
            epsilon: ingest.matting.epsilon,
            tol: ingest.matting.cg.tol,
            max_iter: ingest.matting.cg.max_iter,
            incomplete_iou: ingest.incomplete_iou,
            mode: synth.mode,
            region_alpha: synth.region_alpha,
            objects_min: synth.objects_per_image.0,
            objects_max: synth.objects_per_image.1,
            scale_min: synth.scale_range.0,
            scale_max: synth.scale_range.1,
            margin: synth.margin,
            seed: 0,
            threads: 0,
        }
    }
}

fn usage(flag: &str, msg: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(format!("--{flag}: {msg}"))
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_slice(&fs::read(path)?).map_err(Error::parse)
    }

    pub fn validate(&self) -> Result<()> {
        if self.directions < 3 {
            return Err(usage("directions", "must be at least 3"));
        }
        if self.window_radius < 1 {
            return Err(usage("window-radius", "must be at least 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(usage("epsilon", "must be positive"));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(usage("tol", "must be positive"));
        }
        if self.max_iter == Some(0) {
            return Err(usage("max-iter", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.incomplete_iou) {
            return Err(usage("incomplete-iou", "must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.region_alpha) {
            return Err(usage("region-alpha", "must lie in [0, 1)"));
        }
        if self.objects_min == 0 {
            return Err(usage("objects-min", "must be at least 1"));
        }
        if self.objects_min > self.objects_max {
            return Err(usage("objects-max", "must not be below --objects-min"));
        }
        if !(self.scale_min > 0.0 && self.scale_min.is_finite()) {
            return Err(usage("scale-min", "must be positive"));
        }
        if !(self.scale_max >= self.scale_min && self.scale_max.is_finite()) {
            return Err(usage("scale-max", "must not be below --scale-min"));
        }
        Ok(())
    }

    pub fn cg(&self) -> CgOptions {
        CgOptions {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }

    pub fn matting(&self) -> MattingParams {
        MattingParams {
            window_radius: self.window_radius,
            epsilon: self.epsilon,
            cg: self.cg(),
        }
    }

    pub fn erode_element(&self) -> StructuringElement {
        StructuringElement {
            shape: self.trimap_shape,
            radius: self.erode_radius,
        }
    }

    pub fn dilate_element(&self) -> StructuringElement {
        StructuringElement {
            shape: self.trimap_shape,
            radius: self.dilate_radius,
        }
    }

    pub fn ingest(&self) -> IngestParams {
        IngestParams {
            directions: self.directions,
            trimap_erode: self.erode_element(),
            trimap_dilate: self.dilate_element(),
            matting: self.matting(),
            incomplete_iou: self.incomplete_iou,
        }
    }

    pub fn synth(&self) -> SynthParams {
        SynthParams {
            objects_per_image: (self.objects_min, self.objects_max),
            scale_range: (self.scale_min, self.scale_max),
            margin: self.margin,
            mode: self.mode,
            region_alpha: self.region_alpha,
            cg: self.cg(),
        }
    }
}

fn defaults() -> Config {
    Config::default()
}

fn given(m: &ArgMatches, id: &str) -> bool {
    matches!(m.value_source(id), Some(ValueSource::CommandLine | ValueSource::EnvVariable))
}

/// Copy flags the user actually passed into the config.
trait Overrides {
    fn apply(&self, m: &ArgMatches, cfg: &mut Config);
}

macro_rules! overrides {
    ($ty:ty { $($field:ident),* }) => {
        impl Overrides for $ty {
            fn apply(&self, m: &ArgMatches, cfg: &mut Config) {
                $(if given(m, stringify!($field)) {
                    cfg.$field = self.$field.clone();
                })*
            }
        }
    };
}

#[derive(Args, Debug, Clone)]
pub struct OutlineFlags {
    /// Number of evenly spaced ray directions
    #[arg(long, default_value_t = defaults().directions)]
    directions: usize,
}
overrides!(OutlineFlags { directions });

#[derive(Args, Debug, Clone)]
pub struct TrimapFlags {
    /// Structuring element shape (square or disc)
    #[arg(long, default_value_t = defaults().trimap_shape)]
    trimap_shape: ElementShape,
    /// Erosion radius producing the sure-foreground region
    #[arg(long, default_value_t = defaults().erode_radius)]
    erode_radius: usize,
    /// Dilation radius bounding the unknown band
    #[arg(long, default_value_t = defaults().dilate_radius)]
    dilate_radius: usize,
}
overrides!(TrimapFlags { trimap_shape, erode_radius, dilate_radius });

#[derive(Args, Debug, Clone)]
pub struct MattingFlags {
    /// Matting window radius (window side 2r+1)
    #[arg(long, default_value_t = defaults().window_radius)]
    window_radius: usize,
    /// Matting covariance regularizer
    #[arg(long, default_value_t = defaults().epsilon)]
    epsilon: f64,
}
overrides!(MattingFlags { window_radius, epsilon });

#[derive(Args, Debug, Clone)]
pub struct SolverFlags {
    /// Conjugate-gradient relative residual target
    #[arg(long, default_value_t = defaults().tol)]
    tol: f64,
    /// Conjugate-gradient iteration cap [default: 10 x unknowns]
    #[arg(long)]
    max_iter: Option<usize>,
}

impl Overrides for SolverFlags {
    fn apply(&self, m: &ArgMatches, cfg: &mut Config) {
        if given(m, "tol") {
            cfg.tol = self.tol;
        }
        if self.max_iter.is_some() {
            cfg.max_iter = self.max_iter;
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct IngestFlags {
    /// Outline-vs-mask IoU below which a mask is flagged incomplete
    #[arg(long, default_value_t = defaults().incomplete_iou)]
    incomplete_iou: f64,
}
overrides!(IngestFlags { incomplete_iou });

#[derive(Args, Debug, Clone)]
pub struct BlendFlags {
    /// Guidance field: mixed or source gradients
    #[arg(long, default_value_t = defaults().mode)]
    mode: GuidanceMode,
}
overrides!(BlendFlags { mode });

#[derive(Args, Debug, Clone)]
pub struct PlacementFlags {
    /// Fewest objects per image
    #[arg(long, default_value_t = defaults().objects_min)]
    objects_min: usize,
    /// Most objects per image
    #[arg(long, default_value_t = defaults().objects_max)]
    objects_max: usize,
    /// Smallest scale, as a fraction of min(scene side) / max(object side)
    #[arg(long, default_value_t = defaults().scale_min)]
    scale_min: f64,
    /// Largest scale, as a fraction of min(scene side) / max(object side)
    #[arg(long, default_value_t = defaults().scale_max)]
    scale_max: f64,
    /// Pixels kept clear between a placed object and the scene border
    #[arg(long, default_value_t = defaults().margin)]
    margin: usize,
    /// Alpha above which placed pixels are re-solved by the blend
    #[arg(long, default_value_t = defaults().region_alpha)]
    region_alpha: f64,
}
overrides!(PlacementFlags { objects_min, objects_max, scale_min, scale_max, margin, region_alpha });

#[derive(Args, Debug, Clone)]
pub struct SeedFlags {
    /// Random seed
    #[arg(long, default_value_t = defaults().seed)]
    seed: u64,
}
overrides!(SeedFlags { seed });

#[derive(Args, Debug, Clone)]
pub struct ThreadFlags {
    /// Worker threads; 0 uses every core
    #[arg(long, env = THREADS_ENV, default_value_t = defaults().threads)]
    threads: usize,
}
overrides!(ThreadFlags { threads });

#[derive(Parser, Debug)]
#[command(name = "sceneforge", version, about = "Synthesize labeled object-in-scene images")]
pub struct Cli {
    /// JSON config file; flags given on the command line take precedence
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Log to stderr as JSON lines
    #[arg(long, global = true)]
    pub log_json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Add object photos with rough masks to a pool
    IngestObjects {
        /// Pool directory (created if missing)
        #[arg(long)]
        pool: PathBuf,
        /// Object image; repeat for several objects
        #[arg(long, required = true)]
        image: Vec<PathBuf>,
        /// Rough mask for the matching --image
        #[arg(long, required = true)]
        mask: Vec<PathBuf>,
        /// Category name, once for all images or once per image
        #[arg(long, required = true)]
        category: Vec<String>,
        #[command(flatten)]
        outline: OutlineFlags,
        #[command(flatten)]
        trimap: TrimapFlags,
        #[command(flatten)]
        matting: MattingFlags,
        #[command(flatten)]
        solver: SolverFlags,
        #[command(flatten)]
        ingest: IngestFlags,
    },
    /// Add background scenes to a pool
    IngestScenes {
        /// Pool directory (created if missing)
        #[arg(long)]
        pool: PathBuf,
        /// Scene category label
        #[arg(long, default_value = "unlabeled")]
        label: String,
        /// Scene images
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Polar outline of a mask, written as JSON
    Outline {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Anchor x; defaults to the mask's interior mass center
        #[arg(long, requires = "anchor_y", allow_negative_numbers = true)]
        anchor_x: Option<f64>,
        /// Anchor y; defaults to the mask's interior mass center
        #[arg(long, requires = "anchor_x", allow_negative_numbers = true)]
        anchor_y: Option<f64>,
        /// Extra outlines from uniformly jittered anchors
        #[arg(long, default_value_t = 0)]
        jitter_samples: usize,
        /// Jitter disc radius [default: 5% of the bounding-box diagonal]
        #[arg(long)]
        jitter_radius: Option<f64>,
        #[command(flatten)]
        outline: OutlineFlags,
        #[command(flatten)]
        seed: SeedFlags,
    },
    /// Trimap from a binary mask by erosion and dilation
    Trimap {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        trimap: TrimapFlags,
    },
    /// Closed-form alpha matte from an image and a trimap
    Matte {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        trimap: PathBuf,
        /// 16-bit grayscale PNG output
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        matting: MattingFlags,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Poisson-blend a source into a target over a region mask
    Blend {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        source: PathBuf,
        /// Region mask in target coordinates
        #[arg(long)]
        region: PathBuf,
        /// Target x minus source x
        #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
        offset_x: i64,
        /// Target y minus source y
        #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
        offset_y: i64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        blend: BlendFlags,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Generate composites and annotations.json from a pool
    Synth {
        /// Pool directory holding ingested objects and scenes
        #[arg(long)]
        pool: PathBuf,
        /// Output directory (images/ and annotations.json)
        #[arg(long)]
        out: PathBuf,
        /// Number of images
        #[arg(long = "n", value_name = "N")]
        n: usize,
        #[command(flatten)]
        seed: SeedFlags,
        #[command(flatten)]
        threads: ThreadFlags,
        #[command(flatten)]
        placement: PlacementFlags,
        #[command(flatten)]
        blend: BlendFlags,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Check an output directory's annotations against its images
    Validate {
        /// Directory holding annotations.json and images/
        dir: PathBuf,
    },
}

struct Logger {
    json: bool,
}

impl Logger {
    fn log(&self, event: &str, fields: serde_json::Value, human: impl FnOnce() -> String) {
        if self.json {
            let mut line = json!({ "event": event });
            if let (Some(obj), serde_json::Value::Object(extra)) = (line.as_object_mut(), fields) {
                obj.extend(extra);
            }
            eprintln!("{line}");
        } else {
            eprintln!("{}", human());
        }
    }
}

enum Outcome {
    Success,
    ValidationFailed,
}

enum Failure {
    Usage(Error),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn resolve_config(cli: &Cli, sub: &ArgMatches) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path).map_err(|e| usage("config", format!("{}: {e}", path.display())))?,
        None => Config::default(),
    };
    let groups: Vec<&dyn Overrides> = match &cli.command {
        Command::IngestObjects {
            outline,
            trimap,
            matting,
            solver,
            ingest,
            ..
        } => vec![outline, trimap, matting, solver, ingest],
        Command::IngestScenes { .. } | Command::Validate { .. } => vec![],
        Command::Outline { outline, seed, .. } => vec![outline, seed],
        Command::Trimap { trimap, .. } => vec![trimap],
        Command::Matte { matting, solver, .. } => vec![matting, solver],
        Command::Blend { blend, solver, .. } => vec![blend, solver],
        Command::Synth {
            seed,
            threads,
            placement,
            blend,
            solver,
            ..
        } => vec![seed, threads, placement, blend, solver],
    };
    for group in groups {
        group.apply(sub, &mut cfg);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli, cfg: &Config, log: &Logger) -> std::result::Result<Outcome, Failure> {
    match &cli.command {
        Command::IngestObjects {
            pool,
            image,
            mask,
            category,
            ..
        } => {
            if image.len() != mask.len() {
                return Err(Failure::Usage(usage("mask", format!("{} masks for {} images", mask.len(), image.len()))));
            }
            if category.len() != 1 && category.len() != image.len() {
                return Err(Failure::Usage(usage("category", "give one category or one per image")));
            }
            let mut p = Pool::open(pool)?;
            let params = cfg.ingest();
            for (i, (img, m)) in image.iter().zip(mask).enumerate() {
                let cat = &category[if category.len() == 1 { 0 } else { i }];
                let record = p.ingest_object(img, m, cat, &params)?;
                p.save()?;
                log.log(
                    "object",
                    json!({"id": record.id, "path": img, "mask_incomplete": record.derived.mask_incomplete}),
                    || {
                        let flag = if record.derived.mask_incomplete { " (mask incomplete)" } else { "" };
                        format!("object {} <- {}{flag}", record.id, img.display())
                    },
                );
            }
            p.save()?;
            Ok(Outcome::Success)
        }
        Command::IngestScenes { pool, label, images } => {
            let mut p = Pool::open(pool)?;
            for img in images {
                let record = p.ingest_scene(img, label)?;
                p.save()?;
                log.log("scene", json!({"id": record.id, "path": img}), || {
                    format!("scene {} <- {}", record.id, img.display())
                });
            }
            p.save()?;
            Ok(Outcome::Success)
        }
        Command::Outline {
            mask,
            out,
            anchor_x,
            anchor_y,
            jitter_samples,
            jitter_radius,
            ..
        } => {
            let m = io::load_mask(mask)?;
            let anchor = match (anchor_x, anchor_y) {
                (Some(x), Some(y)) => Point::new(*x, *y),
                _ => interior_anchor(&m)?,
            };
            let outline = ray_distances(&m, anchor, cfg.directions)?;
            let mut doc = json!({
                "outline": outline,
                "polygon": outline_to_polygon(&outline).flatten(),
            });
            if *jitter_samples > 0 {
                let radius = match jitter_radius {
                    Some(r) => *r,
                    None => default_jitter_radius(&m)?,
                };
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                let samples: Vec<PolarOutline> =
                    jittered_samples(&m, anchor, radius, *jitter_samples, cfg.directions, &mut rng)?;
                doc["jittered"] = serde_json::to_value(samples).map_err(|e| Error::Encode(e.to_string()))?;
            }
            io::write_atomic(out, &canonical_json(&doc)?)?;
            Ok(Outcome::Success)
        }
        Command::Trimap { mask, out, .. } => {
            let m = io::load_mask(mask)?;
            let t = make_trimap(&m, &cfg.erode_element(), &cfg.dilate_element())?;
            io::save_trimap(&t, out)?;
            Ok(Outcome::Success)
        }
        Command::Matte { image, trimap, out, .. } => {
            let img = io::load_rgb(image)?;
            let t = io::load_trimap(trimap)?;
            let alpha = solve_alpha(&img, &t, &cfg.matting())?;
            io::save_alpha(&alpha, out)?;
            Ok(Outcome::Success)
        }
        Command::Blend {
            target,
            source,
            region,
            offset_x,
            offset_y,
            out,
            ..
        } => {
            let t = io::load_rgb(target)?;
            let s = io::load_rgb(source)?;
            let region = BlendRegion {
                mask: io::load_mask(region)?,
                offset: (*offset_x, *offset_y),
            };
            let blended = poisson_blend_with(&t, &s, &region, cfg.mode, &cfg.cg())?;
            io::save_rgb_png(&blended, out)?;
            Ok(Outcome::Success)
        }
        Command::Synth { pool, out, n, .. } => {
            let p = Pool::open(pool)?;
            let total = *n;
            let start = Instant::now();
            let progress = |done: usize| {
                if done.is_multiple_of(100) || done == total {
                    log.log("progress", json!({"done": done, "total": total}), || {
                        format!("synth: {done}/{total} images")
                    });
                }
            };
            let dataset = synthesize(&p, out, total, cfg.seed, &cfg.synth(), cfg.threads, &progress)?;
            let secs = start.elapsed().as_secs_f64();
            log.log(
                "done",
                json!({"images": dataset.images.len(), "annotations": dataset.annotations.len(), "seconds": secs}),
                || {
                    format!(
                        "synth: wrote {} images, {} annotations in {secs:.2}s",
                        dataset.images.len(),
                        dataset.annotations.len()
                    )
                },
            );
            Ok(Outcome::Success)
        }
        Command::Validate { dir } => {
            let report = match validate_output_dir(dir) {
                Ok(r) => r,
                Err(e) => {
                    log.log("invalid", json!({"problem": e.to_string()}), || format!("invalid: {e}"));
                    return Ok(Outcome::ValidationFailed);
                }
            };
            for problem in &report.problems {
                log.log("invalid", json!({"problem": problem}), || format!("invalid: {problem}"));
            }
            log.log(
                "validated",
                json!({"images": report.images, "annotations": report.annotations, "problems": report.problems.len()}),
                || {
                    format!(
                        "{} images, {} annotations, {} problems",
                        report.images,
                        report.annotations,
                        report.problems.len()
                    )
                },
            );
            Ok(if report.is_ok() { Outcome::Success } else { Outcome::ValidationFailed })
        }
    }
}

/// Parse `args` (program name first) and run. Exit codes: 0 success,
/// 1 runtime or validation failure, 2 usage error.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    let log = Logger { json: cli.log_json };
    let sub = matches.subcommand().map(|(_, m)| m).expect("subcommand is required");
    let result = resolve_config(&cli, sub)
        .map_err(Failure::Usage)
        .and_then(|cfg| execute(&cli, &cfg, &log));
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::ValidationFailed) => ExitCode::from(1),
        Err(Failure::Usage(e)) => {
            log.log("error", json!({"kind": "usage", "message": e.to_string()}), || format!("error: {e}"));
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            log.log("error", json!({"kind": "runtime", "message": e.to_string()}), || format!("error: {e}"));
            ExitCode::from(1)
        }
    }
}
