//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 when a file cannot be read or written, 3 when
//! the input itself is invalid (including unparseable arguments).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::enhancement::{enhance_pseudo_labels, fuse_predictions, FusionStrategy};
use crate::error::{Error, Result};
use crate::hierarchy::{build_hierarchy, HierarchyConfig};
use crate::io::{self, VolumeMeta};
use crate::loss::{pseudo_label_loss, soft_dice_loss, DiceLoss};
use crate::metrics::{evaluate, VolumeLabelMap};
use crate::pipeline::{
    load_labels, load_slices, par_map_slices, run_pipeline, MetaSource, PipelineConfig,
    PipelineInputs,
};
use crate::spreading::{enhance_scribbles_staged, SpreadVariant};
use crate::synth::{generate_phantom, PhantomConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 2;
pub const EXIT_INVALID: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "pless",
    version,
    about = "Scribble spreading and pseudo-label enhancement"
)]
pub struct Cli {
    /// JSON config; keys fill in any flag not given on the command line.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads for per-slice work (0 = all cores).
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the region hierarchy of a 2D image.
    Partition(PartitionArgs),
    /// Spread scribbles through the hierarchy.
    Spread(SpreadArgs),
    /// Blend a pseudo-label with enhanced scribbles for one epoch.
    Enhance(EnhanceArgs),
    /// Dice pseudo-label loss of student and teacher predictions.
    Loss(LossArgs),
    /// DSC, HD95 and ASD of a predicted volume.
    Metrics(MetricsArgs),
    /// Write a synthetic phantom.
    Synth(SynthArgs),
    /// Run the whole chain and emit a JSON report.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_layers: Option<usize>,
    /// Re-verify region nesting before writing.
    #[arg(long)]
    pub check: bool,
    #[arg(long)]
    pub meta: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SpreadArgs {
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub scribbles: Option<PathBuf>,
    /// enh | enh+bg | enh+bg+prop
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_layers: Option<usize>,
    #[arg(long)]
    pub meta: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    /// Enhanced scribbles.
    #[arg(long)]
    pub s_enh: Option<PathBuf>,
    /// Precomputed pseudo-label; otherwise fused from --ps and --pt.
    #[arg(long)]
    pub ppl: Option<PathBuf>,
    #[arg(long)]
    pub ps: Option<PathBuf>,
    #[arg(long)]
    pub pt: Option<PathBuf>,
    /// average | confidence | student
    #[arg(long)]
    pub fusion: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub epoch: u32,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub e_max: Option<u32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub meta: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    #[arg(long)]
    pub ps: Option<PathBuf>,
    #[arg(long)]
    pub pt: Option<PathBuf>,
    /// Enhanced pseudo-label used as the Dice target.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub slices: Option<usize>,
    /// Argmax accuracy of the corrupted probability maps.
    #[arg(long)]
    pub accuracy: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Phantom seed when the config names no image.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter("PLESS_LOG")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("pless: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    match &cli.command {
        Command::Partition(a) => cmd_partition(a, &cfg),
        Command::Spread(a) => cmd_spread(a, &cfg, cli.jobs),
        Command::Enhance(a) => cmd_enhance(a, &cfg),
        Command::Loss(a) => cmd_loss(a, &cfg),
        Command::Metrics(a) => cmd_metrics(a, &cfg),
        Command::Synth(a) => cmd_synth(a, &cfg),
        Command::Pipeline(a) => cmd_pipeline(a, &cfg, cli.jobs),
    }
}

fn required(flag: &Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| fallback.clone())
        .ok_or_else(|| Error::invalid(format!("--{name} is required")))
}

fn meta_for(flag: &Option<PathBuf>, cfg: &PipelineConfig) -> Result<VolumeMeta> {
    match flag {
        Some(p) => MetaSource::Path(p.clone()).resolve(),
        None => cfg.resolve_meta(),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}").map_err(|e| Error::io("<stdout>", e))
        }
    }
}

#[derive(Serialize)]
struct PartitionSummary<'a> {
    layers: usize,
    region_counts: Vec<usize>,
    parents: &'a [Vec<u32>],
}

pub fn cmd_partition(a: &PartitionArgs, cfg: &PipelineConfig) -> Result<()> {
    let image = required(&a.image, &cfg.image, "image")?;
    let out = required(&a.out, &cfg.output, "out")?;
    let meta = meta_for(&a.meta, cfg)?;
    let slices = load_slices(&image, &meta)?;
    let [slice] = slices.as_slice() else {
        return Err(Error::invalid("partition expects a single 2D image"));
    };
    let config = HierarchyConfig {
        max_layers: a.max_layers.unwrap_or(cfg.max_layers),
    };
    let hier = build_hierarchy(slice, &config)?;
    if a.check {
        hier.check_nesting()?;
        if !hier.layers().iter().all(|l| l.regions_connected()) {
            return Err(Error::invalid("hierarchy contains a disconnected region"));
        }
    }
    create_dir(&out)?;
    for (k, layer) in hier.layers().iter().enumerate() {
        io::write_tensor(
            out.join(format!("layer_{k}.plt")),
            &io::regions_to_tensor(layer)?,
        )?;
    }
    let summary = PartitionSummary {
        layers: hier.layers().len(),
        region_counts: hier.region_counts(),
        parents: hier.parents(),
    };
    emit_json(&summary, Some(&out.join("hierarchy.json")))?;
    emit_json(&summary.region_counts, None)
}

#[derive(Serialize)]
struct SpreadSummary {
    variant: SpreadVariant,
    scribble_pixels: usize,
    spread_pixels: usize,
    enhanced_pixels: usize,
}

pub fn cmd_spread(a: &SpreadArgs, cfg: &PipelineConfig, jobs: usize) -> Result<()> {
    let variant = match &a.variant {
        Some(v) => v.parse()?,
        None => cfg.enhancement.variant,
    };
    let image = required(&a.image, &cfg.image, "image")?;
    let scribbles = required(&a.scribbles, &cfg.scribbles, "scribbles")?;
    let out = required(&a.out, &cfg.output, "out")?;
    let meta = meta_for(&a.meta, cfg)?;
    let slices = load_slices(&image, &meta)?;
    let labels = load_labels(&scribbles, &meta)?;
    if slices.len() != labels.len() {
        return Err(Error::dims(format!(
            "{} image slices but {} scribble slices",
            slices.len(),
            labels.len()
        )));
    }
    let config = HierarchyConfig {
        max_layers: a.max_layers.unwrap_or(cfg.max_layers),
    };
    let pairs: Vec<_> = slices.iter().zip(&labels).collect();
    let staged = par_map_slices(&pairs, jobs, |(s, l)| {
        enhance_scribbles_staged(s, l, variant, &config)
    })?;
    let spread: Vec<_> = staged.iter().map(|s| s.spread.clone()).collect();
    let enhanced: Vec<_> = staged.iter().map(|s| s.enhanced.clone()).collect();
    create_dir(&out)?;
    io::write_tensor(out.join("s_w.plt"), &io::labelmaps_to_tensor(&spread)?)?;
    io::write_tensor(out.join("s_enh.plt"), &io::labelmaps_to_tensor(&enhanced)?)?;
    emit_json(
        &SpreadSummary {
            variant,
            scribble_pixels: labels.iter().map(|l| l.labeled_count()).sum(),
            spread_pixels: spread.iter().map(|l| l.labeled_count()).sum(),
            enhanced_pixels: enhanced.iter().map(|l| l.labeled_count()).sum(),
        },
        None,
    )
}

#[derive(Serialize)]
struct EnhanceSummary {
    epoch: u32,
    active: bool,
    replaced_pixels: usize,
}

pub fn cmd_enhance(a: &EnhanceArgs, cfg: &PipelineConfig) -> Result<()> {
    let mut enh = cfg.enhancement;
    if let Some(tau) = a.tau {
        enh.tau = tau;
    }
    if let Some(e_max) = a.e_max {
        enh.e_max = e_max;
    }
    if let Some(f) = &a.fusion {
        enh.fusion = f.parse::<FusionStrategy>()?;
    }
    enh.validate()?;
    let meta = meta_for(&a.meta, cfg)?;
    let s_enh = load_labels(&required(&a.s_enh, &None, "s-enh")?, &meta)?;
    let ppl = match a.ppl.as_ref().or(cfg.ppl.as_ref()) {
        Some(path) => load_labels(path, &meta)?,
        None => {
            let ps = io::probmaps_from_tensor(&io::read_tensor(required(&a.ps, &cfg.ps, "ps")?)?)?;
            let pt = io::probmaps_from_tensor(&io::read_tensor(required(&a.pt, &cfg.pt, "pt")?)?)?;
            if ps.len() != pt.len() {
                return Err(Error::dims("student and teacher slice counts differ"));
            }
            ps.iter()
                .zip(&pt)
                .map(|(s, t)| fuse_predictions(s, t, enh.fusion))
                .collect::<Result<Vec<_>>>()?
        }
    };
    if ppl.len() != s_enh.len() {
        return Err(Error::dims("pseudo-label and scribble slice counts differ"));
    }
    let out = required(&a.out, &cfg.output, "out")?;
    let blended = ppl
        .iter()
        .zip(&s_enh)
        .map(|(p, s)| enhance_pseudo_labels(p, s, a.epoch, &enh))
        .collect::<Result<Vec<_>>>()?;
    io::write_tensor(&out, &io::labelmaps_to_tensor(&blended)?)?;
    let replaced = blended
        .iter()
        .zip(&ppl)
        .map(|(b, p)| {
            b.codes()
                .iter()
                .zip(p.codes())
                .filter(|(x, y)| x != y)
                .count()
        })
        .sum();
    emit_json(
        &EnhanceSummary {
            epoch: a.epoch,
            active: enh.is_active(a.epoch),
            replaced_pixels: replaced,
        },
        None,
    )
}

#[derive(Serialize)]
struct LossReport {
    student: Vec<DiceLoss>,
    teacher: Vec<DiceLoss>,
    /// Pseudo-label loss per slice.
    per_slice: Vec<f64>,
    pseudo_label_loss: f64,
}

pub fn cmd_loss(a: &LossArgs, cfg: &PipelineConfig) -> Result<()> {
    let mut dice = cfg.dice;
    if let Some(eps) = a.epsilon {
        dice.epsilon = eps;
    }
    let ps = io::probmaps_from_tensor(&io::read_tensor(required(&a.ps, &cfg.ps, "ps")?)?)?;
    let pt = io::probmaps_from_tensor(&io::read_tensor(required(&a.pt, &cfg.pt, "pt")?)?)?;
    let labels_path = required(&a.labels, &cfg.ppl, "labels")?;
    let num_classes = ps
        .first()
        .map(|p| p.num_classes() as u8)
        .ok_or_else(|| Error::invalid("empty prediction"))?;
    let labels = io::labelmaps_from_tensor(
        &io::read_tensor(labels_path)?,
        num_classes,
        crate::DEFAULT_UNLABELED,
    )?;
    if ps.len() != pt.len() || ps.len() != labels.len() {
        return Err(Error::dims(
            "slice counts differ between predictions and labels",
        ));
    }
    let mut report = LossReport {
        student: Vec::new(),
        teacher: Vec::new(),
        per_slice: Vec::new(),
        pseudo_label_loss: 0.0,
    };
    for ((s, t), l) in ps.iter().zip(&pt).zip(&labels) {
        report.student.push(soft_dice_loss(s, l, &dice)?);
        report.teacher.push(soft_dice_loss(t, l, &dice)?);
        report.per_slice.push(pseudo_label_loss(s, t, l, &dice)?);
    }
    report.pseudo_label_loss = report.per_slice.iter().sum::<f64>() / report.per_slice.len() as f64;
    emit_json(&report, a.out.as_deref())
}

fn load_volume(path: &Path, meta: &VolumeMeta) -> Result<VolumeLabelMap> {
    let slices = load_labels(path, meta)?;
    VolumeLabelMap::from_slices(&slices, meta.clone())
}

pub fn cmd_metrics(a: &MetricsArgs, cfg: &PipelineConfig) -> Result<()> {
    let meta = meta_for(&a.meta, cfg)?;
    let pred = load_volume(&required(&a.pred, &cfg.ppl, "pred")?, &meta)?;
    let gt = load_volume(&required(&a.gt, &cfg.gt, "gt")?, &meta)?;
    let report = evaluate(&pred, &gt)?;
    emit_json(&report, a.out.as_deref())
}

pub fn cmd_synth(a: &SynthArgs, cfg: &PipelineConfig) -> Result<()> {
    let base = cfg.phantom;
    let phantom_cfg = PhantomConfig {
        seed: a.seed.unwrap_or(cfg.seed),
        size: a.size.unwrap_or(base.size),
        slices: a.slices.unwrap_or(base.slices),
        map_accuracy: a.accuracy.unwrap_or(base.map_accuracy),
    };
    let phantom = generate_phantom(&phantom_cfg)?;
    phantom.write(&a.out_dir)?;
    emit_json(&phantom_cfg, None)
}

pub fn cmd_pipeline(a: &PipelineArgs, cfg: &PipelineConfig, jobs: usize) -> Result<()> {
    let mut cfg = cfg.clone();
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let inputs = PipelineInputs::load(&cfg)?;
    let (report, _) = run_pipeline(&inputs, &cfg, jobs)?;
    let out = a.out.clone().or(cfg.output.clone());
    emit_json(&report, out.as_deref())
}
