//! End-to-end runner: partition, spread, fuse, enhance, score.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::enhancement::{enhance_pseudo_labels, fuse_predictions, EnhancementConfig, ProbMap};
use crate::error::{Error, Result};
use crate::hierarchy::{preprocess, HierarchyConfig, Slice};
use crate::io::{self, VolumeMeta};
use crate::loss::{pseudo_label_loss, DiceConfig};
use crate::metrics::{evaluate, MetricReport, VolumeLabelMap};
use crate::spreading::{enhance_scribbles_staged, LabelMap};
use crate::synth::{generate_phantom, Phantom, PhantomConfig};

/// Either a path to a metadata sidecar or the metadata itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetaSource {
    Path(PathBuf),
    Inline(VolumeMeta),
}

impl MetaSource {
    pub fn resolve(&self) -> Result<VolumeMeta> {
        match self {
            MetaSource::Path(p) => VolumeMeta::load(p),
            MetaSource::Inline(m) => {
                m.validate()?;
                Ok(m.clone())
            }
        }
    }
}

/// Shared configuration file for every command.
///
/// Enhancement keys (`tau`, `e_max`, `variant`, `fusion`) sit at the top
/// level, so a bare enhancement config is also a valid pipeline config.
/// When `image` is absent the pipeline runs on a synthetic phantom built
/// from `seed` and `phantom`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub image: Option<PathBuf>,
    pub scribbles: Option<PathBuf>,
    pub ps: Option<PathBuf>,
    pub pt: Option<PathBuf>,
    pub ppl: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub meta: Option<MetaSource>,
    #[serde(flatten)]
    pub enhancement: EnhancementConfig,
    pub dice: DiceConfig,
    pub max_layers: usize,
    /// Epoch at which enhanced labels are scored against ground truth.
    pub eval_epoch: u32,
    pub seed: u64,
    pub phantom: PhantomConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            image: None,
            scribbles: None,
            ps: None,
            pt: None,
            ppl: None,
            gt: None,
            output: None,
            meta: None,
            enhancement: EnhancementConfig::default(),
            dice: DiceConfig::default(),
            max_layers: HierarchyConfig::default().max_layers,
            eval_epoch: 0,
            seed: 0,
            phantom: PhantomConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.enhancement.validate()?;
        Ok(cfg)
    }

    pub fn hierarchy(&self) -> HierarchyConfig {
        HierarchyConfig {
            max_layers: self.max_layers,
        }
    }

    pub fn resolve_meta(&self) -> Result<VolumeMeta> {
        self.meta
            .as_ref()
            .map_or_else(|| Ok(VolumeMeta::default()), MetaSource::resolve)
    }
}

/// Everything the pipeline consumes, one entry per slice.
#[derive(Debug, Clone)]
pub struct PipelineInputs {
    pub images: Vec<Slice>,
    pub scribbles: Vec<LabelMap>,
    pub student: Vec<ProbMap>,
    pub teacher: Vec<ProbMap>,
    pub ground_truth: Option<Vec<LabelMap>>,
    pub meta: VolumeMeta,
}

impl PipelineInputs {
    pub fn from_phantom(phantom: &Phantom) -> Result<Self> {
        let n = phantom.size;
        let spacing = phantom.meta.slice_spacing();
        let images = phantom
            .raw_images
            .iter()
            .map(|raw| preprocess(n, n, raw, spacing))
            .collect::<Result<_>>()?;
        Ok(Self {
            images,
            scribbles: phantom.scribbles.clone(),
            student: phantom.student.clone(),
            teacher: phantom.teacher.clone(),
            ground_truth: Some(phantom.ground_truth.clone()),
            meta: phantom.meta.clone(),
        })
    }

    /// Reads inputs named in `cfg`, or synthesizes a phantom when no image
    /// path is given.
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let Some(image) = &cfg.image else {
            let phantom = generate_phantom(&PhantomConfig {
                seed: cfg.seed,
                ..cfg.phantom
            })?;
            return Self::from_phantom(&phantom);
        };
        let meta = cfg.resolve_meta()?;
        let need = |p: &Option<PathBuf>, what: &str| {
            p.clone()
                .ok_or_else(|| Error::invalid(format!("config is missing `{what}`")))
        };
        let images = load_slices(image, &meta)?;
        let scribbles = load_labels(&need(&cfg.scribbles, "scribbles")?, &meta)?;
        let student = io::probmaps_from_tensor(&io::read_tensor(need(&cfg.ps, "ps")?)?)?;
        let teacher = io::probmaps_from_tensor(&io::read_tensor(need(&cfg.pt, "pt")?)?)?;
        let ground_truth = cfg.gt.as_ref().map(|p| load_labels(p, &meta)).transpose()?;
        let inputs = Self {
            images,
            scribbles,
            student,
            teacher,
            ground_truth,
            meta,
        };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.images.len();
        if d == 0 {
            return Err(Error::invalid("no slices"));
        }
        let counts = [
            self.scribbles.len(),
            self.student.len(),
            self.teacher.len(),
            self.ground_truth.as_ref().map_or(d, Vec::len),
        ];
        if counts.iter().any(|&c| c != d) {
            return Err(Error::dims(format!(
                "slice counts differ: {d} images vs {counts:?}"
            )));
        }
        for (z, img) in self.images.iter().enumerate() {
            let (h, w) = (img.height(), img.width());
            let ok = self.scribbles[z].height() == h
                && self.scribbles[z].width() == w
                && self.student[z].height() == h
                && self.student[z].width() == w
                && self.student[z].same_shape(&self.teacher[z]);
            if !ok {
                return Err(Error::dims(format!("slice {z} inputs differ in size")));
            }
        }
        Ok(())
    }
}

/// Reads an image tensor and min-max normalizes each slice.
pub fn load_slices(path: &Path, meta: &VolumeMeta) -> Result<Vec<Slice>> {
    let tensor = io::read_tensor(path)?;
    let (h, w, raw) = io::raw_slices(&tensor)?;
    raw.iter()
        .map(|r| preprocess(h, w, r, meta.slice_spacing()))
        .collect()
}

/// Reads label slices from a u8 tensor, or from a PGM/PNG image.
pub fn load_labels(path: &Path, meta: &VolumeMeta) -> Result<Vec<LabelMap>> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("pgm" | "png") => Ok(vec![io::read_labelmap_image(path, meta)?]),
        _ => io::labelmaps_from_tensor(
            &io::read_tensor(path)?,
            meta.num_classes(),
            meta.unlabeled_code,
        ),
    }
}

/// Runs `f` over slices on a pool of `jobs` threads (0 = all cores),
/// returning results in slice order.
pub fn par_map_slices<T, R, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect())
}

/// Per-slice intermediate results.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceStages {
    pub spread: LabelMap,
    pub enhanced: LabelMap,
    pub pseudo_label: LabelMap,
}

pub fn run_stages(
    inputs: &PipelineInputs,
    cfg: &PipelineConfig,
    jobs: usize,
) -> Result<Vec<SliceStages>> {
    inputs.validate()?;
    let hier = cfg.hierarchy();
    let enh = cfg.enhancement;
    let idx: Vec<usize> = (0..inputs.images.len()).collect();
    par_map_slices(&idx, jobs, |&z| {
        let staged =
            enhance_scribbles_staged(&inputs.images[z], &inputs.scribbles[z], enh.variant, &hier)?;
        let pseudo_label = fuse_predictions(&inputs.student[z], &inputs.teacher[z], enh.fusion)?;
        Ok(SliceStages {
            spread: staged.spread,
            enhanced: staged.enhanced,
            pseudo_label,
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coverage {
    pub scribbles: f64,
    pub spread: f64,
    pub enhanced: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochEntry {
    pub epoch: u32,
    pub active: bool,
    /// Pixels where the enhanced pseudo-label differs from the fused one.
    pub replaced_pixels: usize,
    /// Pseudo-label loss averaged over slices.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Accuracy {
    pub pseudo_label: f64,
    pub enhanced: f64,
    /// Fraction of enhanced-scribble pixels that agree with ground truth.
    pub enhanced_scribble_precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub epoch: u32,
    pub accuracy: Accuracy,
    pub pseudo_label: MetricReport,
    pub enhanced: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub slices: usize,
    pub enhancement: EnhancementConfig,
    pub dice: DiceConfig,
    pub max_layers: usize,
    pub coverage: Coverage,
    pub schedule: Vec<EpochEntry>,
    /// Whether every epoch honored the tolerance cutoff.
    pub schedule_consistent: bool,
    pub evaluation: Option<Evaluation>,
}

fn mean_coverage(maps: impl Iterator<Item = f64>, n: usize) -> f64 {
    maps.sum::<f64>() / n as f64
}

fn pixel_accuracy(pred: &[LabelMap], gt: &[LabelMap]) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for (p, g) in pred.iter().zip(gt) {
        hit += p
            .codes()
            .iter()
            .zip(g.codes())
            .filter(|(a, b)| a == b)
            .count();
        total += g.len();
    }
    hit as f64 / total as f64
}

pub fn run_pipeline(
    inputs: &PipelineInputs,
    cfg: &PipelineConfig,
    jobs: usize,
) -> Result<(PipelineReport, Vec<SliceStages>)> {
    cfg.enhancement.validate()?;
    let stages = run_stages(inputs, cfg, jobs)?;
    let d = stages.len();
    let enh = cfg.enhancement;

    let coverage = Coverage {
        scribbles: mean_coverage(inputs.scribbles.iter().map(LabelMap::coverage), d),
        spread: mean_coverage(stages.iter().map(|s| s.spread.coverage()), d),
        enhanced: mean_coverage(stages.iter().map(|s| s.enhanced.coverage()), d),
    };

    let mut schedule = Vec::with_capacity(enh.e_max as usize + 1);
    let mut consistent = true;
    for epoch in 0..=enh.e_max {
        let mut replaced = 0;
        let mut loss = 0.0;
        for (z, st) in stages.iter().enumerate() {
            let p_enh = enhance_pseudo_labels(&st.pseudo_label, &st.enhanced, epoch, &enh)?;
            let diff = p_enh
                .codes()
                .iter()
                .zip(st.pseudo_label.codes())
                .filter(|(a, b)| a != b)
                .count();
            if !enh.is_active(epoch) && p_enh != st.pseudo_label {
                consistent = false;
            }
            replaced += diff;
            loss += pseudo_label_loss(&inputs.student[z], &inputs.teacher[z], &p_enh, &cfg.dice)?;
        }
        schedule.push(EpochEntry {
            epoch,
            active: enh.is_active(epoch),
            replaced_pixels: replaced,
            loss: loss / d as f64,
        });
    }

    let evaluation = match &inputs.ground_truth {
        None => None,
        Some(gt) => {
            let p_enh: Vec<LabelMap> = stages
                .iter()
                .map(|st| {
                    enhance_pseudo_labels(&st.pseudo_label, &st.enhanced, cfg.eval_epoch, &enh)
                })
                .collect::<Result<_>>()?;
            let p_pl: Vec<LabelMap> = stages.iter().map(|s| s.pseudo_label.clone()).collect();
            let (mut hit, mut labeled) = (0usize, 0usize);
            for (st, g) in stages.iter().zip(gt) {
                for (i, &c) in st.enhanced.codes().iter().enumerate() {
                    if st.enhanced.is_labeled(i) {
                        labeled += 1;
                        hit += usize::from(c == g.codes()[i]);
                    }
                }
            }
            let gt_vol = VolumeLabelMap::from_slices(gt, inputs.meta.clone())?;
            let pl_vol = VolumeLabelMap::from_slices(&p_pl, inputs.meta.clone())?;
            let enh_vol = VolumeLabelMap::from_slices(&p_enh, inputs.meta.clone())?;
            Some(Evaluation {
                epoch: cfg.eval_epoch,
                accuracy: Accuracy {
                    pseudo_label: pixel_accuracy(&p_pl, gt),
                    enhanced: pixel_accuracy(&p_enh, gt),
                    enhanced_scribble_precision: if labeled == 0 {
                        0.0
                    } else {
                        hit as f64 / labeled as f64
                    },
                },
                pseudo_label: evaluate(&pl_vol, &gt_vol)?,
                enhanced: evaluate(&enh_vol, &gt_vol)?,
            })
        }
    };

    let report = PipelineReport {
        slices: d,
        enhancement: enh,
        dice: cfg.dice,
        max_layers: cfg.max_layers,
        coverage,
        schedule,
        schedule_consistent: consistent,
        evaluation,
    };
    Ok((report, stages))
}
