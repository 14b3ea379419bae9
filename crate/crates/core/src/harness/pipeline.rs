use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, confusion_matrix, macro_recall_supported, mean, median};
use super::scenario::{make_stream, ScenarioSpec};
use super::dataset::Dataset;
use super::shapes::{gen_source_dataset, ShapeKind};
use crate::adapt::{adapt_input, argmax, vote, AdaptConfig};
use crate::classifier::{train_source, OnlineAdapter, OnlineConfig, PointClassifier, TrainConfig, DEFAULT_HIDDEN};
use crate::corrupt::{corrupt, CorruptionKind, CorruptionSpec};
use crate::denoise::{
    Denoiser, EmpiricalPosteriorDenoiser, EmpiricalSource, ExternalDenoiser, PointMixtureDenoiser, DEFAULT_TIMEOUT,
};
use crate::error::{Error, Result};
use crate::geometry::{chamfer, normalize_for_classifier, normalize_for_diffusion, PointCloud};
use crate::rng::{derive_seed, stream};
use crate::schedule::{NoiseSchedule, DEFAULT_TIMESTEPS};

const TAG_DATA_TRAIN: u64 = 1;
const TAG_DATA_TEST: u64 = 2;
const TAG_MODEL: u64 = 3;
const TAG_CORRUPT: u64 = 4;
const TAG_ADAPT: u64 = 5;
const TAG_RESAMPLE: u64 = 6;
const TAG_DENOISER: u64 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub classes: Vec<ShapeKind>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub n_points: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { classes: ShapeKind::ALL.to_vec(), train_per_class: 40, test_per_class: 10, n_points: 1024 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub train: TrainConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { hidden: DEFAULT_HIDDEN, train: TrainConfig::default() }
    }
}

/// Which noise predictor guides adaptation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DenoiserChoice {
    /// Exact posterior mean over the training set.
    #[default]
    Empirical,
    /// Per-point mixture over the pooled training points.
    PointMixture,
    /// A server process speaking the line protocol over stdio.
    External {
        command: String,
        #[serde(default)]
        args: Vec<String>,
        #[serde(default)]
        timeout_secs: Option<f64>,
    },
    /// A server speaking the line protocol over TCP.
    Tcp {
        address: String,
        #[serde(default)]
        timeout_secs: Option<f64>,
    },
}

/// Everything that varies between evaluation runs on one benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corruptions: Vec<CorruptionKind>,
    pub severity: u8,
    /// Also evaluate the uncorrupted test stream.
    pub include_clean: bool,
    pub scenario: ScenarioSpec,
    /// Input adaptation on or off. When off, adapted predictions equal the
    /// unadapted ones.
    pub adaptation: bool,
    /// `adapt.seed` is replaced by a per-instance seed derived from the run seed.
    pub adapt: AdaptConfig,
    pub online: Option<OnlineConfig>,
    /// Record wall-clock seconds per instance. Off by default because timings
    /// make reports differ between identical runs.
    pub record_timing: bool,
    pub record_instances: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corruptions: vec![CorruptionKind::Gaussian, CorruptionKind::Uniform, CorruptionKind::Impulse],
            severity: 5,
            include_clean: false,
            scenario: ScenarioSpec::default(),
            adaptation: true,
            adapt: AdaptConfig::default(),
            online: None,
            record_timing: false,
            record_instances: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.severity) {
            return Err(Error::Config(format!("severity must be in 1..=5, got {}", self.severity)));
        }
        self.scenario.validate()?;
        self.adapt.validate()?;
        if let Some(o) = &self.online {
            o.validate()?;
        }
        Ok(())
    }
}

/// A full benchmark run: data, classifier, denoiser and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub workers: usize,
    pub timesteps: usize,
    pub dataset: DatasetConfig,
    pub classifier: ClassifierConfig,
    pub denoiser: DenoiserChoice,
    pub run: RunConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            timesteps: DEFAULT_TIMESTEPS,
            dataset: DatasetConfig::default(),
            classifier: ClassifierConfig::default(),
            denoiser: DenoiserChoice::default(),
            run: RunConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.dataset.classes.len() < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        self.run.validate()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    /// Index into the test set.
    pub index: usize,
    pub label: usize,
    pub unadapted_pred: usize,
    pub adapted_pred: usize,
    pub chamfer_before: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chamfer_after: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    /// Corruption name, or "clean".
    pub corruption: String,
    pub severity: u8,
    pub instances: usize,
    pub unadapted_accuracy: f64,
    pub adapted_accuracy: f64,
    pub unadapted_macro_recall: Option<f64>,
    pub adapted_macro_recall: Option<f64>,
    pub chamfer_before_mean: Option<f64>,
    pub chamfer_before_median: Option<f64>,
    pub chamfer_after_mean: Option<f64>,
    pub chamfer_after_median: Option<f64>,
    pub failures: usize,
    /// With online updates: whether the classifier head is bitwise
    /// unchanged at the end of the stream.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_unchanged: Option<bool>,
    /// L2 distance between the updated and the source encoder weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder_drift: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub records: Vec<InstanceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<PipelineConfig>,
    pub run: RunConfig,
    pub denoiser: String,
    pub clean_accuracy: f64,
    pub results: Vec<ShiftReport>,
    /// Means over the corrupted streams (the clean stream excluded).
    pub mean_unadapted_accuracy: Option<f64>,
    pub mean_adapted_accuracy: Option<f64>,
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn shift(&self, name: &str) -> Option<&ShiftReport> {
        self.results.iter().find(|r| r.corruption == name)
    }
}

/// Test data, trained classifier and denoiser source shared by many runs.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub classes: Vec<String>,
    pub train: Vec<PointCloud>,
    pub test: Vec<PointCloud>,
    pub model: PointClassifier,
    pub source: Arc<EmpiricalSource>,
    pub schedule: NoiseSchedule,
}

impl Benchmark {
    /// Generates the data and trains the classifier from `cfg.seed`.
    pub fn build(cfg: &PipelineConfig) -> Result<Self> {
        let data = generate_dataset(cfg)?;
        let model = train_classifier(cfg, &data)?;
        Self::from_dataset(data, model, cfg.timesteps)
    }

    pub fn from_dataset(data: Dataset, model: PointClassifier, timesteps: usize) -> Result<Self> {
        if data.train.is_empty() || data.test.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if data.test.iter().any(|pc| pc.label.is_none()) {
            return Err(Error::Config("test clouds must be labeled".into()));
        }
        if model.classes() != data.classes.len() {
            return Err(Error::Config(format!(
                "classifier has {} classes, dataset has {}",
                model.classes(),
                data.classes.len()
            )));
        }
        let source = Arc::new(EmpiricalSource::normalized(&data.train)?);
        Ok(Self {
            classes: data.classes,
            train: data.train,
            test: data.test,
            model,
            source,
            schedule: NoiseSchedule::polynomial(timesteps)?,
        })
    }

    pub fn n_points(&self) -> usize {
        self.source.n_points()
    }

    pub fn make_denoiser(&self, choice: &DenoiserChoice, seed: u64) -> Result<Box<dyn Denoiser>> {
        make_denoiser(choice, &self.source, &self.schedule, seed)
    }

    pub fn clean_accuracy(&self) -> f64 {
        crate::classifier::accuracy(&self.model, &self.test)
    }

    /// Evaluates every configured distribution shift.
    pub fn run(&self, run: &RunConfig, denoiser: &dyn Denoiser, seed: u64, workers: usize) -> Result<Report> {
        run.validate()?;
        let labels: Vec<usize> = self.test.iter().map(|pc| pc.label.expect("checked")).collect();
        let order = make_stream(&labels, &run.scenario)?;
        let mut shifts: Vec<Option<CorruptionKind>> = Vec::new();
        if run.include_clean {
            shifts.push(None);
        }
        shifts.extend(run.corruptions.iter().copied().map(Some));
        let results = shifts
            .into_iter()
            .map(|shift| in_pool(workers, || self.run_shift(run, denoiser, seed, shift, &order))?)
            .collect::<Result<Vec<_>>>()?;
        let corrupted: Vec<&ShiftReport> = results.iter().filter(|r| r.corruption != "clean").collect();
        Ok(Report {
            seed,
            config: None,
            run: run.clone(),
            denoiser: denoiser.name().to_string(),
            clean_accuracy: self.clean_accuracy(),
            mean_unadapted_accuracy: mean(&corrupted.iter().map(|r| r.unadapted_accuracy).collect::<Vec<_>>()),
            mean_adapted_accuracy: mean(&corrupted.iter().map(|r| r.adapted_accuracy).collect::<Vec<_>>()),
            results,
        })
    }

    fn run_shift(
        &self,
        run: &RunConfig,
        denoiser: &dyn Denoiser,
        seed: u64,
        shift: Option<CorruptionKind>,
        order: &[usize],
    ) -> Result<ShiftReport> {
        let shift_id = shift.map_or(u64::MAX, |k| CorruptionKind::ALL.iter().position(|c| *c == k).expect("listed") as u64);
        let mut model = self.model.clone();
        let mut online = match &run.online {
            Some(cfg) => Some(OnlineAdapter::new(&model, cfg.clone())?),
            None => None,
        };
        let mut records = Vec::with_capacity(order.len());
        for batch in order.chunks(run.scenario.batch_size) {
            let prepared: Vec<Prepared> = batch
                .par_iter()
                .map(|&idx| self.prepare(run, denoiser, seed, shift, shift_id, idx))
                .collect();
            if let (Some(adapter), true) = (online.as_mut(), run.adaptation) {
                let votes = adapter.config().votes;
                let pairs: Vec<(PointCloud, Vec<PointCloud>)> = prepared
                    .iter()
                    .filter_map(|p| match (&p.input, &p.adapted) {
                        (Some(x), Ok(ys)) => Some((x.clone(), ys.iter().take(votes).cloned().collect())),
                        _ => None,
                    })
                    .collect();
                if !pairs.is_empty() {
                    adapter.update(&mut model, &pairs)?;
                }
            }
            let current = &model;
            let batch_records: Vec<InstanceRecord> = prepared
                .into_par_iter()
                .map(|p| p.finish(current))
                .collect::<Result<_>>()?;
            records.extend(batch_records);
        }
        let mut report = summarize(shift, run.severity, self.classes.len(), records, run.record_instances);
        if online.is_some() {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            report.head_unchanged = Some(bits(model.head()) == bits(self.model.head()));
            let e = model.encoder_len();
            let d2: f64 = model.params()[..e].iter().zip(&self.model.params()[..e]).map(|(a, b)| (a - b) * (a - b)).sum();
            report.encoder_drift = Some(d2.sqrt());
        }
        Ok(report)
    }

    /// Corrupts and adapts one test instance. Everything here depends only
    /// on the instance, never on its position in the stream.
    fn prepare(
        &self,
        run: &RunConfig,
        denoiser: &dyn Denoiser,
        seed: u64,
        shift: Option<CorruptionKind>,
        shift_id: u64,
        idx: usize,
    ) -> Prepared {
        let clean = &self.test[idx];
        let label = clean.label.expect("checked");
        let corrupted = match shift {
            None => Ok(clean.clone()),
            Some(kind) => CorruptionSpec::new(kind, run.severity, derive_seed(seed, &[TAG_CORRUPT, shift_id, idx as u64]))
                .and_then(|spec| corrupt(clean, &spec))
                .map(|c| c.cloud),
        };
        let corrupted = match corrupted {
            Ok(c) => c,
            Err(e) => return Prepared::failed(idx, label, e),
        };
        let input = match normalize_for_classifier(&corrupted) {
            Ok((x, _)) => x,
            Err(e) => return Prepared::failed(idx, label, e),
        };
        let unadapted = self.model.predict(&input);
        let chamfer_before = chamfer(&corrupted, clean).unwrap_or(f64::INFINITY);
        let start = Instant::now();
        let adapted = if run.adaptation {
            let cfg = run.adapt.clone().with_seed(derive_seed(seed, &[TAG_ADAPT, shift_id, idx as u64]));
            let resample_seed = derive_seed(seed, &[TAG_RESAMPLE, shift_id, idx as u64]);
            adapt_to_classifier_frame(&corrupted, self.n_points(), denoiser, &self.schedule, &cfg, resample_seed)
        } else {
            Ok((vec![input.clone()], Vec::new()))
        };
        let seconds = run.record_timing.then(|| start.elapsed().as_secs_f64());
        let (adapted, chamfer_after) = match adapted {
            Ok((clouds, back)) => {
                let after = back.iter().map(|b| chamfer(b, clean).unwrap_or(f64::INFINITY)).collect::<Vec<_>>();
                (Ok(clouds), if run.adaptation { mean(&after) } else { None })
            }
            Err(e) => (Err(e.to_string()), None),
        };
        Prepared { idx, label, input: Some(input), unadapted: Some(unadapted), chamfer_before, adapted, chamfer_after, seconds }
    }
}

struct Prepared {
    idx: usize,
    label: usize,
    input: Option<PointCloud>,
    unadapted: Option<Vec<f64>>,
    chamfer_before: f64,
    /// Adapted clouds in the classifier frame, or the error that stopped adaptation.
    adapted: std::result::Result<Vec<PointCloud>, String>,
    chamfer_after: Option<f64>,
    seconds: Option<f64>,
}

impl Prepared {
    fn failed(idx: usize, label: usize, e: Error) -> Self {
        Self {
            idx,
            label,
            input: None,
            unadapted: None,
            chamfer_before: f64::INFINITY,
            adapted: Err(e.to_string()),
            chamfer_after: None,
            seconds: None,
        }
    }

    fn finish(self, model: &PointClassifier) -> Result<InstanceRecord> {
        // An instance that cannot even be corrupted counts as a miss for both.
        let miss = (self.label + 1) % model.classes();
        let unadapted_pred = self.unadapted.as_deref().map_or(miss, argmax);
        let (adapted_pred, error) = match self.adapted {
            Ok(clouds) => {
                let probs: Vec<Vec<f64>> = clouds.iter().map(|c| model.predict(c)).collect();
                (vote(&probs)?.1, None)
            }
            // adaptation failed: fall back to the unadapted prediction
            Err(e) => (unadapted_pred, Some(e)),
        };
        Ok(InstanceRecord {
            index: self.idx,
            label: self.label,
            unadapted_pred,
            adapted_pred,
            chamfer_before: self.chamfer_before,
            chamfer_after: self.chamfer_after,
            error,
            seconds: self.seconds,
        })
    }
}

/// Resamples to `n` points (if needed), adapts in the diffusion frame and
/// maps every vote back. Returns the votes re-normalized for the classifier
/// and the votes in the frame of `corrupted`.
pub fn adapt_to_classifier_frame(
    corrupted: &PointCloud,
    n: usize,
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    cfg: &AdaptConfig,
    resample_seed: u64,
) -> Result<(Vec<PointCloud>, Vec<PointCloud>)> {
    let x = resample_to(corrupted, n, resample_seed);
    let (xd, frame) = normalize_for_diffusion(&x)?;
    let votes = adapt_input(&xd, denoiser, sched, cfg)?;
    let mut cls = Vec::with_capacity(votes.len());
    let mut back = Vec::with_capacity(votes.len());
    for v in votes {
        let b = frame.invert(&v.cloud);
        cls.push(normalize_for_classifier(&b)?.0);
        back.push(b);
    }
    Ok((cls, back))
}

/// Brings a cloud to exactly `n` points: a seeded subset (kept in order) when
/// larger, the cloud followed by seeded duplicates when smaller.
pub fn resample_to(pc: &PointCloud, n: usize, seed: u64) -> PointCloud {
    let m = pc.len();
    if m == n {
        return pc.clone();
    }
    let mut rng = stream(seed, &[]);
    let points = if m > n {
        let mut idx = sample(&mut rng, m, n).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| pc.points[i]).collect()
    } else {
        let mut pts = pc.points.clone();
        for _ in m..n {
            pts.push(pc.points[rng.random_range(0..m)]);
        }
        pts
    };
    PointCloud { points, label: pc.label }
}

fn summarize(
    shift: Option<CorruptionKind>,
    severity: u8,
    classes: usize,
    records: Vec<InstanceRecord>,
    keep_records: bool,
) -> ShiftReport {
    let truth: Vec<usize> = records.iter().map(|r| r.label).collect();
    let un: Vec<usize> = records.iter().map(|r| r.unadapted_pred).collect();
    let ad: Vec<usize> = records.iter().map(|r| r.adapted_pred).collect();
    let before: Vec<f64> = records.iter().map(|r| r.chamfer_before).filter(|v| v.is_finite()).collect();
    let after: Vec<f64> = records.iter().filter_map(|r| r.chamfer_after).filter(|v| v.is_finite()).collect();
    let seconds: Vec<f64> = records.iter().filter_map(|r| r.seconds).collect();
    ShiftReport {
        corruption: shift.map_or_else(|| "clean".to_string(), |k| k.name().to_string()),
        severity: if shift.is_some() { severity } else { 0 },
        instances: records.len(),
        unadapted_accuracy: accuracy(&truth, &un),
        adapted_accuracy: accuracy(&truth, &ad),
        unadapted_macro_recall: macro_recall_supported(&confusion_matrix(classes, &truth, &un)),
        adapted_macro_recall: macro_recall_supported(&confusion_matrix(classes, &truth, &ad)),
        chamfer_before_mean: mean(&before),
        chamfer_before_median: median(&before),
        chamfer_after_mean: mean(&after),
        chamfer_after_median: median(&after),
        failures: records.iter().filter(|r| r.error.is_some()).count(),
        head_unchanged: None,
        encoder_drift: None,
        mean_seconds: mean(&seconds),
        records: if keep_records { records } else { Vec::new() },
    }
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Instantiates the chosen denoiser. `source` must be diffusion-normalized.
pub fn make_denoiser(
    choice: &DenoiserChoice,
    source: &Arc<EmpiricalSource>,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Box<dyn Denoiser>> {
    let timeout = |s: &Option<f64>| s.map(Duration::from_secs_f64).unwrap_or(DEFAULT_TIMEOUT);
    Ok(match choice {
        DenoiserChoice::Empirical => Box::new(EmpiricalPosteriorDenoiser::new(source.clone(), schedule.clone())),
        DenoiserChoice::PointMixture => {
            Box::new(PointMixtureDenoiser::new(source, schedule.clone(), derive_seed(seed, &[TAG_DENOISER])))
        }
        DenoiserChoice::External { command, args, timeout_secs } => {
            Box::new(ExternalDenoiser::spawn(command, args, schedule.timesteps, timeout(timeout_secs))?)
        }
        DenoiserChoice::Tcp { address, timeout_secs } => {
            Box::new(ExternalDenoiser::connect(address.as_str(), schedule.timesteps, timeout(timeout_secs))?)
        }
    })
}

/// The synthetic train/test split described by `cfg.dataset` and `cfg.seed`.
pub fn generate_dataset(cfg: &PipelineConfig) -> Result<Dataset> {
    let d = &cfg.dataset;
    Ok(Dataset {
        classes: d.classes.iter().map(|k| k.name().to_string()).collect(),
        train: gen_source_dataset(&d.classes, d.train_per_class, d.n_points, derive_seed(cfg.seed, &[TAG_DATA_TRAIN]))?,
        test: gen_source_dataset(&d.classes, d.test_per_class, d.n_points, derive_seed(cfg.seed, &[TAG_DATA_TEST]))?,
    })
}

/// Trains a fresh classifier on `data.train` with the settings in `cfg`.
pub fn train_classifier(cfg: &PipelineConfig, data: &Dataset) -> Result<PointClassifier> {
    let mut model = PointClassifier::new(cfg.classifier.hidden, data.classes.len(), derive_seed(cfg.seed, &[TAG_MODEL]))?;
    let train_cfg = TrainConfig { seed: derive_seed(cfg.seed, &[TAG_MODEL, 1]), ..cfg.classifier.train.clone() };
    let history = in_pool(cfg.workers, || train_source(&mut model, &data.train, &train_cfg))??;
    log::info!("classifier trained, final loss {:?}", history.last());
    Ok(model)
}

/// Builds the benchmark, the denoiser, and evaluates `cfg.run`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Report> {
    cfg.validate()?;
    let bench = Benchmark::build(cfg)?;
    let denoiser = bench.make_denoiser(&cfg.denoiser, cfg.seed)?;
    let mut report = bench.run(&cfg.run, denoiser.as_ref(), cfg.seed, cfg.workers)?;
    report.config = Some(cfg.clone());
    Ok(report)
}
