//! End-to-end experiment orchestration: data generation, training, the
//! correction-time search, cascaded conditional super-resolution, baselines,
//! and evaluation artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::correction::{correct_dataset, select_t1_t2, SearchConfig, TimeSearchResult};
use crate::datagen::{build_advection_suite, AdvectionProblem, AdvectionSuite};
use crate::grid::io::{export_csv, load_dataset, save_dataset};
use crate::grid::{mean_spectrum, prolong, restrict, Dataset, Field, ProvenanceTag};
use crate::metrics::{Metric, MetricReport};
use crate::noise::NoiseSchedule;
use crate::score::{
    load_checkpoint, save_checkpoint, train_cond, train_uncond, NetArch, ScoreModel, TrainConfig,
};
use crate::sde::{em_sample_cond, OdeTolerances};
use crate::seeds;
use crate::{Error, Result};

/// Sampler settings for the super-resolution cascade.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub em_steps: usize,
    /// Base of the super-resolution noise schedule (the correction model
    /// keeps the default base).
    pub sigma_max_base: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            em_steps: 1000,
            sigma_max_base: 50.0,
        }
    }
}

/// Search settings in serializable form (see [`SearchConfig`]).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSection {
    pub t_e: f64,
    pub n_t1: usize,
    pub n_t2: usize,
    pub c1: f64,
    pub c2: f64,
    pub metric: String,
    pub repeats: usize,
}

impl Default for SearchSection {
    fn default() -> Self {
        let d = SearchConfig::default();
        SearchSection {
            t_e: d.t_e,
            n_t1: d.n_t1,
            n_t2: d.n_t2,
            c1: d.c1,
            c2: d.c2,
            metric: d.metric.to_string(),
            repeats: d.repeats,
        }
    }
}

impl SearchSection {
    pub fn to_config(&self, seed: u64) -> Result<SearchConfig> {
        Ok(SearchConfig {
            t_e: self.t_e,
            n_t1: self.n_t1,
            n_t2: self.n_t2,
            c1: self.c1,
            c2: self.c2,
            metric: self.metric.parse()?,
            repeats: self.repeats,
            tol: OdeTolerances::default(),
            seed,
        })
    }
}

/// Data-generation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    pub n_train: usize,
    pub n_test: usize,
    /// Resolution ladder, coarse to fine; each step must be an integer
    /// refinement of the previous.
    pub resolutions: Vec<usize>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            n_train: 512,
            n_test: 64,
            resolutions: vec![25, 50, 100],
        }
    }
}

/// Model provisioning: train from scratch (default) or load checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelsSection {
    /// When false, all checkpoint paths below must exist.
    pub train: bool,
    pub correction: Option<PathBuf>,
    #[serde(default)]
    pub stages: Vec<PathBuf>,
}

impl Default for ModelsSection {
    fn default() -> Self {
        ModelsSection {
            train: true,
            correction: None,
            stages: Vec::new(),
        }
    }
}

/// The full experiment configuration, loadable from TOML.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub problem: AdvectionProblem,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub arch: NetArch,
    /// Optional overrides for the conditional super-resolution stages; the
    /// stages fall back to `[train]` / `[arch]` when unset.
    #[serde(default)]
    pub sr_train: Option<TrainConfig>,
    #[serde(default)]
    pub sr_arch: Option<NetArch>,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub models: ModelsSection,
    /// Low-fidelity variant the pipeline corrects (one of the suite names).
    #[serde(default = "default_bias")]
    pub bias: String,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<String>,
}

fn default_bias() -> String {
    "godunov".to_string()
}

fn default_metrics() -> Vec<String> {
    vec!["tvd".into(), "rmse".into(), "melrw".into()]
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.data.resolutions;
        if r.len() < 2 {
            return Err(Error::Config(
                "resolution ladder needs at least two levels".into(),
            ));
        }
        for w in r.windows(2) {
            if w[1] <= w[0] || w[1] % w[0] != 0 {
                return Err(Error::Config(format!(
                    "resolution {} is not an integer refinement of {}",
                    w[1], w[0]
                )));
            }
        }
        if self.data.n_train == 0 || self.data.n_test == 0 {
            return Err(Error::Config("empty train or test split".into()));
        }
        if self.sampling.em_steps == 0 {
            return Err(Error::Config("em_steps must be at least 1".into()));
        }
        for m in &self.metrics {
            let _: Metric = m.parse()?;
        }
        Ok(())
    }

    pub fn parsed_metrics(&self) -> Vec<Metric> {
        self.metrics.iter().map(|m| m.parse().unwrap()).collect()
    }
}

/// A produced file with its content hash.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

/// Summary of a full pipeline run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub search: TimeSearchResult,
    /// metric values per method, keyed method -> metric -> value
    pub results: BTreeMap<String, BTreeMap<String, f64>>,
    /// wall-clock seconds per stage
    pub timings: BTreeMap<String, f64>,
    pub artifacts: Vec<Artifact>,
    /// indices of test samples whose correction solve failed
    pub failed_corrections: Vec<usize>,
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

fn record_artifact(list: &mut Vec<Artifact>, root: &Path, path: &Path) -> Result<()> {
    let rel = path.strip_prefix(root).unwrap_or(path);
    list.push(Artifact {
        path: rel.display().to_string(),
        sha256: hash_file(path)?,
    });
    Ok(())
}

fn restrict_dataset(data: &Dataset, factor: usize) -> Result<Dataset> {
    data.try_map(|f| restrict(f, factor))
}

fn prolong_dataset(data: &Dataset, factor: usize) -> Result<Dataset> {
    data.try_map(|f| prolong(f, factor))
}

/// Restrict a fine dataset down the ladder, returning one dataset per level
/// (coarse to fine; the last entry is the input).
fn ladder(data: &Dataset, resolutions: &[usize]) -> Result<Vec<Dataset>> {
    let fine = *resolutions.last().unwrap();
    if data.resolution() != fine {
        return Err(Error::ResolutionMismatch {
            expected: fine,
            got: data.resolution(),
        });
    }
    resolutions
        .iter()
        .map(|&r| {
            if r == fine {
                Ok(data.clone())
            } else {
                restrict_dataset(data, fine / r)
            }
        })
        .collect()
}

/// Run one conditional super-resolution stage over a whole dataset with
/// per-sample derived noise streams.
pub fn superresolve(
    model: &ScoreModel,
    low: &Dataset,
    em_steps: usize,
    seed: u64,
) -> Result<Dataset> {
    use rayon::prelude::*;
    let fields: Vec<Field> = low
        .fields()
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let mut rng = seeds::stream(seed, &[0x7372, i as u64]);
            em_sample_cond(model, f, em_steps, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(fields, low.tag().clone())
}

/// Apply the full cascade of conditional stages, coarse to fine, returning
/// the output of every stage (finest last).
pub fn cascade(
    stages: &[ScoreModel],
    low: &Dataset,
    em_steps: usize,
    seed: u64,
) -> Result<Vec<Dataset>> {
    let mut outputs = Vec::with_capacity(stages.len());
    let mut current = low.clone();
    for (level, model) in stages.iter().enumerate() {
        current = superresolve(model, &current, em_steps, seeds::derive_seed(seed, &[level as u64]))?;
        outputs.push(current.clone());
    }
    Ok(outputs)
}

fn require_checkpoint(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let path = path
        .clone()
        .ok_or_else(|| Error::Config(format!("no {what} checkpoint configured and training is disabled")))?;
    if !path.exists() {
        return Err(Error::Config(format!(
            "missing {what} checkpoint: {}",
            path.display()
        )));
    }
    Ok(path)
}

/// Train (or load, per the models section) the unconditional correction
/// model and the conditional cascade for the given resolution ladder.
pub fn train_models(
    cfg: &ExperimentConfig,
    train_levels: &[Dataset],
) -> Result<(ScoreModel, Vec<ScoreModel>)> {
    let n_stages = train_levels.len() - 1;
    if !cfg.models.train {
        let uncond = load_checkpoint(&require_checkpoint(&cfg.models.correction, "correction")?)?;
        if cfg.models.stages.len() != n_stages {
            return Err(Error::Config(format!(
                "{} stage checkpoints configured, ladder needs {n_stages}",
                cfg.models.stages.len()
            )));
        }
        let stages = cfg
            .models
            .stages
            .iter()
            .map(|p| load_checkpoint(&require_checkpoint(&Some(p.clone()), "stage")?))
            .collect::<Result<Vec<_>>>()?;
        return Ok((uncond, stages));
    }

    let corr_sched = NoiseSchedule::default();
    let sr_sched = NoiseSchedule::new(cfg.sampling.sigma_max_base)?;

    let mut tc = cfg.train.clone();
    tc.seed = seeds::derive_seed(cfg.seed, &[0x756e63]);
    let (uncond, _) = train_uncond(&train_levels[0], &tc, &cfg.arch, corr_sched)?;

    let sr_train = cfg.sr_train.as_ref().unwrap_or(&cfg.train);
    let sr_arch = cfg.sr_arch.as_ref().unwrap_or(&cfg.arch);
    let mut stages = Vec::new();
    for level in 0..n_stages {
        let mut tc = sr_train.clone();
        tc.seed = seeds::derive_seed(cfg.seed, &[0x7372, level as u64]);
        let (model, _) = train_cond(
            &train_levels[level],
            &train_levels[level + 1],
            &tc,
            sr_arch,
            sr_sched.clone(),
        )?;
        stages.push(model);
    }
    Ok((uncond, stages))
}

fn write_spectra_csv(path: &Path, sets: &[(&str, &Dataset)]) -> Result<()> {
    let mut out = String::from("k");
    for (name, _) in sets {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let spectra: Vec<_> = sets.iter().map(|(_, d)| mean_spectrum(d)).collect();
    let bins = spectra[0].energies().len();
    for k in 0..bins {
        out.push_str(&k.to_string());
        for s in &spectra {
            out.push_str(&format!(",{}", s.energies()[k]));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

fn write_tvd_quantiles_csv(
    path: &Path,
    methods: &[(&str, &Dataset)],
    reference: &Dataset,
) -> Result<()> {
    let mut out = String::from("method,q10,q50,q90\n");
    for (name, data) in methods {
        let mut per = crate::metrics::tvd_per_sample(data, reference)?;
        per.sort_by(|a, b| a.total_cmp(b));
        out.push_str(&format!(
            "{name},{},{},{}\n",
            quantile(&per, 0.1),
            quantile(&per, 0.5),
            quantile(&per, 0.9)
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Execute the whole experiment into `out_dir`:
/// generate data, train or load models, search the correction times, correct
/// the biased coarse data, cascade to the fine grid, and evaluate every
/// stage against the high-fidelity reference alongside two baselines.
///
/// On a stage failure the partial report is written to `report_partial.json`
/// and the error names the failing stage.
pub fn run_dcsr(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut state = StageState::default();
    match run_stages(cfg, out_dir, &mut state) {
        Ok(report) => Ok(report),
        Err(e) => {
            let partial = serde_json::json!({
                "config": cfg,
                "failed_stage": state.stage,
                "error": e.to_string(),
                "timings": state.timings,
                "artifacts": state.artifacts,
            });
            if let Ok(text) = serde_json::to_string_pretty(&partial) {
                let _ = fs::write(out_dir.join("report_partial.json"), text);
            }
            Err(Error::Stage {
                stage: state.stage.clone(),
                source: Box::new(e),
            })
        }
    }
}

#[derive(Default)]
struct StageState {
    stage: String,
    timings: BTreeMap<String, f64>,
    artifacts: Vec<Artifact>,
}

fn run_stages(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    state: &mut StageState,
) -> Result<RunReport> {
    let resolutions = &cfg.data.resolutions;
    let fine = *resolutions.last().unwrap();
    let coarse = resolutions[0];

    // data
    state.stage = "datagen".into();
    let t0 = Instant::now();
    let suite = build_advection_suite(
        &cfg.problem,
        fine,
        cfg.data.n_train,
        cfg.data.n_test,
        seeds::derive_seed(cfg.seed, &[0x64617461]),
    )?;
    let lf_fine = suite
        .lf_test
        .iter()
        .find(|(name, _)| *name == cfg.bias)
        .map(|(_, d)| d.clone())
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown bias '{}'; expected one of {}",
                cfg.bias,
                suite
                    .lf_test
                    .iter()
                    .map(|(n, _)| n.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        })?;
    let train_levels = ladder(&suite.hf_train, resolutions)?;
    let test_levels = ladder(&suite.hf_test, resolutions)?;
    let lf_coarse = restrict_dataset(&lf_fine, fine / coarse)?;
    state.timings.insert("datagen".into(), t0.elapsed().as_secs_f64());

    // models
    state.stage = "train".into();
    let t0 = Instant::now();
    let (uncond, stages) = train_models(cfg, &train_levels)?;
    state.timings.insert("train".into(), t0.elapsed().as_secs_f64());
    let ckpt = out_dir.join("correction_model.ckpt");
    save_checkpoint(&uncond, &ckpt)?;
    record_artifact(&mut state.artifacts, out_dir, &ckpt)?;
    for (i, stage) in stages.iter().enumerate() {
        let p = out_dir.join(format!("sr_stage_{i}.ckpt"));
        save_checkpoint(stage, &p)?;
        record_artifact(&mut state.artifacts, out_dir, &p)?;
    }

    // correction time search on the coarse level
    state.stage = "search".into();
    let t0 = Instant::now();
    let search_cfg = cfg
        .search
        .to_config(seeds::derive_seed(cfg.seed, &[0x736561]))?;
    let search = select_t1_t2(&lf_coarse, &test_levels[0], &uncond, &search_cfg)?;
    state.timings.insert("search".into(), t0.elapsed().as_secs_f64());
    let grid_path = out_dir.join("search_grid.csv");
    let grid_file = fs::File::create(&grid_path)?;
    search.write_csv(grid_file)?;
    record_artifact(&mut state.artifacts, out_dir, &grid_path)?;

    // correction
    state.stage = "correct".into();
    let t0 = Instant::now();
    let (corrected, failed_corrections) = correct_dataset(
        &lf_coarse,
        &uncond,
        search.t1_star,
        search.t2_star,
        seeds::derive_seed(cfg.seed, &[0x636f72]),
        &search_cfg.tol,
    )?;
    let corrected = Dataset::new(
        corrected.fields().to_vec(),
        corrected_tag(corrected.tag()),
    )?;
    state.timings.insert("correct".into(), t0.elapsed().as_secs_f64());

    // cascaded super-resolution: corrected (method) and uncorrected (baseline)
    state.stage = "superres".into();
    let t0 = Instant::now();
    let sr_seed = seeds::derive_seed(cfg.seed, &[0x63617363]);
    let dcsr_levels = cascade(&stages, &corrected, cfg.sampling.em_steps, sr_seed)?;
    let lf_sr_levels = cascade(&stages, &lf_coarse, cfg.sampling.em_steps, sr_seed)?;
    state.timings.insert("superres".into(), t0.elapsed().as_secs_f64());
    let lf_interp = prolong_dataset(&lf_coarse, fine / coarse)?;
    let dcsr = dcsr_levels.last().unwrap();
    let lf_sr = lf_sr_levels.last().unwrap();

    // evaluation: one metric block per stage output plus the baselines
    state.stage = "evaluate".into();
    let t0 = Instant::now();
    let metrics = cfg.parsed_metrics();
    let reference = &test_levels[resolutions.len() - 1];
    let mut blocks: Vec<(String, &Dataset, &Dataset)> = vec![
        (format!("lf_raw@{coarse}"), &lf_coarse, &test_levels[0]),
        (format!("corrected@{coarse}"), &corrected, &test_levels[0]),
    ];
    for (i, (sr, dc)) in lf_sr_levels.iter().zip(&dcsr_levels).enumerate() {
        let res = resolutions[i + 1];
        blocks.push((format!("lf_sr@{res}"), sr, &test_levels[i + 1]));
        blocks.push((format!("dcsr@{res}"), dc, &test_levels[i + 1]));
    }
    blocks.push((format!("lf_interp@{fine}"), &lf_interp, reference));
    let mut results = BTreeMap::new();
    for (name, data, reference) in &blocks {
        let report = MetricReport::compute(&metrics, data, reference)?;
        let path = out_dir.join(format!("metrics_{}.csv", name.replace('@', "_")));
        report.write_csv(&path)?;
        record_artifact(&mut state.artifacts, out_dir, &path)?;
        results.insert(name.clone(), report.values);
    }
    state.timings.insert("evaluate".into(), t0.elapsed().as_secs_f64());

    // plotting series
    state.stage = "report".into();
    let spectra_path = out_dir.join("spectra.csv");
    write_spectra_csv(
        &spectra_path,
        &[
            ("reference", reference),
            ("lf_interp", &lf_interp),
            ("lf_sr", lf_sr),
            ("dcsr", dcsr),
        ],
    )?;
    record_artifact(&mut state.artifacts, out_dir, &spectra_path)?;
    let tvd_path = out_dir.join("tvd_quantiles.csv");
    write_tvd_quantiles_csv(
        &tvd_path,
        &[
            ("lf_interp", &lf_interp),
            ("lf_sr", lf_sr),
            ("dcsr", dcsr),
        ],
        reference,
    )?;
    record_artifact(&mut state.artifacts, out_dir, &tvd_path)?;

    // outputs
    for (name, data) in [
        ("corrected_coarse", &corrected),
        ("dcsr_fine", dcsr),
        ("reference_fine", reference),
    ] {
        let dir = out_dir.join(name);
        save_dataset(data, &dir)?;
        let csv = out_dir.join(format!("{name}.csv"));
        export_csv(data, &csv)?;
        record_artifact(&mut state.artifacts, out_dir, &csv)?;
    }

    let report = RunReport {
        config: cfg.clone(),
        search,
        results,
        timings: state.timings.clone(),
        artifacts: state.artifacts.clone(),
        failed_corrections,
    };
    let report_path = out_dir.join("report.json");
    fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Compare a prediction dataset against a reference on disk.
pub fn evaluate_dirs(
    pred_dir: &Path,
    reference_dir: &Path,
    metrics: &[Metric],
) -> Result<MetricReport> {
    let pred = load_dataset(pred_dir)?;
    let reference = load_dataset(reference_dir)?;
    MetricReport::compute(metrics, &pred, &reference)
}

/// Persist every dataset of a generated suite under `out_dir`.
pub fn save_suite(suite: &AdvectionSuite, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut save = |name: &str, data: &Dataset| -> Result<()> {
        let dir = out_dir.join(name);
        save_dataset(data, &dir)?;
        written.push(dir);
        Ok(())
    };
    save("hf_train", &suite.hf_train)?;
    save("hf_test", &suite.hf_test)?;
    for (name, data) in &suite.lf_test {
        save(&format!("lf_{name}"), data)?;
    }
    Ok(written)
}

/// Provenance tag helper for externally supplied corrected datasets.
pub fn corrected_tag(source: &ProvenanceTag) -> ProvenanceTag {
    ProvenanceTag::new("corrected", &source.bias_source, source.seed)
}
