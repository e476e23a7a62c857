//! End-to-end orchestration behind the CLI.
//!
//! A run is a pure function of its [`RunConfig`]; every command reads its
//! inputs from and writes its outputs to the run directory:
//!
//! | file | written by |
//! |------|------------|
//! | `config.json` | every command (resolved configuration) |
//! | `corpus.ncpc` | `generate` |
//! | `model.ncae`, `loss_history.csv` | `train` |
//! | `embeddings.csv` | `embed` |
//! | `calibration.json`, `fig3.csv` | `fit` |
//! | `verdicts.csv` | `score` |
//! | `fig4_batch{i}.csv`, `expansion_summary.csv` | `select` |
//! | `fig2a.csv`, `fig2b.csv` | `report` |

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoenc::{init_model, train, AutoencoderModel, TrainConfig, DEFAULT_Z_DIM};
use crate::confidence::{
    calibrate, rank_correlation, threshold_from_budget, verdict_for_distance, Decision, DistanceErrorModel,
    Threshold, Verdict,
};
use crate::corpus::{Corpus, CorpusSpec, Split};
use crate::embedspace::{EmbeddingRecord, EmbeddingSet};
use crate::error::{Error, Result};
use crate::format::fmt_float;
use crate::nnindex::{DistanceOptions, TrainingNeighbors};
use crate::rng::derive_seed;
use crate::selection::{run_expansion, Category, ExpansionState, Reembed, SelectionParams};

pub const CONFIG_VERSION: u32 = 1;
const DEMO_CONFIG: &str = include_str!("../configs/demo.json");

pub const CORPUS_FILE: &str = "corpus.ncpc";
pub const MODEL_FILE: &str = "model.ncae";
pub const LOSS_FILE: &str = "loss_history.csv";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const FIG3_FILE: &str = "fig3.csv";
pub const VERDICTS_FILE: &str = "verdicts.csv";
pub const EXPANSION_FILE: &str = "expansion_summary.csv";
pub const FIG2A_FILE: &str = "fig2a.csv";
pub const FIG2B_FILE: &str = "fig2b.csv";

pub fn fig4_file(batch: usize) -> String {
    format!("fig4_batch{batch}.csv")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub z_dim: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            z_dim: DEFAULT_Z_DIM,
            init_seed: 0,
        }
    }
}

/// Where `score` takes its distance threshold from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdSource {
    /// Largest distance whose predicted error is within `tolerance`.
    #[default]
    Tolerance,
    /// The `budget` most distant new samples are abstained on.
    Budget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub corpus: CorpusSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub neighbors: DistanceOptions,
    pub tolerance: f64,
    pub budget: usize,
    pub batches: usize,
    #[serde(default)]
    pub retrain: bool,
    #[serde(default)]
    pub threshold_source: ThresholdSource,
    pub out: PathBuf,
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub budget: Option<usize>,
    pub tolerance: Option<f64>,
    pub k: Option<usize>,
}

impl RunConfig {
    pub fn demo() -> Self {
        Self::from_json(DEMO_CONFIG).expect("bundled demo config is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::input(path, e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.corpus.seed = s;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(b) = o.budget {
            self.budget = b;
        }
        if let Some(t) = o.tolerance {
            self.tolerance = t;
        }
        if let Some(k) = o.k {
            self.neighbors.k = k;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "config",
                version: self.version,
            });
        }
        self.corpus.validate()?;
        self.train.validate()?;
        if self.model.z_dim == 0 {
            return Err(Error::Param("model.z_dim must be at least 1".into()));
        }
        if self.neighbors.k == 0 {
            return Err(Error::Param("neighbors.k must be at least 1".into()));
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(Error::Param("tolerance must be nonnegative".into()));
        }
        if self.batches == 0 {
            return Err(Error::Param("batches must be at least 1".into()));
        }
        Ok(())
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    fn selection_params(&self) -> SelectionParams {
        SelectionParams {
            budget: self.budget,
            tolerance: self.tolerance,
            distance: self.neighbors,
        }
    }

    fn prepare_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let path = self.path("config.json");
        std::fs::write(&path, self.to_json() + "\n").map_err(|e| Error::io(&path, e))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// generate

#[derive(Debug, Clone)]
pub struct GenerateOutcome {
    pub path: PathBuf,
    pub counts: Vec<(Split, String, usize)>,
}

impl GenerateOutcome {
    pub fn summary(&self) -> String {
        let parts: Vec<String> = self
            .counts
            .iter()
            .map(|(s, f, n)| format!("{s}/{f}={n}"))
            .collect();
        format!("generate: wrote {} ({})", self.path.display(), parts.join(" "))
    }
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<GenerateOutcome> {
    cfg.prepare_out()?;
    let corpus = cfg.corpus.generate()?;
    let path = cfg.path(CORPUS_FILE);
    corpus.save(&path)?;
    let counts = cfg
        .corpus
        .summary()
        .into_iter()
        .map(|((s, f), n)| (s, f.to_string(), n))
        .collect();
    Ok(GenerateOutcome { path, counts })
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub loss_history: Vec<f64>,
}

impl TrainOutcome {
    pub fn summary(&self) -> String {
        format!(
            "train: {} epochs, loss {:.6} -> {:.6}",
            self.loss_history.len(),
            self.loss_history.first().copied().unwrap_or(f64::NAN),
            self.loss_history.last().copied().unwrap_or(f64::NAN)
        )
    }
}

fn train_on(cfg: &RunConfig, corpus: &Corpus, training: &BTreeSet<u64>, round: u64) -> Result<(AutoencoderModel, Vec<f64>)> {
    let clouds: Vec<_> = corpus
        .clouds
        .iter()
        .filter(|c| training.contains(&c.id))
        .map(|c| c.cloud.clone())
        .collect();
    // Round 0 uses the configured seeds; retraining rounds derive new ones.
    let (init_seed, train_seed) = if round == 0 {
        (cfg.model.init_seed, cfg.train.seed)
    } else {
        (derive_seed(cfg.model.init_seed, round), derive_seed(cfg.train.seed, round))
    };
    let model = init_model(corpus.n_points, cfg.model.z_dim, init_seed)?;
    let tc = TrainConfig {
        seed: train_seed,
        ..cfg.train.clone()
    };
    train(&model, &clouds, &tc)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.prepare_out()?;
    let corpus = Corpus::load(&cfg.path(CORPUS_FILE))?;
    let training: BTreeSet<u64> = corpus.split(Split::Train).map(|c| c.id).collect();
    let (model, history) = train_on(cfg, &corpus, &training, 0)?;
    model.save(&cfg.path(MODEL_FILE))?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in history.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", i + 1, fmt_float(*l)));
    }
    write_text(&cfg.path(LOSS_FILE), &csv)?;
    Ok(TrainOutcome { loss_history: history })
}

// ---------------------------------------------------------------------------
// embed

/// Latent vector and reconstruction error of every corpus cloud.
pub fn embed_corpus(model: &AutoencoderModel, corpus: &Corpus) -> Result<EmbeddingSet> {
    let records = corpus
        .clouds
        .par_iter()
        .map(|c| {
            let z = model.encode(&c.cloud)?;
            let recon = model.decode(&z)?;
            let error = crate::synth::chamfer_distance(&c.cloud, &recon)?;
            Ok(EmbeddingRecord {
                id: c.id,
                split: c.split,
                z,
                error: Some(error),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EmbeddingSet::new(records)
}

#[derive(Debug, Clone)]
pub struct EmbedOutcome {
    pub n_train: usize,
    pub n_new: usize,
    pub mean_error_train: f64,
    pub mean_error_new: f64,
}

impl EmbedOutcome {
    pub fn summary(&self) -> String {
        format!(
            "embed: {} train (mean err {:.6}), {} new (mean err {:.6})",
            self.n_train, self.mean_error_train, self.n_new, self.mean_error_new
        )
    }
}

fn mean_error<'a>(recs: impl Iterator<Item = &'a EmbeddingRecord>) -> f64 {
    let errs: Vec<f64> = recs.filter_map(|r| r.error).collect();
    if errs.is_empty() {
        f64::NAN
    } else {
        errs.iter().sum::<f64>() / errs.len() as f64
    }
}

pub fn cmd_embed(cfg: &RunConfig) -> Result<EmbedOutcome> {
    cfg.prepare_out()?;
    let corpus = Corpus::load(&cfg.path(CORPUS_FILE))?;
    let model = AutoencoderModel::load(&cfg.path(MODEL_FILE))?;
    let set = embed_corpus(&model, &corpus)
        .map_err(|e| Error::input(cfg.path(MODEL_FILE), format!("does not fit the corpus: {e}")))?;
    set.write_csv(&cfg.path(EMBEDDINGS_FILE))?;
    Ok(EmbedOutcome {
        n_train: set.split(Split::Train).count(),
        n_new: set.split(Split::New).count(),
        mean_error_train: mean_error(set.split(Split::Train)),
        mean_error_new: mean_error(set.split(Split::New)),
    })
}

// ---------------------------------------------------------------------------
// fit

/// One row of the error-vs-distance report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceErrorRow {
    pub id: u64,
    pub nn_dist: f64,
    pub err: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub calibration: DistanceErrorModel,
    pub rows: Vec<DistanceErrorRow>,
    pub spearman: Option<f64>,
}

impl FitOutcome {
    pub fn summary(&self) -> String {
        let rho = self
            .spearman
            .map_or_else(|| "undefined".to_string(), |r| format!("{r:.4}"));
        format!(
            "fit: {} knots from {} calibration samples; spearman rho(nn_dist, err) over {} new samples = {rho}",
            self.calibration.knots().len(),
            self.calibration.n_calibration(),
            self.rows.len()
        )
    }
}

fn load_embeddings(cfg: &RunConfig) -> Result<EmbeddingSet> {
    let path = cfg.path(EMBEDDINGS_FILE);
    let set = EmbeddingSet::read_csv(&path)?;
    if set.split(Split::Train).next().is_none() {
        return Err(Error::input(&path, "field `split`: no train rows"));
    }
    if let Some(r) = set.records().iter().find(|r| r.error.is_none()) {
        return Err(Error::input(&path, format!("row id {}: field `err` is empty", r.id)));
    }
    Ok(set)
}

fn train_ids(set: &EmbeddingSet) -> BTreeSet<u64> {
    set.split(Split::Train).map(|r| r.id).collect()
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<FitOutcome> {
    cfg.prepare_out()?;
    let set = load_embeddings(cfg)?;
    let neighbors = TrainingNeighbors::build(&set, train_ids(&set), &cfg.neighbors)?;
    let (calibration, _) = calibrate(&set, &neighbors)?;
    calibration.save(&cfg.path(CALIBRATION_FILE))?;

    let rows = set
        .split(Split::New)
        .map(|r| {
            Ok(DistanceErrorRow {
                id: r.id,
                nn_dist: neighbors.distance(r.z.as_slice())?,
                err: r.error.expect("checked on load"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut csv = String::from("id,nn_dist,err\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{}\n", r.id, fmt_float(r.nn_dist), fmt_float(r.err)));
    }
    write_text(&cfg.path(FIG3_FILE), &csv)?;

    let xs: Vec<f64> = rows.iter().map(|r| r.nn_dist).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.err).collect();
    let spearman = rank_correlation(&xs, &ys).ok();
    Ok(FitOutcome {
        calibration,
        rows,
        spearman,
    })
}

// ---------------------------------------------------------------------------
// score

#[derive(Debug, Clone)]
pub struct ScoreOutcome {
    pub threshold: Threshold,
    pub verdicts: Vec<Verdict>,
}

impl ScoreOutcome {
    pub fn count(&self, d: Decision) -> usize {
        self.verdicts.iter().filter(|v| v.decision == d).count()
    }

    pub fn summary(&self) -> String {
        format!(
            "score: threshold {}; {} trusted, {} abstain",
            self.threshold,
            self.count(Decision::Trusted),
            self.count(Decision::Abstain)
        )
    }
}

fn load_calibration(cfg: &RunConfig) -> Result<DistanceErrorModel> {
    DistanceErrorModel::load(&cfg.path(CALIBRATION_FILE))
}

pub fn cmd_score(cfg: &RunConfig) -> Result<ScoreOutcome> {
    cfg.prepare_out()?;
    let set = load_embeddings(cfg)?;
    let calibration = load_calibration(cfg)?;
    let neighbors = TrainingNeighbors::build(&set, train_ids(&set), &cfg.neighbors)?;
    let distances = set
        .split(Split::New)
        .map(|r| Ok((r.id, neighbors.distance(r.z.as_slice())?)))
        .collect::<Result<Vec<_>>>()?;

    let (threshold, verdicts) = match cfg.threshold_source {
        ThresholdSource::Tolerance => {
            let t = calibration.threshold_from_tolerance(cfg.tolerance)?;
            let v = distances
                .iter()
                .map(|&(id, d)| verdict_for_distance(id, d, &calibration, t))
                .collect::<Result<Vec<_>>>()?;
            (t, v)
        }
        ThresholdSource::Budget => {
            let sel = threshold_from_budget(&distances, cfg.budget)?;
            let chosen: BTreeSet<u64> = sel.selected.iter().copied().collect();
            let v = distances
                .iter()
                .map(|&(id, d)| {
                    let mut v = verdict_for_distance(id, d, &calibration, Threshold::Unbounded)?;
                    if chosen.contains(&id) {
                        v.decision = Decision::Abstain;
                    }
                    Ok(v)
                })
                .collect::<Result<Vec<_>>>()?;
            (sel.threshold, v)
        }
    };

    let mut csv = String::from("id,nn_dist,predicted_err,decision\n");
    for v in &verdicts {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            v.id,
            fmt_float(v.nn_dist),
            fmt_float(v.predicted_error),
            v.decision.name()
        ));
    }
    write_text(&cfg.path(VERDICTS_FILE), &csv)?;
    Ok(ScoreOutcome { threshold, verdicts })
}

// ---------------------------------------------------------------------------
// select

/// Retrains from scratch on the grown training set and re-embeds the corpus.
struct Retrainer<'a> {
    cfg: &'a RunConfig,
    corpus: Corpus,
}

impl Reembed for Retrainer<'_> {
    fn reembed(&mut self, batch_index: usize, training: &BTreeSet<u64>) -> Result<(EmbeddingSet, DistanceErrorModel)> {
        log::info!("retraining on {} samples before batch {batch_index}", training.len());
        let (model, _) = train_on(self.cfg, &self.corpus, training, batch_index as u64)?;
        let set = embed_corpus(&model, &self.corpus)?;
        let neighbors = TrainingNeighbors::build(&set, training.iter().copied(), &self.cfg.neighbors)?;
        let (calibration, _) = calibrate(&set, &neighbors)?;
        Ok((set, calibration))
    }
}

#[derive(Debug, Clone)]
pub struct SelectOutcome {
    pub state: ExpansionState,
}

impl SelectOutcome {
    pub fn summary(&self) -> String {
        let per_batch: Vec<String> = self
            .state
            .history
            .iter()
            .map(|r| {
                format!(
                    "b{}: {}T/{}A/{}I",
                    r.batch_index,
                    r.count(Category::NovelTrusted),
                    r.count(Category::NovelAbstain),
                    r.count(Category::InsufficientNovelty)
                )
            })
            .collect();
        format!(
            "select: training {} pool {} after {} batches ({})",
            self.state.training.len(),
            self.state.pool.len(),
            self.state.history.len(),
            per_batch.join(", ")
        )
    }
}

pub fn cmd_select(cfg: &RunConfig) -> Result<SelectOutcome> {
    cfg.prepare_out()?;
    let set = load_embeddings(cfg)?;
    let calibration = load_calibration(cfg)?;
    let initial = ExpansionState::from_embeddings(&set)?;
    let params = cfg.selection_params();
    let state = if cfg.retrain {
        let mut r = Retrainer {
            cfg,
            corpus: Corpus::load(&cfg.path(CORPUS_FILE))?,
        };
        run_expansion(initial, &set, &calibration, &params, cfg.batches, Some(&mut r))?
    } else {
        run_expansion(initial, &set, &calibration, &params, cfg.batches, None)?
    };

    let mut summary = String::from(
        "batch,training,pool,novel_trusted,novel_abstain,insufficient_novelty,t_low,t_high\n",
    );
    for r in &state.history {
        write_text(&cfg.path(&fig4_file(r.batch_index)), &r.to_csv())?;
        let pool = r.pool_entries().count();
        summary.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.batch_index,
            r.count(Category::Training),
            pool,
            r.count(Category::NovelTrusted),
            r.count(Category::NovelAbstain),
            r.count(Category::InsufficientNovelty),
            r.t_low,
            r.t_high
        ));
    }
    write_text(&cfg.path(EXPANSION_FILE), &summary)?;
    Ok(SelectOutcome { state })
}

// ---------------------------------------------------------------------------
// report

#[derive(Debug, Clone)]
pub struct ReportOutcome {
    pub explained_variance: Vec<f64>,
    pub n_rows: usize,
}

impl ReportOutcome {
    pub fn summary(&self) -> String {
        format!(
            "report: {} samples projected on 2 components (explained variance {})",
            self.n_rows,
            self.explained_variance
                .iter()
                .map(|v| format!("{v:.6}"))
                .collect::<Vec<_>>()
                .join(", ")
        )
    }
}

pub fn cmd_report(cfg: &RunConfig) -> Result<ReportOutcome> {
    cfg.prepare_out()?;
    let set = load_embeddings(cfg)?;
    let pca = set.fit_pca(2.min(set.dim()))?;
    let pcs = |r: &EmbeddingRecord| -> Result<[f64; 2]> {
        let p = pca.transform(r.z.as_slice())?;
        Ok([p[0], p.get(1).copied().unwrap_or(0.0)])
    };
    let mut a = String::from("id,split,pc0,pc1\n");
    let mut b = String::from("id,split,pc0,pc1,err\n");
    for r in set.records() {
        let [p0, p1] = pcs(r)?;
        a.push_str(&format!("{},{},{},{}\n", r.id, r.split, fmt_float(p0), fmt_float(p1)));
        if r.split == Split::New {
            b.push_str(&format!(
                "{},{},{},{},{}\n",
                r.id,
                r.split,
                fmt_float(p0),
                fmt_float(p1),
                fmt_float(r.error.expect("checked on load"))
            ));
        }
    }
    write_text(&cfg.path(FIG2A_FILE), &a)?;
    write_text(&cfg.path(FIG2B_FILE), &b)?;
    Ok(ReportOutcome {
        explained_variance: pca.explained_variance,
        n_rows: set.len(),
    })
}

// ---------------------------------------------------------------------------
// run

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub generate: GenerateOutcome,
    pub train: TrainOutcome,
    pub embed: EmbedOutcome,
    pub fit: FitOutcome,
    pub score: ScoreOutcome,
    pub select: SelectOutcome,
    pub report: ReportOutcome,
}

impl RunOutcome {
    pub fn summary_lines(&self) -> Vec<String> {
        vec![
            self.generate.summary(),
            self.train.summary(),
            self.embed.summary(),
            self.fit.summary(),
            self.score.summary(),
            self.select.summary(),
            self.report.summary(),
        ]
    }
}

/// Every command in pipeline order.
pub fn run_all(cfg: &RunConfig) -> Result<RunOutcome> {
    Ok(RunOutcome {
        generate: cmd_generate(cfg)?,
        train: cmd_train(cfg)?,
        embed: cmd_embed(cfg)?,
        fit: cmd_fit(cfg)?,
        score: cmd_score(cfg)?,
        select: cmd_select(cfg)?,
        report: cmd_report(cfg)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_config_parses_and_round_trips() {
        let cfg = RunConfig::demo();
        assert_eq!(cfg.corpus.n_points, 64);
        assert_eq!(cfg.corpus.count(Split::Train), 300);
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn config_validation() {
        let mut cfg = RunConfig::demo();
        cfg.version = 2;
        assert!(matches!(cfg.validate(), Err(Error::UnsupportedVersion { .. })));
        let text = RunConfig::demo().to_json().replace("\"budget\"", "\"budgett\"");
        assert!(RunConfig::from_json(&text).is_err());
        let mut cfg = RunConfig::demo();
        assert!(cfg
            .apply(&Overrides {
                k: Some(0),
                ..Overrides::default()
            })
            .is_err());
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = RunConfig::demo();
        cfg.apply(&Overrides {
            seed: Some(5),
            out: Some("x".into()),
            budget: Some(3),
            tolerance: Some(0.5),
            k: Some(2),
        })
        .unwrap();
        assert_eq!(
            (cfg.corpus.seed, cfg.out.as_path(), cfg.budget, cfg.tolerance, cfg.neighbors.k),
            (5, Path::new("x"), 3, 0.5, 2)
        );
    }
}
