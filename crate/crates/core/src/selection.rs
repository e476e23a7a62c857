//! Batch-wise training-set expansion under a labeling budget.
//!
//! Each batch measures every pool sample's distance to the current training
//! set. The `budget` most distant samples are selected for labeling (cut
//! `t_low`); of those, samples within the tolerance-derived confidence cut
//! `t_high` are `NovelTrusted` and the rest `NovelAbstain`. Unselected pool
//! samples are `InsufficientNovelty` and stay in the pool.

use std::collections::BTreeSet;
use std::fmt;

use crate::confidence::{threshold_from_budget, DistanceErrorModel, Threshold};
use crate::corpus::Split;
use crate::embedspace::{EmbeddingSet, PcaModel};
use crate::error::{Error, Result};
use crate::format::fmt_float;
use crate::nnindex::{DistanceOptions, TrainingNeighbors};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Training,
    NovelTrusted,
    InsufficientNovelty,
    NovelAbstain,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Training => "Training",
            Category::NovelTrusted => "NovelTrusted",
            Category::InsufficientNovelty => "InsufficientNovelty",
            Category::NovelAbstain => "NovelAbstain",
        }
    }

    pub fn is_selected(self) -> bool {
        matches!(self, Category::NovelTrusted | Category::NovelAbstain)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionEntry {
    pub id: u64,
    /// Distance to the current training set; 0 for training members.
    pub nn_dist: f64,
    pub category: Category,
    /// First two principal components under the batch's training PCA.
    pub pc: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    pub batch_index: usize,
    /// Training entries first, then pool entries, each in ascending id order.
    pub entries: Vec<SelectionEntry>,
    pub t_low: Threshold,
    pub t_high: Threshold,
}

impl SelectionReport {
    pub fn count(&self, category: Category) -> usize {
        self.entries.iter().filter(|e| e.category == category).count()
    }

    pub fn selected_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.iter().filter(|e| e.category.is_selected()).map(|e| e.id)
    }

    pub fn pool_entries(&self) -> impl Iterator<Item = &SelectionEntry> {
        self.entries.iter().filter(|e| e.category != Category::Training)
    }

    /// `id,pc0,pc1,nn_dist,category` rows, header included.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,pc0,pc1,nn_dist,category\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.id,
                fmt_float(e.pc[0]),
                fmt_float(e.pc[1]),
                fmt_float(e.nn_dist),
                e.category
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionState {
    pub training: BTreeSet<u64>,
    pub pool: BTreeSet<u64>,
    pub history: Vec<SelectionReport>,
}

impl ExpansionState {
    pub fn new(training: BTreeSet<u64>, pool: BTreeSet<u64>) -> Result<Self> {
        if let Some(id) = training.intersection(&pool).next() {
            return Err(Error::Data(format!("id {id} is both in training and pool")));
        }
        Ok(ExpansionState {
            training,
            pool,
            history: Vec::new(),
        })
    }

    /// Train split as the training set, new split as the pool.
    pub fn from_embeddings(embeddings: &EmbeddingSet) -> Result<Self> {
        Self::new(
            embeddings.split(Split::Train).map(|r| r.id).collect(),
            embeddings.split(Split::New).map(|r| r.id).collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionParams {
    pub budget: usize,
    pub tolerance: f64,
    pub distance: DistanceOptions,
}

fn training_pca(embeddings: &EmbeddingSet, training: &BTreeSet<u64>) -> Result<Option<PcaModel>> {
    if training.len() < 2 {
        return Ok(None);
    }
    let rows = training
        .iter()
        .map(|id| {
            embeddings
                .get(*id)
                .map(|r| r.z.as_slice())
                .ok_or_else(|| Error::Data(format!("no embedding for training id {id}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let k = 2.min(embeddings.dim());
    PcaModel::fit(&rows, k).map(Some)
}

fn project(pca: Option<&PcaModel>, z: &[f64]) -> Result<[f64; 2]> {
    let mut pc = [0.0; 2];
    if let Some(p) = pca {
        for (o, v) in pc.iter_mut().zip(p.transform(z)?) {
            *o = v;
        }
    }
    Ok(pc)
}

fn build_report(
    state: &ExpansionState,
    embeddings: &EmbeddingSet,
    calibration: &DistanceErrorModel,
    params: &SelectionParams,
) -> Result<SelectionReport> {
    if state.training.is_empty() {
        return Err(Error::Param("training set is empty".into()));
    }
    let t_high = calibration.threshold_from_tolerance(params.tolerance)?;
    let pca = training_pca(embeddings, &state.training)?;
    let z_of = |id: u64| {
        embeddings
            .get(id)
            .map(|r| r.z.as_slice())
            .ok_or_else(|| Error::Data(format!("no embedding for id {id}")))
    };

    let mut entries = Vec::with_capacity(state.training.len() + state.pool.len());
    for &id in &state.training {
        entries.push(SelectionEntry {
            id,
            nn_dist: 0.0,
            category: Category::Training,
            pc: project(pca.as_ref(), z_of(id)?)?,
        });
    }
    if state.pool.is_empty() {
        return Ok(SelectionReport {
            batch_index: state.history.len(),
            entries,
            t_low: Threshold::Unbounded,
            t_high,
        });
    }

    let neighbors = TrainingNeighbors::build(embeddings, state.training.iter().copied(), &params.distance)?;
    let distances = state
        .pool
        .iter()
        .map(|&id| Ok((id, neighbors.distance(z_of(id)?)?)))
        .collect::<Result<Vec<_>>>()?;
    let budget = threshold_from_budget(&distances, params.budget)?;
    let selected: BTreeSet<u64> = budget.selected.iter().copied().collect();
    for &(id, nn_dist) in &distances {
        let category = if !selected.contains(&id) {
            Category::InsufficientNovelty
        } else if t_high.admits(nn_dist) {
            Category::NovelTrusted
        } else {
            Category::NovelAbstain
        };
        entries.push(SelectionEntry {
            id,
            nn_dist,
            category,
            pc: project(pca.as_ref(), z_of(id)?)?,
        });
    }
    Ok(SelectionReport {
        batch_index: state.history.len(),
        entries,
        t_low: budget.threshold,
        t_high,
    })
}

/// Categorizes every pool sample for the next batch.
pub fn categorize_batch(
    state: &ExpansionState,
    embeddings: &EmbeddingSet,
    calibration: &DistanceErrorModel,
    params: &SelectionParams,
) -> Result<SelectionReport> {
    if state.pool.is_empty() {
        return Err(Error::Param("selection pool is empty".into()));
    }
    build_report(state, embeddings, calibration, params)
}

/// Moves the selected samples of `report` from the pool into training.
pub fn apply_batch(state: &ExpansionState, report: &SelectionReport) -> Result<ExpansionState> {
    if report.batch_index != state.history.len() {
        return Err(Error::Data(format!(
            "report is for batch {} but state is at batch {}",
            report.batch_index,
            state.history.len()
        )));
    }
    let report_training: BTreeSet<u64> = report
        .entries
        .iter()
        .filter(|e| e.category == Category::Training)
        .map(|e| e.id)
        .collect();
    let report_pool: BTreeSet<u64> = report.pool_entries().map(|e| e.id).collect();
    if report_training != state.training || report_pool != state.pool {
        return Err(Error::Data("report does not match the expansion state".into()));
    }
    let mut next = state.clone();
    for id in report.selected_ids() {
        next.pool.remove(&id);
        next.training.insert(id);
    }
    next.history.push(report.clone());
    Ok(next)
}

/// Recomputes embeddings and calibration for a grown training set.
pub trait Reembed {
    fn reembed(
        &mut self,
        batch_index: usize,
        training: &BTreeSet<u64>,
    ) -> Result<(EmbeddingSet, DistanceErrorModel)>;
}

/// Runs `batches` categorize/apply rounds.
///
/// With a `retrainer`, embeddings and calibration are recomputed from the
/// grown training set before every batch after the first. Once the pool is
/// empty the remaining batches record reports without pool entries.
pub fn run_expansion(
    initial: ExpansionState,
    embeddings: &EmbeddingSet,
    calibration: &DistanceErrorModel,
    params: &SelectionParams,
    batches: usize,
    mut retrainer: Option<&mut dyn Reembed>,
) -> Result<ExpansionState> {
    if batches == 0 {
        return Err(Error::Param("batches must be at least 1".into()));
    }
    let mut state = initial;
    let mut current = (embeddings.clone(), calibration.clone());
    for batch in 0..batches {
        if batch > 0 && !state.pool.is_empty() {
            if let Some(r) = retrainer.as_deref_mut() {
                current = r.reembed(batch, &state.training)?;
            }
        }
        let report = build_report(&state, &current.0, &current.1, params)?;
        log::info!(
            "batch {batch}: {} trusted, {} abstain, {} insufficient novelty",
            report.count(Category::NovelTrusted),
            report.count(Category::NovelAbstain),
            report.count(Category::InsufficientNovelty)
        );
        state = apply_batch(&state, &report)?;
    }
    Ok(state)
}
