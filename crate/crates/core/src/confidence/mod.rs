//! Distance-to-error calibration, thresholds and trust/abstain verdicts.

pub mod isotonic;

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::format::fmt_float;
use crate::embedspace::EmbeddingSet;
use crate::nnindex::{NeighborIndex, TrainingNeighbors};

/// A distance cut. `Unbounded` admits every distance and is written as the
/// string `inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Distance(f64),
    Unbounded,
}

impl Threshold {
    /// `true` when `distance` is at or below the cut.
    pub fn admits(self, distance: f64) -> bool {
        match self {
            Threshold::Distance(t) => distance <= t,
            Threshold::Unbounded => true,
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Threshold::Distance(t) => t,
            Threshold::Unbounded => f64::INFINITY,
        }
    }

    pub fn is_unbounded(self) -> bool {
        matches!(self, Threshold::Unbounded)
    }
}

impl PartialOrd for Threshold {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.as_f64().partial_cmp(&other.as_f64())
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Distance(t) => f.write_str(&fmt_float(*t)),
            Threshold::Unbounded => f.write_str("inf"),
        }
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Threshold::Distance(t) => s.serialize_f64(*t),
            Threshold::Unbounded => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(t) => Ok(Threshold::Distance(t)),
            Raw::Str(s) if s == "inf" => Ok(Threshold::Unbounded),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("invalid threshold `{s}`"))),
        }
    }
}

/// Monotone piecewise-linear map from neighbor distance to expected error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceErrorModel {
    knots: Vec<[f64; 2]>,
    n_calibration: usize,
}

fn check_distance(d: f64) -> Result<()> {
    if d.is_finite() && d >= 0.0 {
        Ok(())
    } else {
        Err(Error::Param(format!("distance must be finite and nonnegative, got {d}")))
    }
}

/// Isotonic least-squares fit of error against distance.
///
/// Pairs are sorted by distance (ties by error, then input order), pooled by
/// pool-adjacent-violators, and each pooled block becomes one knot at the
/// block's mean distance and mean error. Pairs with equal distances are
/// pooled up front so the fit is a function of distance.
pub fn fit_distance_error(pairs: &[(f64, f64)]) -> Result<DistanceErrorModel> {
    if pairs.len() < 2 {
        return Err(Error::Param(format!(
            "calibration needs at least 2 pairs, got {}",
            pairs.len()
        )));
    }
    for &(d, e) in pairs {
        if !(d.is_finite() && d >= 0.0 && e.is_finite() && e >= 0.0) {
            return Err(Error::Data(format!("invalid calibration pair ({d}, {e})")));
        }
    }
    let mut sorted = pairs.to_vec();
    // Stable sort keeps input order among exact duplicates.
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let knots = isotonic::pava(&sorted)
        .into_iter()
        .map(|b| [b.x(), b.y()])
        .collect();
    Ok(DistanceErrorModel {
        knots,
        n_calibration: pairs.len(),
    })
}

impl DistanceErrorModel {
    pub fn new(knots: Vec<[f64; 2]>, n_calibration: usize) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Data("distance-error model has no knots".into()));
        }
        if knots.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Data("distance-error model has non-finite knots".into()));
        }
        for w in knots.windows(2) {
            if w[0][0] >= w[1][0] {
                return Err(Error::Data("knot distances must be strictly increasing".into()));
            }
            if w[0][1] > w[1][1] {
                return Err(Error::Data("knot errors must be non-decreasing".into()));
            }
        }
        Ok(DistanceErrorModel { knots, n_calibration })
    }

    pub fn knots(&self) -> &[[f64; 2]] {
        &self.knots
    }

    pub fn n_calibration(&self) -> usize {
        self.n_calibration
    }

    pub fn max_error(&self) -> f64 {
        self.knots[self.knots.len() - 1][1]
    }

    /// Piecewise-linear interpolation, clamped to the end knots.
    pub fn predict_error(&self, d: f64) -> Result<f64> {
        check_distance(d)?;
        let k = &self.knots;
        let last = k.len() - 1;
        if d <= k[0][0] {
            return Ok(k[0][1]);
        }
        if d >= k[last][0] {
            return Ok(k[last][1]);
        }
        // First knot with distance > d; 1 <= i <= last.
        let i = k.partition_point(|kn| kn[0] <= d);
        let (d0, e0) = (k[i - 1][0], k[i - 1][1]);
        if d == d0 {
            return Ok(e0);
        }
        let (d1, e1) = (k[i][0], k[i][1]);
        Ok(e0 + (d - d0) / (d1 - d0) * (e1 - e0))
    }

    /// Largest distance whose predicted error stays within `tolerance`.
    pub fn threshold_from_tolerance(&self, tolerance: f64) -> Result<Threshold> {
        if tolerance.is_nan() || tolerance < 0.0 {
            return Err(Error::Param(format!("tolerance must be nonnegative, got {tolerance}")));
        }
        let k = &self.knots;
        if self.max_error() <= tolerance {
            return Ok(Threshold::Unbounded);
        }
        if k[0][1] > tolerance {
            return Ok(Threshold::Distance(0.0));
        }
        let i = k.partition_point(|kn| kn[1] <= tolerance);
        let (d0, e0) = (k[i - 1][0], k[i - 1][1]);
        let (d1, e1) = (k[i][0], k[i][1]);
        let d = d0 + (tolerance - e0) / (e1 - e0) * (d1 - d0);
        Ok(Threshold::Distance(d.clamp(d0, d1)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: DistanceErrorModel =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("calibration JSON: {e}")))?;
        Self::new(raw.knots, raw.n_calibration)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::input(path, e.to_string()))
    }
}

/// The `budget` most distant samples and the distance cut they imply.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetSelection {
    /// Smallest selected distance; unbounded when nothing is selected.
    pub threshold: Threshold,
    /// Selected ids, most distant first (ties by ascending id).
    pub selected: Vec<u64>,
}

pub fn threshold_from_budget(distances: &[(u64, f64)], budget: usize) -> Result<BudgetSelection> {
    for &(_, d) in distances {
        check_distance(d)?;
    }
    let mut order = distances.to_vec();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    order.truncate(budget);
    let threshold = order
        .last()
        .map_or(Threshold::Unbounded, |&(_, d)| Threshold::Distance(d));
    Ok(BudgetSelection {
        threshold,
        selected: order.into_iter().map(|(id, _)| id).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Trusted,
    Abstain,
}

impl Decision {
    pub fn name(self) -> &'static str {
        match self {
            Decision::Trusted => "Trusted",
            Decision::Abstain => "Abstain",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub id: u64,
    pub nn_dist: f64,
    pub predicted_error: f64,
    pub decision: Decision,
}

/// Verdict for a sample whose neighbor distance is already known.
pub fn verdict_for_distance(id: u64, nn_dist: f64, model: &DistanceErrorModel, threshold: Threshold) -> Result<Verdict> {
    let predicted_error = model.predict_error(nn_dist)?;
    let decision = if threshold.admits(nn_dist) {
        Decision::Trusted
    } else {
        Decision::Abstain
    };
    Ok(Verdict {
        id,
        nn_dist,
        predicted_error,
        decision,
    })
}

/// Trust the prediction for `z` iff its nearest training neighbor is within
/// `threshold`.
pub fn judge(
    index: &NeighborIndex,
    id: u64,
    z: &[f64],
    model: &DistanceErrorModel,
    threshold: Threshold,
) -> Result<Verdict> {
    verdict_for_distance(id, index.nn_distance(z)?, model, threshold)
}

/// Average (1-based) ranks; tied values share the mean of their ranks.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn rank_correlation(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Param(format!("length mismatch: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::Param("rank correlation needs at least 2 samples".into()));
    }
    if xs.iter().chain(ys).any(|v| v.is_nan()) {
        return Err(Error::Data("rank correlation input contains NaN".into()));
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = xs.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (dx, dy) = (a - mean, b - mean);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("an input is constant"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// One calibration sample: a training embedding's leave-self-out neighbor
/// distance and its reconstruction error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationPoint {
    pub id: u64,
    pub distance: f64,
    pub error: f64,
}

/// Fits the distance-error model on the training members of `neighbors`.
///
/// Each member's distance excludes the member itself, so calibration never
/// sees the zero distances of self-matches.
pub fn calibrate(
    embeddings: &EmbeddingSet,
    neighbors: &TrainingNeighbors,
) -> Result<(DistanceErrorModel, Vec<CalibrationPoint>)> {
    let points = neighbors
        .index()
        .ids()
        .iter()
        .map(|&id| {
            let rec = embeddings
                .get(id)
                .ok_or_else(|| Error::Data(format!("no embedding for training id {id}")))?;
            let error = rec
                .error
                .ok_or_else(|| Error::Data(format!("training embedding {id} has no error")))?;
            Ok(CalibrationPoint {
                id,
                distance: neighbors.distance_leave_self_out(id, rec.z.as_slice())?,
                error,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.distance, p.error)).collect();
    Ok((fit_distance_error(&pairs)?, points))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(knots: &[[f64; 2]]) -> DistanceErrorModel {
        DistanceErrorModel::new(knots.to_vec(), knots.len()).unwrap()
    }

    #[test]
    fn monotone_input_unchanged() {
        let m = fit_distance_error(&[(1.0, 0.1), (2.0, 0.2), (3.0, 0.3)]).unwrap();
        assert_eq!(m.knots(), &[[1.0, 0.1], [2.0, 0.2], [3.0, 0.3]]);
        assert_eq!(m.n_calibration(), 3);
    }

    #[test]
    fn violating_pair_pools() {
        let m = fit_distance_error(&[(1.0, 0.3), (2.0, 0.1)]).unwrap();
        assert_eq!(m.knots().len(), 1);
        assert!((m.knots()[0][1] - 0.2).abs() < 1e-15);
        assert_eq!(m.knots()[0][0], 1.5);
    }

    #[test]
    fn input_order_does_not_matter() {
        let a = fit_distance_error(&[(3.0, 0.3), (1.0, 0.5), (2.0, 0.2), (4.0, 0.9)]).unwrap();
        let b = fit_distance_error(&[(1.0, 0.5), (4.0, 0.9), (2.0, 0.2), (3.0, 0.3)]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fit_validation() {
        assert!(fit_distance_error(&[(1.0, 0.1)]).is_err());
        assert!(fit_distance_error(&[(1.0, 0.1), (f64::NAN, 0.1)]).is_err());
        assert!(fit_distance_error(&[(1.0, -0.1), (2.0, 0.1)]).is_err());
    }

    #[test]
    fn predict_clamps_and_interpolates() {
        let m = model(&[[1.0, 0.1], [3.0, 0.5]]);
        assert_eq!(m.predict_error(0.2).unwrap(), 0.1);
        assert_eq!(m.predict_error(1.0).unwrap(), 0.1);
        assert_eq!(m.predict_error(3.0).unwrap(), 0.5);
        assert_eq!(m.predict_error(9.0).unwrap(), 0.5);
        assert!((m.predict_error(2.0).unwrap() - 0.3).abs() < 1e-15);
        assert!(m.predict_error(-1.0).is_err());
        assert!(m.predict_error(f64::INFINITY).is_err());
    }

    #[test]
    fn predict_at_interior_knot() {
        let m = model(&[[1.0, 0.1], [2.0, 0.4], [3.0, 0.5]]);
        assert_eq!(m.predict_error(2.0).unwrap(), 0.4);
    }

    #[test]
    fn tolerance_thresholds() {
        let m = model(&[[1.0, 0.1], [3.0, 0.5]]);
        assert_eq!(m.threshold_from_tolerance(0.5).unwrap(), Threshold::Unbounded);
        assert_eq!(m.threshold_from_tolerance(0.05).unwrap(), Threshold::Distance(0.0));
        match m.threshold_from_tolerance(0.3).unwrap() {
            Threshold::Distance(d) => assert!((d - 2.0).abs() < 1e-12),
            t => panic!("{t:?}"),
        }
        assert_eq!(m.threshold_from_tolerance(0.1).unwrap(), Threshold::Distance(1.0));
        assert!(m.threshold_from_tolerance(-0.1).is_err());
        assert_eq!(
            m.threshold_from_tolerance(f64::INFINITY).unwrap(),
            Threshold::Unbounded
        );
    }

    #[test]
    fn flat_segment_threshold_is_end_of_plateau() {
        let m = model(&[[1.0, 0.1], [2.0, 0.2], [3.0, 0.2], [4.0, 0.6]]);
        assert_eq!(m.threshold_from_tolerance(0.2).unwrap(), Threshold::Distance(3.0));
    }

    #[test]
    fn budget_selection() {
        let d = [(1, 0.1), (2, 0.5), (3, 0.3), (4, 0.9)];
        let s = threshold_from_budget(&d, 2).unwrap();
        assert_eq!(s.selected, vec![4, 2]);
        assert_eq!(s.threshold, Threshold::Distance(0.5));
        let s = threshold_from_budget(&d, 0).unwrap();
        assert!(s.selected.is_empty());
        assert_eq!(s.threshold, Threshold::Unbounded);
        let s = threshold_from_budget(&d, 10).unwrap();
        assert_eq!(s.selected.len(), 4);
        assert_eq!(s.threshold, Threshold::Distance(0.1));
    }

    #[test]
    fn budget_ties_prefer_lower_id() {
        let d = [(7, 0.5), (3, 0.5), (5, 0.5)];
        assert_eq!(threshold_from_budget(&d, 2).unwrap().selected, vec![3, 5]);
    }

    #[test]
    fn threshold_serialization() {
        assert_eq!(Threshold::Unbounded.to_string(), "inf");
        assert_eq!(serde_json::to_string(&Threshold::Unbounded).unwrap(), "\"inf\"");
        let t: Threshold = serde_json::from_str("2.5").unwrap();
        assert_eq!(t, Threshold::Distance(2.5));
        let t: Threshold = serde_json::from_str("\"inf\"").unwrap();
        assert_eq!(t, Threshold::Unbounded);
    }

    #[test]
    fn json_schema_and_round_trip() {
        let m = fit_distance_error(&[(0.1, 0.2), (0.7, 0.1), (1.3, 0.9)]).unwrap();
        let text = m.to_json();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(v["knots"].is_array());
        assert_eq!(v["n_calibration"], 3);
        assert_eq!(DistanceErrorModel::from_json(&text).unwrap(), m);
        assert!(DistanceErrorModel::from_json(r#"{"knots": [[2, 0.1], [1, 0.2]], "n_calibration": 2}"#).is_err());
    }

    #[test]
    fn verdict_boundary() {
        let m = model(&[[1.0, 0.1], [3.0, 0.5]]);
        let t = Threshold::Distance(2.0);
        assert_eq!(verdict_for_distance(1, 2.0, &m, t).unwrap().decision, Decision::Trusted);
        assert_eq!(
            verdict_for_distance(1, 2.0f64.next_up(), &m, t).unwrap().decision,
            Decision::Abstain
        );
    }

    #[test]
    fn judge_member_and_zero_threshold() {
        let pts = [vec![0.0, 0.0], vec![1.0, 1.0]];
        let recs: Vec<(u64, &[f64])> = pts.iter().enumerate().map(|(i, p)| (i as u64, p.as_slice())).collect();
        let idx = NeighborIndex::build(&recs).unwrap();
        let m = model(&[[0.5, 0.1], [1.0, 0.2]]);
        let v = judge(&idx, 9, &[1.0, 1.0], &m, Threshold::Distance(0.0)).unwrap();
        assert_eq!((v.nn_dist, v.decision, v.predicted_error), (0.0, Decision::Trusted, 0.1));
        let v = judge(&idx, 9, &[0.5, 0.4], &m, Threshold::Distance(0.0)).unwrap();
        assert_eq!(v.decision, Decision::Abstain);
    }

    #[test]
    fn spearman_extremes_and_errors() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(rank_correlation(&xs, &[10.0, 20.0, 25.0, 100.0]).unwrap(), 1.0);
        assert_eq!(rank_correlation(&xs, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!(rank_correlation(&xs, &[1.0; 3]).is_err());
        assert!(matches!(
            rank_correlation(&xs, &[2.0; 4]),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn average_ranks_with_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
