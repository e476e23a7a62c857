//! Exact nearest-neighbor search over training embeddings.
//!
//! A balanced KD-tree with one record per node. Each node splits on the axis
//! of largest spread among its records (lowest axis on ties) at the median of
//! the records ordered by `(coordinate, id)`, so every left-subtree record is
//! `(coordinate, id)`-lexicographically below the node and every right one
//! above it. Queries prune with the incremental cell-distance bound and
//! return exactly what a linear scan would, ties broken by lower id.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::embedspace::{DistanceSpace, EmbeddingSet, FeatureSpace};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborHit {
    pub id: u64,
    pub distance: f64,
}

#[derive(Debug, Clone)]
struct Node {
    record: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct NeighborIndex {
    dim: usize,
    ids: Vec<u64>,
    coords: Vec<f64>,
    nodes: Vec<Node>,
    root: usize,
}

/// Squared Euclidean distance, summed in coordinate order.
#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn hit_order(a: &(f64, u64), b: &(f64, u64)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Bounded candidate list, kept sorted by `(squared distance, id)`.
struct Candidates {
    k: usize,
    items: Vec<(f64, u64)>,
}

impl Candidates {
    fn worst(&self) -> f64 {
        if self.items.len() < self.k {
            f64::INFINITY
        } else {
            self.items[self.k - 1].0
        }
    }

    fn offer(&mut self, item: (f64, u64)) {
        if self.items.len() == self.k {
            if hit_order(&item, &self.items[self.k - 1]) != Ordering::Less {
                return;
            }
            self.items.pop();
        }
        let pos = self
            .items
            .partition_point(|x| hit_order(x, &item) == Ordering::Less);
        self.items.insert(pos, item);
    }
}

/// Slack on the pruning bound so accumulated rounding in the incremental
/// cell distance never discards an exact tie.
const PRUNE_SLACK: f64 = 1.0 + 1e-9;

impl NeighborIndex {
    pub fn build(records: &[(u64, &[f64])]) -> Result<Self> {
        let Some(first) = records.first() else {
            return Err(Error::Param("cannot build a neighbor index from no records".into()));
        };
        let dim = first.1.len();
        if dim == 0 {
            return Err(Error::Param("neighbor index vectors must have dimension ≥ 1".into()));
        }
        let mut sorted: Vec<(u64, &[f64])> = records.to_vec();
        sorted.sort_by_key(|r| r.0);
        for w in sorted.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Data(format!("duplicate id {} in neighbor index", w[0].0)));
            }
        }
        for r in &sorted {
            if r.1.len() != dim {
                return Err(Error::Shape {
                    what: "neighbor index record",
                    expected: dim,
                    got: r.1.len(),
                });
            }
            if r.1.iter().any(|x| !x.is_finite()) {
                return Err(Error::Data(format!("record {} has a non-finite coordinate", r.0)));
            }
        }
        let ids: Vec<u64> = sorted.iter().map(|r| r.0).collect();
        let coords: Vec<f64> = sorted.iter().flat_map(|r| r.1.iter().copied()).collect();
        let mut index = NeighborIndex {
            dim,
            ids,
            coords,
            nodes: Vec::with_capacity(sorted.len()),
            root: 0,
        };
        let mut order: Vec<usize> = (0..sorted.len()).collect();
        index.root = index.build_node(&mut order).expect("nonempty");
        Ok(index)
    }

    fn point(&self, record: usize) -> &[f64] {
        &self.coords[record * self.dim..(record + 1) * self.dim]
    }

    fn build_node(&mut self, records: &mut [usize]) -> Option<usize> {
        if records.is_empty() {
            return None;
        }
        let mut axis = 0;
        let mut best_spread = f64::NEG_INFINITY;
        for a in 0..self.dim {
            let (lo, hi) = records.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                let x = self.coords[r * self.dim + a];
                (lo.min(x), hi.max(x))
            });
            if hi - lo > best_spread {
                best_spread = hi - lo;
                axis = a;
            }
        }
        let dim = self.dim;
        let coords = &self.coords;
        let ids = &self.ids;
        records.sort_by(|&a, &b| {
            coords[a * dim + axis]
                .total_cmp(&coords[b * dim + axis])
                .then(ids[a].cmp(&ids[b]))
        });
        let mid = records.len() / 2;
        let record = records[mid];
        let (left_half, rest) = records.split_at_mut(mid);
        let left = self.build_node(left_half);
        let right = self.build_node(&mut rest[1..]);
        self.nodes.push(Node {
            record,
            axis,
            left,
            right,
        });
        Some(self.nodes.len() - 1)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Stored ids in ascending order.
    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Depth of the tree (a single record has depth 1).
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], n: Option<usize>) -> usize {
            n.map_or(0, |i| 1 + walk(nodes, nodes[i].left).max(walk(nodes, nodes[i].right)))
        }
        walk(&self.nodes, Some(self.root))
    }

    /// Checks that every node's subtrees respect its splitting plane under
    /// the `(coordinate, id)` order. Returns the number of nodes checked.
    pub fn check_structure(&self) -> std::result::Result<usize, String> {
        let mut checked = 0;
        for node in &self.nodes {
            let key = (self.point(node.record)[node.axis], self.ids[node.record]);
            let mut stack: Vec<(usize, Ordering)> = Vec::new();
            if let Some(l) = node.left {
                stack.push((l, Ordering::Less));
            }
            if let Some(r) = node.right {
                stack.push((r, Ordering::Greater));
            }
            while let Some((n, side)) = stack.pop() {
                let rec = self.nodes[n].record;
                let other = (self.point(rec)[node.axis], self.ids[rec]);
                let ord = other.0.total_cmp(&key.0).then(other.1.cmp(&key.1));
                if ord != side {
                    return Err(format!("record {} is on the wrong side of record {}", other.1, key.1));
                }
                stack.extend(self.nodes[n].left.map(|c| (c, side)));
                stack.extend(self.nodes[n].right.map(|c| (c, side)));
            }
            checked += 1;
        }
        if checked != self.len() {
            return Err(format!("{checked} nodes for {} records", self.len()));
        }
        Ok(checked)
    }

    fn validate_query(&self, q: &[f64], k: usize, available: usize) -> Result<()> {
        if q.len() != self.dim {
            return Err(Error::Shape {
                what: "query vector",
                expected: self.dim,
                got: q.len(),
            });
        }
        if q.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("query vector has a non-finite coordinate".into()));
        }
        if k == 0 || k > available {
            return Err(Error::Param(format!("k = {k} outside 1..={available}")));
        }
        Ok(())
    }

    /// The `k` nearest records, ascending by `(distance, id)`.
    pub fn query_nearest(&self, q: &[f64], k: usize) -> Result<Vec<NeighborHit>> {
        self.validate_query(q, k, self.len())?;
        Ok(self.search(q, k, None).0)
    }

    /// Like [`query_nearest`](Self::query_nearest), but never returns
    /// `exclude`; used for leave-self-out distances of stored records.
    pub fn query_excluding(&self, q: &[f64], k: usize, exclude: u64) -> Result<Vec<NeighborHit>> {
        let available = self.len() - usize::from(self.ids.binary_search(&exclude).is_ok());
        self.validate_query(q, k, available)?;
        Ok(self.search(q, k, Some(exclude)).0)
    }

    /// Query plus the number of tree nodes visited.
    pub fn query_with_stats(&self, q: &[f64], k: usize) -> Result<(Vec<NeighborHit>, usize)> {
        self.validate_query(q, k, self.len())?;
        Ok(self.search(q, k, None))
    }

    fn search(&self, q: &[f64], k: usize, exclude: Option<u64>) -> (Vec<NeighborHit>, usize) {
        let mut cand = Candidates {
            k,
            items: Vec::with_capacity(k + 1),
        };
        let mut offsets = vec![0.0; self.dim];
        let mut visited = 0;
        self.search_node(self.root, q, 0.0, &mut offsets, &mut cand, exclude, &mut visited);
        let hits = cand
            .items
            .into_iter()
            .map(|(d2, id)| NeighborHit {
                id,
                distance: d2.sqrt(),
            })
            .collect();
        (hits, visited)
    }

    #[allow(clippy::too_many_arguments)]
    fn search_node(
        &self,
        n: usize,
        q: &[f64],
        rd: f64,
        offsets: &mut [f64],
        cand: &mut Candidates,
        exclude: Option<u64>,
        visited: &mut usize,
    ) {
        *visited += 1;
        let node = &self.nodes[n];
        let id = self.ids[node.record];
        let p = self.point(node.record);
        if exclude != Some(id) {
            cand.offer((squared_distance(q, p), id));
        }
        let diff = q[node.axis] - p[node.axis];
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(c) = near {
            self.search_node(c, q, rd, offsets, cand, exclude, visited);
        }
        if let Some(c) = far {
            let old = offsets[node.axis];
            let rd_far = rd - old * old + diff * diff;
            if rd_far <= cand.worst() * PRUNE_SLACK {
                offsets[node.axis] = diff;
                self.search_node(c, q, rd_far, offsets, cand, exclude, visited);
                offsets[node.axis] = old;
            }
        }
    }

    /// Euclidean distance to the nearest stored record.
    pub fn nn_distance(&self, q: &[f64]) -> Result<f64> {
        Ok(self.query_nearest(q, 1)?[0].distance)
    }

    /// Mean distance to the `k` nearest stored records, optionally leaving
    /// one id out.
    pub fn mean_knn_distance(&self, q: &[f64], k: usize, exclude: Option<u64>) -> Result<f64> {
        let hits = match exclude {
            Some(id) => self.query_excluding(q, k, id)?,
            None => self.query_nearest(q, k)?,
        };
        Ok(hits.iter().map(|h| h.distance).sum::<f64>() / hits.len() as f64)
    }
}

/// How neighbor distances are measured for a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistanceOptions {
    /// Number of neighbors averaged into one distance.
    pub k: usize,
    /// Z-score each latent dimension with training statistics first.
    pub standardize: bool,
    pub space: DistanceSpace,
}

impl Default for DistanceOptions {
    fn default() -> Self {
        DistanceOptions {
            k: 1,
            standardize: false,
            space: DistanceSpace::Latent,
        }
    }
}

/// A neighbor index over a set of training embeddings together with the
/// feature space fitted on them.
#[derive(Debug, Clone)]
pub struct TrainingNeighbors {
    space: FeatureSpace,
    index: NeighborIndex,
    k: usize,
}

impl TrainingNeighbors {
    pub fn build(embeddings: &EmbeddingSet, training: impl IntoIterator<Item = u64>, opts: &DistanceOptions) -> Result<Self> {
        if opts.k == 0 {
            return Err(Error::Param("neighbor k must be at least 1".into()));
        }
        let raw = training
            .into_iter()
            .map(|id| {
                embeddings
                    .get(id)
                    .map(|r| (id, r.z.as_slice()))
                    .ok_or_else(|| Error::Data(format!("no embedding for training id {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if raw.is_empty() {
            return Err(Error::Param("training set is empty".into()));
        }
        let vectors: Vec<&[f64]> = raw.iter().map(|r| r.1).collect();
        let space = FeatureSpace::fit(&vectors, opts.standardize, opts.space)?;
        let mapped = raw
            .iter()
            .map(|(id, v)| Ok((*id, space.apply(v)?)))
            .collect::<Result<Vec<_>>>()?;
        let records: Vec<(u64, &[f64])> = mapped.iter().map(|(id, v)| (*id, v.as_slice())).collect();
        let index = NeighborIndex::build(&records)?;
        Ok(TrainingNeighbors { space, index, k: opts.k })
    }

    pub fn index(&self) -> &NeighborIndex {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Mean distance from latent vector `z` to its `k` nearest training
    /// embeddings.
    pub fn distance(&self, z: &[f64]) -> Result<f64> {
        self.index.mean_knn_distance(&self.space.apply(z)?, self.k, None)
    }

    /// Same, for a training member, excluding the member itself.
    pub fn distance_leave_self_out(&self, id: u64, z: &[f64]) -> Result<f64> {
        self.index.mean_knn_distance(&self.space.apply(z)?, self.k, Some(id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_points(n: usize, dim: usize, seed: u64) -> Vec<(u64, Vec<f64>)> {
        let mut rng = Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| (i as u64 * 3 + 1, (0..dim).map(|_| rng.next_f64()).collect()))
            .collect()
    }

    fn as_records(pts: &[(u64, Vec<f64>)]) -> Vec<(u64, &[f64])> {
        pts.iter().map(|(i, v)| (*i, v.as_slice())).collect()
    }

    fn scan(pts: &[(u64, Vec<f64>)], q: &[f64], k: usize) -> Vec<(u64, f64)> {
        let mut all: Vec<(f64, u64)> = pts.iter().map(|(i, p)| (squared_distance(q, p), *i)).collect();
        all.sort_by(hit_order);
        all.into_iter().take(k).map(|(d, i)| (i, d.sqrt())).collect()
    }

    #[test]
    fn single_record() {
        let pts = vec![(42u64, vec![1.0, 2.0])];
        let idx = NeighborIndex::build(&as_records(&pts)).unwrap();
        assert_eq!(idx.depth(), 1);
        let hit = idx.query_nearest(&[-5.0, 9.0], 1).unwrap();
        assert_eq!(hit[0].id, 42);
    }

    #[test]
    fn member_query_and_offset() {
        let pts = random_points(50, 3, 1);
        let idx = NeighborIndex::build(&as_records(&pts)).unwrap();
        let hit = idx.query_nearest(&pts[7].1, 1).unwrap();
        assert_eq!(hit[0].id, pts[7].0);
        assert_eq!(hit[0].distance, 0.0);

        let iso = vec![(1u64, vec![0.0, 0.0]), (2, vec![10.0, 10.0])];
        let idx = NeighborIndex::build(&as_records(&iso)).unwrap();
        let eps = 1e-3;
        assert!((idx.nn_distance(&[eps, 0.0]).unwrap() - eps).abs() < 1e-15);
    }

    #[test]
    fn full_k_returns_sorted_everything() {
        let pts = random_points(30, 4, 2);
        let idx = NeighborIndex::build(&as_records(&pts)).unwrap();
        let q = [0.5; 4];
        let hits = idx.query_nearest(&q, 30).unwrap();
        let want = scan(&pts, &q, 30);
        assert_eq!(hits.iter().map(|h| (h.id, h.distance)).collect::<Vec<_>>(), want);
    }

    #[test]
    fn ties_prefer_lower_id() {
        let pts = vec![
            (9u64, vec![1.0, 0.0]),
            (4, vec![-1.0, 0.0]),
            (6, vec![0.0, 1.0]),
            (2, vec![0.0, -1.0]),
            (5, vec![0.0, 1.0]),
        ];
        let idx = NeighborIndex::build(&as_records(&pts)).unwrap();
        let hits = idx.query_nearest(&[0.0, 0.0], 3).unwrap();
        assert_eq!(hits.iter().map(|h| h.id).collect::<Vec<_>>(), vec![2, 4, 5]);
        idx.check_structure().unwrap();
    }

    #[test]
    fn shuffled_input_gives_same_answers() {
        let pts = random_points(200, 5, 3);
        let mut shuffled = pts.clone();
        Rng::seed_from_u64(1).shuffle(&mut shuffled);
        let a = NeighborIndex::build(&as_records(&pts)).unwrap();
        let b = NeighborIndex::build(&as_records(&shuffled)).unwrap();
        let mut rng = Rng::seed_from_u64(4);
        for _ in 0..50 {
            let q: Vec<f64> = (0..5).map(|_| rng.next_f64()).collect();
            assert_eq!(a.query_nearest(&q, 3).unwrap(), b.query_nearest(&q, 3).unwrap());
        }
    }

    #[test]
    fn leave_self_out() {
        let pts = random_points(100, 3, 5);
        let idx = NeighborIndex::build(&as_records(&pts)).unwrap();
        for (id, p) in &pts {
            let hits = idx.query_excluding(p, 2, *id).unwrap();
            let others: Vec<(u64, Vec<f64>)> = pts.iter().filter(|(i, _)| i != id).cloned().collect();
            let want = scan(&others, p, 2);
            assert_eq!(hits.iter().map(|h| (h.id, h.distance)).collect::<Vec<_>>(), want);
        }
        assert!(idx.query_excluding(&pts[0].1, 100, pts[0].0).is_err());
    }

    #[test]
    fn validation_errors() {
        assert!(NeighborIndex::build(&[]).is_err());
        let dup = vec![(1u64, vec![0.0]), (1, vec![1.0])];
        assert!(matches!(NeighborIndex::build(&as_records(&dup)), Err(Error::Data(_))));
        let ragged = vec![(1u64, vec![0.0]), (2, vec![1.0, 2.0])];
        assert!(matches!(NeighborIndex::build(&as_records(&ragged)), Err(Error::Shape { .. })));
        let pts = random_points(5, 2, 0);
        let idx = NeighborIndex::build(&as_records(&pts)).unwrap();
        assert!(idx.query_nearest(&[0.0, 0.0], 0).is_err());
        assert!(idx.query_nearest(&[0.0, 0.0], 6).is_err());
        assert!(matches!(idx.query_nearest(&[0.0], 1), Err(Error::Shape { .. })));
    }

    #[test]
    fn mean_knn_distance_averages() {
        let pts = vec![(1u64, vec![1.0]), (2, vec![3.0]), (3, vec![10.0])];
        let idx = NeighborIndex::build(&as_records(&pts)).unwrap();
        assert_eq!(idx.mean_knn_distance(&[0.0], 2, None).unwrap(), 2.0);
        assert_eq!(idx.mean_knn_distance(&[1.0], 1, Some(1)).unwrap(), 2.0);
    }
}
