//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use neighbor_confidence::autoenc::AutoencoderModel;
use neighbor_confidence::rng::Rng;
use neighbor_confidence::synth::PointCloud;

pub fn random_cloud(rng: &mut Rng, n: usize) -> PointCloud {
    let pts = (0..n)
        .map(|_| [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)])
        .collect();
    PointCloud::new(pts).unwrap()
}

pub fn random_vectors(rng: &mut Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.next_f64()).collect()).collect()
}

/// Chamfer distance by a plain double loop per direction.
pub fn chamfer_oracle(a: &PointCloud, b: &PointCloud) -> f64 {
    fn one_way(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
        let mut total = 0.0;
        for p in from {
            let mut best = f64::INFINITY;
            for q in to {
                let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                best = best.min(d);
            }
            total += best;
        }
        total / from.len() as f64
    }
    one_way(a.points(), b.points()) + one_way(b.points(), a.points())
}

/// `k` nearest `(id, distance)` by scanning every record.
pub fn linear_scan(records: &[(u64, Vec<f64>)], q: &[f64], k: usize, exclude: Option<u64>) -> Vec<(u64, f64)> {
    let mut all: Vec<(f64, u64)> = records
        .iter()
        .filter(|(id, _)| Some(*id) != exclude)
        .map(|(id, v)| {
            let d2: f64 = v.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            (d2, *id)
        })
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(d2, id)| (id, d2.sqrt())).collect()
}

/// Forward pass written from the layer tables alone: column sums with
/// explicit indexing, no shared helpers with the library.
pub fn forward_oracle(model: &AutoencoderModel, cloud: &PointCloud) -> (Vec<f64>, Vec<f64>) {
    let layers = model.layers();
    let affine = |l: usize, x: &[f64], relu: bool| -> Vec<f64> {
        let d = &layers[l];
        (0..d.rows)
            .map(|r| {
                let mut s = d.biases[r];
                for (c, xc) in x.iter().enumerate().take(d.cols) {
                    s += d.weights[r * d.cols + c] * xc;
                }
                if relu && s < 0.0 {
                    0.0
                } else {
                    s
                }
            })
            .collect()
    };
    let mut pooled: Option<Vec<f64>> = None;
    for p in cloud.points() {
        let h = affine(1, &affine(0, p, true), true);
        pooled = Some(match pooled {
            None => h,
            Some(m) => m.iter().zip(&h).map(|(a, b)| a.max(*b)).collect(),
        });
    }
    let z = affine(2, &pooled.unwrap(), false);
    let out = affine(5, &affine(4, &affine(3, &z, true), true), false);
    (z, out)
}

/// Least-squares non-decreasing fit by trying every split of the sequence
/// into contiguous blocks and keeping the best monotone one.
pub fn isotonic_oracle(ys: &[f64]) -> Vec<f64> {
    let n = ys.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << (n - 1)) {
        let mut fit = Vec::with_capacity(n);
        let mut start = 0;
        for i in 0..n {
            let cut = i == n - 1 || mask & (1 << i) != 0;
            if cut {
                let block = &ys[start..=i];
                let mean = block.iter().sum::<f64>() / block.len() as f64;
                fit.extend(std::iter::repeat_n(mean, block.len()));
                start = i + 1;
            }
        }
        if fit.windows(2).any(|w| w[0] > w[1]) {
            continue;
        }
        let sse: f64 = ys.iter().zip(&fit).map(|(y, f)| (y - f).powi(2)).sum();
        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
            best = Some((sse, fit));
        }
    }
    best.unwrap().1
}

/// Spearman coefficient from ranks assigned by counting: rank = 1 + number
/// of smaller values + half the number of other equal values.
pub fn spearman_oracle(xs: &[f64], ys: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|&a| {
                let less = v.iter().filter(|&&b| b < a).count() as f64;
                let equal = v.iter().filter(|&&b| b == a).count() as f64;
                1.0 + less + (equal - 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(xs), rank(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
