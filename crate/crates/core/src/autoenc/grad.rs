//! Analytic gradient of the Chamfer reconstruction loss.
//!
//! Subgradient conventions: ReLU has derivative 0 at a non-positive
//! pre-activation, each max-pooled channel routes its gradient to the
//! lowest-index maximizing point, and each Chamfer nearest-neighbor match
//! uses the lowest-index neighbor.

use super::{
    relu_in_place, AutoencoderModel, Dense, BOTTLENECK, DEC1, DEC2, DEC_OUT, ENC1, ENC2,
};
use crate::error::{Error, Result};
use crate::synth::{nearest, PointCloud, Point3};

/// Gradient with one entry per model parameter, laid out like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    pub layers: Vec<Dense>,
}

impl ModelGradient {
    pub fn zeros_like(model: &AutoencoderModel) -> Self {
        ModelGradient {
            layers: model
                .layers()
                .iter()
                .map(|l| Dense::zeros(l.rows, l.cols))
                .collect(),
        }
    }

    /// Entries in the model's flat parameter order.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|g| g * g).sum::<f64>().sqrt()
    }

    fn add_assign(&mut self, other: &ModelGradient) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.biases.iter_mut().zip(&b.biases) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|x| *x *= s);
            l.biases.iter_mut().for_each(|x| *x *= s);
        }
    }
}

/// `grad.W += delta ⊗ input`, `grad.b += delta`; returns `Wᵀ delta`.
fn backprop_dense(layer: &Dense, grad: &mut Dense, input: &[f64], delta: &[f64]) -> Vec<f64> {
    let mut back = vec![0.0; layer.cols];
    for (r, &d) in delta.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        grad.biases[r] += d;
        let row = r * layer.cols;
        let gw = &mut grad.weights[row..row + layer.cols];
        for (g, x) in gw.iter_mut().zip(input) {
            *g += d * x;
        }
        for (b, w) in back.iter_mut().zip(&layer.weights[row..row + layer.cols]) {
            *b += d * w;
        }
    }
    back
}

fn mask_relu(delta: &mut [f64], activation: &[f64]) {
    for (d, a) in delta.iter_mut().zip(activation) {
        if *a <= 0.0 {
            *d = 0.0;
        }
    }
}

/// Chamfer loss of one cloud and its gradient, accumulated into `grad`.
fn accumulate_sample(model: &AutoencoderModel, cloud: &PointCloud, grad: &mut ModelGradient) -> f64 {
    let layers = model.layers();
    let pts = cloud.points();
    let n = pts.len();

    // Encoder forward, keeping per-point pre-activations.
    let (e1, e2) = (&layers[ENC1], &layers[ENC2]);
    let mut a1 = vec![0.0; n * e1.rows];
    let mut a2 = vec![0.0; n * e2.rows];
    let mut h1 = vec![0.0; e1.rows];
    let mut h2 = vec![0.0; e2.rows];
    let mut pooled = vec![f64::NEG_INFINITY; e2.rows];
    let mut argmax = vec![0usize; e2.rows];
    for (i, p) in pts.iter().enumerate() {
        let a1_i = &mut a1[i * e1.rows..(i + 1) * e1.rows];
        e1.forward_into(p, a1_i);
        h1.copy_from_slice(a1_i);
        relu_in_place(&mut h1);
        let a2_i = &mut a2[i * e2.rows..(i + 1) * e2.rows];
        e2.forward_into(&h1, a2_i);
        h2.copy_from_slice(a2_i);
        relu_in_place(&mut h2);
        for c in 0..e2.rows {
            if h2[c] > pooled[c] {
                pooled[c] = h2[c];
                argmax[c] = i;
            }
        }
    }
    let z = layers[BOTTLENECK].forward(&pooled);

    // Decoder forward.
    let a3 = layers[DEC1].forward(&z);
    let mut h3 = a3.clone();
    relu_in_place(&mut h3);
    let a4 = layers[DEC2].forward(&h3);
    let mut h4 = a4.clone();
    relu_in_place(&mut h4);
    let out = layers[DEC_OUT].forward(&h4);
    let recon: Vec<Point3> = out.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();

    // Chamfer loss and its gradient with respect to the reconstruction.
    let m = recon.len();
    let mut d_out = vec![0.0; out.len()];
    let mut forward_sum = 0.0;
    for p in pts {
        let (j, d) = nearest(p, &recon);
        forward_sum += d;
        for k in 0..3 {
            d_out[3 * j + k] += 2.0 * (recon[j][k] - p[k]) / n as f64;
        }
    }
    let mut backward_sum = 0.0;
    for (j, r) in recon.iter().enumerate() {
        let (i, d) = nearest(r, pts);
        backward_sum += d;
        for k in 0..3 {
            d_out[3 * j + k] += 2.0 * (r[k] - pts[i][k]) / m as f64;
        }
    }
    let loss = forward_sum / n as f64 + backward_sum / m as f64;

    // Decoder backward.
    let g = &mut grad.layers;
    let mut d_h4 = backprop_dense(&layers[DEC_OUT], &mut g[DEC_OUT], &h4, &d_out);
    mask_relu(&mut d_h4, &a4);
    let mut d_h3 = backprop_dense(&layers[DEC2], &mut g[DEC2], &h3, &d_h4);
    mask_relu(&mut d_h3, &a3);
    let d_z = backprop_dense(&layers[DEC1], &mut g[DEC1], &z, &d_h3);

    // Bottleneck and max-pool.
    let d_pooled = backprop_dense(&layers[BOTTLENECK], &mut g[BOTTLENECK], &pooled, &d_z);
    let mut d_a2 = vec![0.0; n * e2.rows];
    for c in 0..e2.rows {
        let i = argmax[c];
        if a2[i * e2.rows + c] > 0.0 {
            d_a2[i * e2.rows + c] += d_pooled[c];
        }
    }

    // Per-point encoder backward, only for points that won a channel.
    for (i, p) in pts.iter().enumerate() {
        let d_a2_i = &d_a2[i * e2.rows..(i + 1) * e2.rows];
        if d_a2_i.iter().all(|&d| d == 0.0) {
            continue;
        }
        let a1_i = &a1[i * e1.rows..(i + 1) * e1.rows];
        h1.copy_from_slice(a1_i);
        relu_in_place(&mut h1);
        let mut d_h1 = backprop_dense(e2, &mut g[ENC2], &h1, d_a2_i);
        mask_relu(&mut d_h1, a1_i);
        backprop_dense(e1, &mut g[ENC1], p, &d_h1);
    }
    loss
}

/// Per-sample Chamfer losses of `batch` and the exact gradient of their mean.
pub(crate) fn sample_losses_and_gradient(
    model: &AutoencoderModel,
    batch: &[&PointCloud],
) -> Result<(Vec<f64>, ModelGradient)> {
    if batch.is_empty() {
        return Err(Error::Param("gradient of an empty batch".into()));
    }
    for c in batch {
        if c.n_points() != model.n_points() {
            return Err(Error::Shape {
                what: "point cloud",
                expected: model.n_points(),
                got: c.n_points(),
            });
        }
    }
    let mut total = ModelGradient::zeros_like(model);
    let mut sample = ModelGradient::zeros_like(model);
    let mut losses = Vec::with_capacity(batch.len());
    for cloud in batch {
        sample.scale(0.0);
        losses.push(accumulate_sample(model, cloud, &mut sample));
        total.add_assign(&sample);
    }
    total.scale(1.0 / batch.len() as f64);
    Ok((losses, total))
}

/// Mean Chamfer loss over `batch` and its exact gradient.
pub fn loss_and_gradient(model: &AutoencoderModel, batch: &[&PointCloud]) -> Result<(f64, ModelGradient)> {
    let (losses, grad) = sample_losses_and_gradient(model, batch)?;
    Ok((losses.iter().sum::<f64>() / losses.len() as f64, grad))
}

pub fn loss_gradient(model: &AutoencoderModel, batch: &[&PointCloud]) -> Result<ModelGradient> {
    loss_and_gradient(model, batch).map(|(_, g)| g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoenc::init_model;
    use crate::rng::Rng;

    fn random_cloud(n: usize, rng: &mut Rng) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)])
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn loss_matches_reconstruction_error() {
        let m = init_model(8, 4, 2).unwrap();
        let mut rng = Rng::seed_from_u64(1);
        let c = random_cloud(8, &mut rng);
        let (loss, _) = loss_and_gradient(&m, &[&c]).unwrap();
        assert!((loss - m.reconstruction_error(&c).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn batch_gradient_is_mean_of_sample_gradients() {
        let m = init_model(8, 4, 3).unwrap();
        let mut rng = Rng::seed_from_u64(4);
        let clouds: Vec<_> = (0..3).map(|_| random_cloud(8, &mut rng)).collect();
        let refs: Vec<&PointCloud> = clouds.iter().collect();
        let batch = loss_gradient(&m, &refs).unwrap();
        let singles: Vec<ModelGradient> = refs.iter().map(|c| loss_gradient(&m, &[*c]).unwrap()).collect();
        let vals: Vec<Vec<f64>> = singles.iter().map(|g| g.values().collect()).collect();
        for (k, b) in batch.values().enumerate() {
            let mean = (vals[0][k] + vals[1][k] + vals[2][k]) / 3.0;
            assert!((b - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_reconstruction_has_zero_gradient() {
        // Zero model reproduces a cloud collapsed at the origin exactly.
        let m = AutoencoderModel::zeros(4, 2).unwrap();
        let c = PointCloud::new(vec![[0.0; 3]; 4]).unwrap();
        let (loss, g) = loss_and_gradient(&m, &[&c]).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn empty_batch_and_shape_errors() {
        let m = init_model(8, 4, 0).unwrap();
        assert!(matches!(loss_gradient(&m, &[]), Err(Error::Param(_))));
        let mut rng = Rng::seed_from_u64(0);
        let c = random_cloud(5, &mut rng);
        assert!(matches!(loss_gradient(&m, &[&c]), Err(Error::Shape { .. })));
    }
}
