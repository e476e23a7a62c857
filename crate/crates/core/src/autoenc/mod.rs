//! Permutation-invariant point-cloud autoencoder.
//!
//! Encoder: a shared per-point MLP `3 -> 32 -> 64` (ReLU), coordinate-wise
//! max-pool over points, then a linear projection `64 -> z_dim`. Decoder:
//! `z_dim -> 64 -> 128` (ReLU) and a linear output layer `128 -> 3N`,
//! reshaped row-major into `N` points.

mod grad;
mod io;
mod train;

pub use grad::{loss_and_gradient, loss_gradient, ModelGradient};
pub use train::{train, TrainConfig};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::synth::{chamfer_distance, PointCloud};

pub const ENCODER_DIMS: [usize; 2] = [32, 64];
pub const DECODER_DIMS: [usize; 2] = [64, 128];
pub const DEFAULT_Z_DIM: usize = 16;

/// Fixed layer order used for storage, gradients and flat parameter indexing.
pub(crate) const ENC1: usize = 0;
pub(crate) const ENC2: usize = 1;
pub(crate) const BOTTLENECK: usize = 2;
pub(crate) const DEC1: usize = 3;
pub(crate) const DEC2: usize = 4;
pub(crate) const DEC_OUT: usize = 5;
pub(crate) const N_LAYERS: usize = 6;

/// A fully-connected layer computing `W x + b`, `W` stored row-major with
/// `rows` outputs and `cols` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Dense {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            biases: vec![0.0; rows],
        }
    }

    /// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
    pub fn init_bound(&self) -> f64 {
        (6.0 / (self.rows + self.cols) as f64).sqrt()
    }

    #[inline]
    pub(crate) fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.biases[r];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            *o = acc;
        }
    }

    pub(crate) fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.forward_into(x, &mut out);
        out
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

#[inline]
pub(crate) fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x <= 0.0 {
            *x = 0.0;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector(pub Vec<f64>);

impl LatentVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    n_points: usize,
    z_dim: usize,
    layers: Vec<Dense>,
}

fn layer_shapes(n_points: usize, z_dim: usize) -> [(usize, usize); N_LAYERS] {
    [
        (ENCODER_DIMS[0], 3),
        (ENCODER_DIMS[1], ENCODER_DIMS[0]),
        (z_dim, ENCODER_DIMS[1]),
        (DECODER_DIMS[0], z_dim),
        (DECODER_DIMS[1], DECODER_DIMS[0]),
        (3 * n_points, DECODER_DIMS[1]),
    ]
}

fn validate_dims(n_points: usize, z_dim: usize) -> Result<()> {
    if n_points == 0 {
        return Err(Error::Param("n_points must be at least 1".into()));
    }
    if z_dim == 0 {
        return Err(Error::Param("z_dim must be at least 1".into()));
    }
    Ok(())
}

/// Fresh model with Glorot-uniform weights and zero biases.
///
/// One generator seeded with `seed` fills the layers in storage order, each
/// weight matrix row-major, as `bound * (2u - 1)`.
pub fn init_model(n_points: usize, z_dim: usize, seed: u64) -> Result<AutoencoderModel> {
    validate_dims(n_points, z_dim)?;
    let mut rng = Rng::seed_from_u64(seed);
    let layers = layer_shapes(n_points, z_dim)
        .into_iter()
        .map(|(rows, cols)| {
            let mut layer = Dense::zeros(rows, cols);
            let bound = layer.init_bound();
            for w in &mut layer.weights {
                *w = bound * (2.0 * rng.next_f64() - 1.0);
            }
            layer
        })
        .collect();
    Ok(AutoencoderModel {
        n_points,
        z_dim,
        layers,
    })
}

impl AutoencoderModel {
    /// All-zero parameters; useful as a reference model.
    pub fn zeros(n_points: usize, z_dim: usize) -> Result<Self> {
        validate_dims(n_points, z_dim)?;
        Ok(AutoencoderModel {
            n_points,
            z_dim,
            layers: layer_shapes(n_points, z_dim)
                .into_iter()
                .map(|(r, c)| Dense::zeros(r, c))
                .collect(),
        })
    }

    pub(crate) fn from_layers(n_points: usize, z_dim: usize, layers: Vec<Dense>) -> Result<Self> {
        validate_dims(n_points, z_dim)?;
        let shapes = layer_shapes(n_points, z_dim);
        if layers.len() != N_LAYERS {
            return Err(Error::Shape {
                what: "layer count",
                expected: N_LAYERS,
                got: layers.len(),
            });
        }
        for (l, (rows, cols)) in layers.iter().zip(shapes) {
            if l.rows != rows || l.cols != cols || l.weights.len() != rows * cols || l.biases.len() != rows {
                return Err(Error::Format(format!(
                    "layer shape {}x{} does not match expected {rows}x{cols}",
                    l.rows, l.cols
                )));
            }
        }
        let model = AutoencoderModel {
            n_points,
            z_dim,
            layers,
        };
        if !model.params().all(f64::is_finite) {
            return Err(Error::Data("model contains non-finite parameters".into()));
        }
        Ok(model)
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn z_dim(&self) -> usize {
        self.z_dim
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// Parameters in flat order: per layer, weights then biases.
    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
    }

    pub fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in &mut self.layers {
            if index < l.weights.len() {
                return &mut l.weights[index];
            }
            index -= l.weights.len();
            if index < l.biases.len() {
                return &mut l.biases[index];
            }
            index -= l.biases.len();
        }
        panic!("parameter index out of range");
    }

    fn check_cloud(&self, cloud: &PointCloud) -> Result<()> {
        if cloud.n_points() != self.n_points {
            return Err(Error::Shape {
                what: "point cloud",
                expected: self.n_points,
                got: cloud.n_points(),
            });
        }
        Ok(())
    }

    fn check_latent(&self, z: &LatentVector) -> Result<()> {
        if z.dim() != self.z_dim {
            return Err(Error::Shape {
                what: "latent vector",
                expected: self.z_dim,
                got: z.dim(),
            });
        }
        Ok(())
    }

    pub fn encode(&self, cloud: &PointCloud) -> Result<LatentVector> {
        self.check_cloud(cloud)?;
        let enc1 = &self.layers[ENC1];
        let enc2 = &self.layers[ENC2];
        let mut h1 = vec![0.0; enc1.rows];
        let mut h2 = vec![0.0; enc2.rows];
        let mut pooled = vec![f64::NEG_INFINITY; enc2.rows];
        for p in cloud.points() {
            enc1.forward_into(p, &mut h1);
            relu_in_place(&mut h1);
            enc2.forward_into(&h1, &mut h2);
            relu_in_place(&mut h2);
            for (m, v) in pooled.iter_mut().zip(&h2) {
                if *v > *m {
                    *m = *v;
                }
            }
        }
        Ok(LatentVector(self.layers[BOTTLENECK].forward(&pooled)))
    }

    pub fn decode(&self, z: &LatentVector) -> Result<PointCloud> {
        self.check_latent(z)?;
        let mut h = self.layers[DEC1].forward(z.as_slice());
        relu_in_place(&mut h);
        let mut h = self.layers[DEC2].forward(&h);
        relu_in_place(&mut h);
        let out = self.layers[DEC_OUT].forward(&h);
        PointCloud::from_flat(&out)
    }

    pub fn reconstruct(&self, cloud: &PointCloud) -> Result<PointCloud> {
        self.decode(&self.encode(cloud)?)
    }

    /// Chamfer distance between a cloud and its reconstruction.
    pub fn reconstruction_error(&self, cloud: &PointCloud) -> Result<f64> {
        chamfer_distance(cloud, &self.reconstruct(cloud)?)
    }
}
