use serde::{Deserialize, Serialize};

use super::grad::sample_losses_and_gradient;
use super::AutoencoderModel;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::synth::PointCloud;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Param("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Param("batch_size must be at least 1".into()));
        }
        // A zero rate is accepted: it leaves the model untouched.
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Param(format!(
                "learning_rate must be a nonnegative number, got {}",
                self.learning_rate
            )));
        }
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !unit(self.beta1) || !unit(self.beta2) || !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Param("invalid Adam hyperparameters".into()));
        }
        Ok(())
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, model: &mut AutoencoderModel, grad: impl Iterator<Item = f64>, cfg: &TrainConfig) {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step);
        let bc2 = 1.0 - cfg.beta2.powi(self.step);
        let params = model
            .layers_mut()
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()));
        for (((p, g), m), v) in params.zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Trains with Adam on minibatches; returns the trained model and the mean
/// per-sample loss of every epoch.
///
/// Sample order is reshuffled every epoch by one generator seeded with
/// `config.seed`. Each sample's loss is recorded before the update of its
/// batch, and epoch means are summed in corpus order so the history does
/// not depend on the shuffle.
pub fn train(
    model: &AutoencoderModel,
    corpus: &[PointCloud],
    config: &TrainConfig,
) -> Result<(AutoencoderModel, Vec<f64>)> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::Param("cannot train on an empty corpus".into()));
    }
    let mut model = model.clone();
    let mut adam = Adam::new(model.param_count());
    let mut rng = Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut sample_loss = vec![0.0; corpus.len()];
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&PointCloud> = chunk.iter().map(|&i| &corpus[i]).collect();
            let (losses, grad) = sample_losses_and_gradient(&model, &batch)?;
            for (&i, loss) in chunk.iter().zip(losses) {
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                sample_loss[i] = loss;
            }
            adam.update(&mut model, grad.values(), config);
        }
        let mean = sample_loss.iter().sum::<f64>() / corpus.len() as f64;
        if !mean.is_finite() || !model.params().all(f64::is_finite) {
            return Err(Error::Diverged { epoch });
        }
        log::debug!("epoch {epoch}: mean loss {mean:.6}");
        history.push(mean);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoenc::init_model;
    use crate::synth::{generate_cloud, normalize_cloud, Family, ShapeSpec};

    fn corpus(n: usize, points: usize) -> Vec<PointCloud> {
        (0..n)
            .map(|i| {
                let spec = ShapeSpec {
                    family: if i % 2 == 0 { Family::Sphere } else { Family::Ellipsoid },
                    scale: [1.0, 0.6 + 0.1 * (i % 5) as f64, 1.2],
                    noise_sigma: 0.01,
                    seed: i as u64,
                };
                normalize_cloud(&generate_cloud(&spec, points).unwrap()).unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_leaves_model_unchanged() {
        let m = init_model(16, 4, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            learning_rate: 0.0,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let (trained, history) = train(&m, &corpus(10, 16), &cfg).unwrap();
        assert_eq!(trained, m);
        assert_eq!(history.len(), 3);
        assert!(history.iter().all(|&l| l == history[0]));
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let m = init_model(16, 4, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 40,
            learning_rate: 5e-3,
            batch_size: 4,
            seed: 9,
            ..TrainConfig::default()
        };
        let data = corpus(12, 16);
        let (a, ha) = train(&m, &data, &cfg).unwrap();
        let (b, hb) = train(&m, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert!(ha.last().unwrap() < &ha[0]);
    }

    #[test]
    fn divergence_names_epoch() {
        let m = init_model(8, 2, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            learning_rate: 1e300,
            batch_size: 2,
            ..TrainConfig::default()
        };
        match train(&m, &corpus(4, 8), &cfg) {
            Err(Error::Diverged { epoch }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let m = init_model(8, 2, 0).unwrap();
        let data = corpus(2, 8);
        for cfg in [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: -1.0, ..TrainConfig::default() },
        ] {
            assert!(matches!(train(&m, &data, &cfg), Err(Error::Param(_))));
        }
        assert!(train(&m, &[], &TrainConfig::default()).is_err());
    }
}
