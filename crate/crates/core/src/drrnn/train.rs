use super::{loss_and_gradients, DrRnnParams, ResidualOracle, TrainingSet};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOptions {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    pub max_epochs: usize,
    /// Epochs without a relative improvement of `min_improvement` before stopping.
    pub patience: usize,
    pub min_improvement: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            lr: 0.001,
            decay: 0.9,
            eps: 1e-8,
            max_epochs: 5000,
            patience: 200,
            min_improvement: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Loss at the start of every epoch.
    pub history: Vec<f64>,
    pub best_epoch: usize,
    pub best_loss: f64,
}

/// Full-batch RMSprop. Returns the parameters with the lowest loss seen.
pub fn train<O: ResidualOracle>(
    params: &DrRnnParams,
    set: &TrainingSet<O>,
    opts: &TrainOptions,
) -> Result<(DrRnnParams, TrainReport)> {
    if !(opts.lr > 0.0) || !(0.0..1.0).contains(&opts.decay) || !(opts.eps > 0.0) {
        return Err(invalid(format!("invalid optimizer settings {opts:?}")));
    }
    let mut current = params.clone();
    let mut theta = current.weights();
    let mut avg = vec![0.0; theta.len()];
    let mut history = Vec::new();
    let mut best = (params.clone(), f64::INFINITY, 0);
    let mut stale = 0;
    for epoch in 0..opts.max_epochs {
        let (loss, grad) = loss_and_gradients(&current, set).map_err(|e| Error::TrainingFailure {
            epoch,
            reason: e.to_string(),
            history: history.clone(),
        })?;
        let g = grad.flat();
        if !loss.is_finite() || !g.iter().all(|v| v.is_finite()) {
            return Err(Error::TrainingFailure {
                epoch,
                reason: "non-finite loss or gradient".into(),
                history,
            });
        }
        history.push(loss);
        if loss < best.1 * (1.0 - opts.min_improvement) || epoch == 0 {
            best = (current.clone(), loss, epoch);
            stale = 0;
        } else {
            stale += 1;
            if loss < best.1 {
                best = (current.clone(), loss, epoch);
            }
            if stale >= opts.patience {
                break;
            }
        }
        for ((t, a), gi) in theta.iter_mut().zip(avg.iter_mut()).zip(&g) {
            *a = opts.decay * *a + (1.0 - opts.decay) * gi * gi;
            *t -= opts.lr * gi / (a.sqrt() + opts.eps);
        }
        current.set_weights(&theta);
    }
    let (best_params, best_loss, best_epoch) = best;
    Ok((
        best_params,
        TrainReport {
            history,
            best_epoch,
            best_loss,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drrnn::{init_params, TrainingSequence};
    use nalgebra::{DMatrix, DVector};

    struct Linear(f64);

    impl ResidualOracle for Linear {
        fn dim(&self) -> usize {
            1
        }
        fn residual(&self, y1: &DVector<f64>, y0: &DVector<f64>) -> DVector<f64> {
            y1 - y0 + y1 * self.0
        }
        fn vjp(&self, _: &DVector<f64>, _: &DVector<f64>, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
            (v * (1.0 + self.0), -v)
        }
    }

    fn decay_set(steps: usize) -> TrainingSet<Linear> {
        let dt: f64 = 0.2;
        let targets = DMatrix::from_fn(1, steps, |_, t| (1.0 + dt).powi(-(t as i32 + 1)));
        TrainingSet {
            sequences: vec![TrainingSequence {
                y0: DVector::from_element(1, 1.0),
                targets,
                oracles: vec![Linear(dt)],
                every: 8,
            }],
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        struct Zero;
        impl ResidualOracle for Zero {
            fn dim(&self) -> usize {
                1
            }
            fn residual(&self, _: &DVector<f64>, _: &DVector<f64>) -> DVector<f64> {
                DVector::zeros(1)
            }
            fn vjp(&self, _: &DVector<f64>, _: &DVector<f64>, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
                (v * 0.0, v * 0.0)
            }
        }
        let set = TrainingSet {
            sequences: vec![TrainingSequence {
                y0: DVector::from_element(1, 1.0),
                targets: DMatrix::from_element(1, 2, 1.0),
                oracles: vec![Zero],
                every: 1,
            }],
        };
        let p = init_params(1, 3, 0).unwrap();
        let opts = TrainOptions {
            max_epochs: 10,
            ..Default::default()
        };
        let (q, report) = train(&p, &set, &opts).unwrap();
        assert_eq!(q, p);
        assert!(report.history.iter().all(|l| *l == 0.0));
    }

    #[test]
    fn loss_does_not_increase() {
        let set = decay_set(6);
        let p = init_params(1, 3, 4).unwrap();
        let opts = TrainOptions {
            max_epochs: 300,
            ..Default::default()
        };
        let (_, report) = train(&p, &set, &opts).unwrap();
        assert!(report.best_loss <= report.history[0]);
        assert!(report.best_loss < 0.5 * report.history[0]);
    }

    #[test]
    fn monotone_after_warmup_for_most_seeds() {
        let set = decay_set(6);
        let opts = TrainOptions {
            max_epochs: 500,
            patience: 500,
            ..Default::default()
        };
        let monotone = (0..20)
            .filter(|&seed| {
                let (_, rep) = train(&init_params(1, 1, seed).unwrap(), &set, &opts).unwrap();
                rep.history[50..].windows(2).all(|w| w[1] <= w[0])
            })
            .count();
        assert!(monotone >= 19, "{monotone} of 20 runs monotone");
    }

    #[test]
    fn rejects_bad_settings() {
        let p = init_params(1, 1, 0).unwrap();
        let opts = TrainOptions {
            lr: 0.0,
            ..Default::default()
        };
        assert!(train(&p, &decay_set(2), &opts).is_err());
    }
}
