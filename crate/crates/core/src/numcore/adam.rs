use std::collections::HashMap;

use super::{NumError, ParamSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-5,
        }
    }
}

/// Adam moment estimates keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    pub hyper: AdamHyper,
    step: u64,
    first: HashMap<String, Tensor>,
    second: HashMap<String, Tensor>,
}

impl Adam {
    pub fn new(hyper: AdamHyper) -> Self {
        Self {
            hyper,
            ..Self::default()
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected Adam update with a single learning rate.
    pub fn step(&mut self, params: &mut ParamSet, lr: f64) -> Result<(), NumError> {
        self.step_with(params, |_| lr)
    }

    /// Like [`Adam::step`] with a per-parameter learning rate. Gradient
    /// buffers are zeroed afterwards.
    pub fn step_with(&mut self, params: &mut ParamSet, lr_for: impl Fn(&str) -> f64) -> Result<(), NumError> {
        for (name, _, g) in params.entries_mut() {
            if let Some(bad) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(NumError::NonFinite(format!(
                    "gradient of {name}[{bad}] = {}",
                    g.data()[bad]
                )));
            }
        }
        self.step += 1;
        let AdamHyper { beta1, beta2, eps } = self.hyper;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (name, value, g) in params.entries_mut() {
            let lr = lr_for(name);
            let m = self
                .first
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(value.shape()));
            let v = self
                .second
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(value.shape()));
            for (((p, &gi), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            g.fill(0.0);
        }
        Ok(())
    }

    /// Moment tensors for checkpointing, named `adam.m.<param>` / `adam.v.<param>`.
    pub fn export(&self) -> Vec<(String, Tensor)> {
        let mut names: Vec<&String> = self.first.keys().collect();
        names.sort();
        let mut out = Vec::new();
        for n in names {
            out.push((format!("adam.m.{n}"), self.first[n].clone()));
            out.push((format!("adam.v.{n}"), self.second[n].clone()));
        }
        out
    }

    pub fn import(&mut self, step: u64, entries: &[(String, Tensor)]) {
        self.step = step;
        for (name, t) in entries {
            if let Some(p) = name.strip_prefix("adam.m.") {
                self.first.insert(p.to_string(), t.clone());
            } else if let Some(p) = name.strip_prefix("adam.v.") {
                self.second.insert(p.to_string(), t.clone());
            }
        }
    }
}

/// One Adam update on `params`; see [`Adam::step`].
pub fn adam_step(adam: &mut Adam, params: &mut ParamSet, lr: f64) -> Result<(), NumError> {
    adam.step(params, lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::scalar(v)).unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut p = scalar_param(2.5);
        let mut adam = Adam::new(AdamHyper::default());
        adam.step(&mut p, 0.1).unwrap();
        assert_eq!(p.get("x").unwrap().item(), 2.5);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        // m̂ = 1, v̂ = 1 after bias correction, so Δ = −lr/(1 + eps).
        let mut p = scalar_param(0.0);
        p.accumulate_grad("x", &Tensor::scalar(1.0)).unwrap();
        let hyper = AdamHyper {
            eps: 1e-8,
            ..AdamHyper::default()
        };
        let mut adam = Adam::new(hyper);
        adam.step(&mut p, 0.1).unwrap();
        let want = -0.1 / (1.0 + 1e-8);
        assert!((p.get("x").unwrap().item() - want).abs() < 1e-15);
        assert_eq!(p.grad("x").unwrap().item(), 0.0);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = scalar_param(0.0);
        p.accumulate_grad("x", &Tensor::scalar(f64::NAN)).unwrap();
        let mut adam = Adam::new(AdamHyper::default());
        let err = adam.step(&mut p, 0.1).unwrap_err();
        assert!(err.to_string().contains("x"));
        assert_eq!(p.get("x").unwrap().item(), 0.0);
    }

    #[test]
    fn quadratic_bowl_loss_decreases_after_warmup() {
        // Small lr keeps every coordinate short of its target, so no overshoot.
        let target = [1.0, -1.0, 0.5];
        let mut p = ParamSet::new();
        p.insert("w", Tensor::row(&[0.0, 0.0, 0.0])).unwrap();
        let mut adam = Adam::new(AdamHyper::default());
        let loss = |p: &ParamSet| -> f64 {
            p.get("w")
                .unwrap()
                .data()
                .iter()
                .zip(target)
                .map(|(w, t)| (w - t).powi(2))
                .sum()
        };
        let mut history = Vec::new();
        for _ in 0..200 {
            let g: Vec<f64> = p
                .get("w")
                .unwrap()
                .data()
                .iter()
                .zip(target)
                .map(|(w, t)| 2.0 * (w - t))
                .collect();
            p.accumulate_grad("w", &Tensor::row(&g)).unwrap();
            adam.step(&mut p, 0.002).unwrap();
            history.push(loss(&p));
        }
        for w in history[10..].windows(2) {
            assert!(w[1] < w[0], "{} !< {}", w[1], w[0]);
        }
    }
}
