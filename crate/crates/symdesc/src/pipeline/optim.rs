//! Training numerics: warmup/decay schedule, global-norm clipping, AdamW.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Linear warmup from zero to the peak rate, then linear decay back to
/// zero. The rate at step 0 is 0 whenever there is any warmup, the peak is
/// reached exactly at `warmup_steps`, and every step at or past
/// `total_steps` is 0.
#[derive(Debug, Clone, Copy)]
pub struct LinearSchedule {
    peak: f64,
    warmup_steps: usize,
    total_steps: usize,
}

impl LinearSchedule {
    pub fn new(peak: f64, warmup_steps: usize, total_steps: usize) -> Result<Self> {
        if !(peak.is_finite() && peak >= 0.0) {
            return Err(Error::Config(format!("peak rate must be finite and non-negative, got {peak}")));
        }
        if total_steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        Ok(LinearSchedule {
            peak,
            warmup_steps,
            total_steps,
        })
    }

    #[must_use]
    pub fn rate(&self, step: usize) -> f64 {
        if step >= self.total_steps {
            0.0
        } else if step < self.warmup_steps {
            self.peak * step as f64 / self.warmup_steps as f64
        } else {
            self.peak * (self.total_steps - step) as f64
                / (self.total_steps - self.warmup_steps) as f64
        }
    }
}

#[must_use]
pub fn global_norm(tensors: &[&Array2<f64>]) -> f64 {
    tensors
        .iter()
        .flat_map(|t| t.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Scales all tensors in place so their joint L2 norm is at most
/// `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(tensors: &mut [&mut Array2<f64>], max_norm: f64) -> f64 {
    let norm = {
        let views: Vec<&Array2<f64>> = tensors.iter().map(|t| &**t).collect();
        global_norm(&views)
    };
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for t in tensors.iter_mut() {
            t.mapv_inplace(|v| v * scale);
        }
    }
    norm
}

/// AdamW: Adam moments with bias correction plus decoupled weight decay.
/// The update is `p -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)`.
#[derive(Debug, Clone)]
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl AdamW {
    pub fn new(shapes: &[&Array2<f64>], weight_decay: f64) -> Result<Self> {
        if !(weight_decay.is_finite() && weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay must be finite and non-negative, got {weight_decay}"
            )));
        }
        Ok(AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: shapes.iter().map(|t| Array2::zeros(t.raw_dim())).collect(),
            v: shapes.iter().map(|t| Array2::zeros(t.raw_dim())).collect(),
        })
    }

    /// One update over all parameter tensors. `params` and `grads` must
    /// line up with the shapes given at construction.
    pub fn step(&mut self, params: &mut [&mut Array2<f64>], grads: &[&Array2<f64>], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient count changed");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(&mut self.v))
        {
            assert_eq!(p.raw_dim(), m.raw_dim(), "parameter shape changed");
            azip(m, g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            azip(v, g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            for ((p, &m), &v) in p.iter_mut().zip(m.iter()).zip(v.iter()) {
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                *p -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *p);
            }
        }
    }
}

fn azip(dst: &mut Array2<f64>, src: &Array2<f64>, f: impl Fn(&mut f64, &f64)) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        f(d, s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn schedule_ramps_up_then_decays_to_zero() {
        let s = LinearSchedule::new(1.0, 10, 110).unwrap();
        assert_eq!(s.rate(0), 0.0);
        assert_eq!(s.rate(5), 0.5);
        assert_eq!(s.rate(10), 1.0);
        assert_eq!(s.rate(60), 0.5);
        assert_eq!(s.rate(110), 0.0);
        assert_eq!(s.rate(200), 0.0);
    }

    #[test]
    fn schedule_without_warmup_starts_at_peak() {
        let s = LinearSchedule::new(2.0, 0, 4).unwrap();
        assert_eq!(s.rate(0), 2.0);
        assert_eq!(s.rate(2), 1.0);
        assert_eq!(s.rate(4), 0.0);
    }

    #[test]
    fn schedule_is_piecewise_monotone() {
        let s = LinearSchedule::new(0.3, 7, 50).unwrap();
        for step in 0..7 {
            assert!(s.rate(step + 1) >= s.rate(step));
        }
        for step in 7..50 {
            assert!(s.rate(step + 1) <= s.rate(step));
        }
    }

    #[test]
    fn schedule_rejects_bad_config() {
        assert!(LinearSchedule::new(-1.0, 0, 10).is_err());
        assert!(LinearSchedule::new(f64::NAN, 0, 10).is_err());
        assert!(LinearSchedule::new(1.0, 0, 0).is_err());
    }

    #[test]
    fn clipping_reports_pre_clip_norm_and_bounds_the_result() {
        let mut a = array![[3.0, 0.0]];
        let mut b = array![[0.0, 4.0]];
        let norm = clip_global_norm(&mut [&mut a, &mut b], 1.0);
        assert_eq!(norm, 5.0);
        let post = global_norm(&[&a, &b]);
        assert!((post - 1.0).abs() < 1e-12);
        // Direction is preserved.
        assert!((a[[0, 0]] - 0.6).abs() < 1e-12);
        assert!((b[[0, 1]] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn clipping_is_a_no_op_under_the_limit() {
        let mut a = array![[0.3, 0.4]];
        let norm = clip_global_norm(&mut [&mut a], 1.0);
        assert_eq!(norm, 0.5);
        assert_eq!(a, array![[0.3, 0.4]]);
    }

    #[test]
    fn first_adamw_step_is_a_signed_unit_step() {
        // With bias correction, the first step is lr * g/(|g| + eps) plus
        // the decay term, regardless of the gradient's magnitude.
        let mut p = array![[1.0, -2.0]];
        let g = array![[0.003, -7.0]];
        let mut opt = AdamW::new(&[&p], 0.01).unwrap();
        opt.step(&mut [&mut p], &[&g], 0.1);
        let expect = |p0: f64, g0: f64| p0 - 0.1 * (g0.signum() + 0.01 * p0);
        assert!((p[[0, 0]] - expect(1.0, 1.0)).abs() < 1e-5);
        assert!((p[[0, 1]] - expect(-2.0, -1.0)).abs() < 1e-5);
    }

    #[test]
    fn zero_gradient_still_decays_weights() {
        let mut p = array![[10.0]];
        let g = array![[0.0]];
        let mut opt = AdamW::new(&[&p], 0.5).unwrap();
        opt.step(&mut [&mut p], &[&g], 0.1);
        // Pure decoupled decay: p *= (1 - lr * wd).
        assert!((p[[0, 0]] - 10.0 * 0.95).abs() < 1e-12);
    }

    #[test]
    fn adamw_minimizes_a_quadratic() {
        let mut p = array![[8.0]];
        let mut opt = AdamW::new(&[&p], 0.0).unwrap();
        for _ in 0..2000 {
            let g = array![[2.0 * (p[[0, 0]] - 3.0)]];
            opt.step(&mut [&mut p], &[&g], 0.05);
        }
        assert!((p[[0, 0]] - 3.0).abs() < 1e-2, "got {}", p[[0, 0]]);
    }

    #[test]
    fn adamw_rejects_negative_decay() {
        let p = array![[0.0]];
        assert!(AdamW::new(&[&p], -0.1).is_err());
    }
}
