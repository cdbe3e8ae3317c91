use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::nn::params::ParamSet;
use crate::nn::tensor::Scalar;

/// Adam moments and hyperparameters for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), step: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn encode(&self, w: &mut Writer) {
        w.u64(self.step);
        w.f64(self.lr);
        w.f64(self.beta1);
        w.f64(self.beta2);
        w.f64(self.eps);
        self.m.encode(w);
        self.v.encode(w);
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let step = r.u64()?;
        let lr = r.f64()?;
        let beta1 = r.f64()?;
        let beta2 = r.f64()?;
        let eps = r.f64()?;
        let m = ParamSet::decode(r)?;
        let v = ParamSet::decode(r)?;
        m.check_layout(&v)?;
        Ok(Self { m, v, step, lr, beta1, beta2, eps })
    }
}

/// One bias-corrected Adam descent step, in place.
pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState) -> Result<()> {
    params.check_layout(grads)?;
    params.check_layout(&state.m)?;
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1 as f32, state.beta2 as f32);
    let (nb1, nb2) = ((1.0 - state.beta1) as f32, (1.0 - state.beta2) as f32);
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let step_size = (state.lr / c1) as f32;
    let inv_c2 = (1.0 / c2) as f32;
    let eps = state.eps as f32;
    let moments = state.m.iter_mut().zip(state.v.iter_mut());
    for (((_, p), (_, g)), ((_, m), (_, v))) in params.iter_mut().zip(grads.iter()).zip(moments) {
        let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
        for ((p, &g), (m, v)) in it {
            *m = b1 * *m + nb1 * g;
            *v = b2 * *v + nb2 * g * g;
            *p -= step_size * *m / ((*v * inv_c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales all gradient sets jointly so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [&mut ParamSet<T>], max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::contract(format!("clip threshold must be positive, got {max_norm}")));
    }
    let norm = grads.iter().map(|g| g.sum_squares()).sum::<f64>().sqrt();
    if norm > max_norm {
        let factor = T::lit(max_norm / norm);
        for g in grads.iter_mut() {
            g.scale(factor);
        }
    }
    Ok(norm)
}

/// `target ← (1 − tau)·target + tau·online`, elementwise.
pub fn soft_update(target: &mut ParamSet, online: &ParamSet, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::contract(format!("tau must be in (0, 1], got {tau}")));
    }
    target.check_layout(online)?;
    if tau == 1.0 {
        target.clone_from(online);
        return Ok(());
    }
    let tau = tau as f32;
    for ((_, t), (_, o)) in target.iter_mut().zip(online.iter()) {
        t.data_mut().iter_mut().zip(o.data()).for_each(|(t, &o)| *t = (1.0 - tau) * *t + tau * o);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor;

    fn scalar_set(v: f32) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::from_vec(&[1], vec![v]).unwrap());
        p
    }

    fn value(p: &ParamSet) -> f32 {
        p.get("x").unwrap().data()[0]
    }

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut p = scalar_set(0.7);
        let mut st = AdamState::new(&p, 1e-3);
        let zero = p.zeros_like();
        adam_step(&mut p, &zero, &mut st).unwrap();
        assert_eq!(value(&p), 0.7);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g² after bias correction, so Δ = lr·g/(|g| + eps).
        let mut p = scalar_set(0.0);
        let mut st = AdamState::new(&p, 1e-3);
        adam_step(&mut p, &scalar_set(1.0), &mut st).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((value(&p) as f64 - expected).abs() < 1e-9);
    }

    #[test]
    fn mismatched_gradients_are_rejected() {
        let mut p = scalar_set(0.0);
        let mut st = AdamState::new(&p, 1e-3);
        let mut g = ParamSet::new();
        g.insert("y", Tensor::zeros(&[1]));
        assert!(adam_step(&mut p, &g, &mut st).is_err());
    }

    #[test]
    fn clipping_scales_only_above_threshold() {
        let mut big = ParamSet::<f64>::new();
        big.insert("a", Tensor::from_vec(&[2], vec![0.6, 0.8]).unwrap());
        let norm = clip_global_norm(&mut [&mut big], 0.005).unwrap();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!((big.sum_squares().sqrt() - 0.005).abs() < 1e-15);

        let mut small = ParamSet::<f64>::new();
        small.insert("a", Tensor::from_vec(&[1], vec![0.001]).unwrap());
        clip_global_norm(&mut [&mut small], 0.005).unwrap();
        assert_eq!(small.get("a").unwrap().data(), &[0.001]);

        let mut zero = ParamSet::<f64>::new();
        zero.insert("a", Tensor::zeros(&[3]));
        assert_eq!(clip_global_norm(&mut [&mut zero], 0.005).unwrap(), 0.0);
        assert!(clip_global_norm(&mut [&mut zero], 0.0).is_err());
    }

    #[test]
    fn soft_update_full_copy_and_midpoint() {
        let mut t = scalar_set(0.0);
        soft_update(&mut t, &scalar_set(2.0), 0.5).unwrap();
        assert_eq!(value(&t), 1.0);
        soft_update(&mut t, &scalar_set(5.0), 1.0).unwrap();
        assert_eq!(value(&t), 5.0);
        assert!(soft_update(&mut t, &scalar_set(5.0), 0.0).is_err());
    }

    #[test]
    fn soft_update_converges_geometrically() {
        // Scalar recurrence oracle: gap_k = (1 - tau)^k · gap_0.
        let tau = 0.1;
        let mut t = scalar_set(0.0);
        let online = scalar_set(1.0);
        for k in 1..=50 {
            soft_update(&mut t, &online, tau).unwrap();
            let oracle = (1.0f64 - tau).powi(k);
            assert!(((1.0 - value(&t) as f64) - oracle).abs() < 1e-5, "step {k}");
        }
    }
}
