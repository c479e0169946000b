//! Normalized advantage heads.
//!
//! `Q(s, a) = V(s) + A(s, a)` with
//! `A(s, a) = -1/2 (a - μ(s))ᵀ L(s) L(s)ᵀ (a - μ(s))`, where `L` is lower
//! triangular and built from the factor head's outputs, row by row, with the
//! diagonal passed through `exp`. A shared trunk feeds the value, policy and
//! factor heads; the trunk output goes through a rectifier before the heads.

use rand::Rng;

use crate::error::{Error, Result};
use crate::neural::{
    apply_gradients, DenseNetwork, ForwardTrace, Gradients, OptimizerKind, OptimizerState,
};

use super::replay::Transition;

#[derive(Debug, Clone, PartialEq)]
pub struct NafHeads {
    pub trunk: DenseNetwork,
    pub value: DenseNetwork,
    pub policy: DenseNetwork,
    pub factor: DenseNetwork,
    action_dim: usize,
}

/// Entries of a lower-triangular `n x n` matrix.
pub fn triangular_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Assembles `L` (row-major, dense `n x n`) from raw factor outputs.
pub fn assemble_lower(raw: &[f64], n: usize) -> Vec<f64> {
    let mut lower = vec![0.0; n * n];
    let mut idx = 0;
    for i in 0..n {
        for k in 0..=i {
            lower[i * n + k] = if i == k { raw[idx].exp() } else { raw[idx] };
            idx += 1;
        }
    }
    lower
}

/// All head outputs for one state.
#[derive(Debug, Clone)]
pub struct NafOutput {
    pub value: f64,
    pub mu: Vec<f64>,
    pub factor_raw: Vec<f64>,
    /// Dense row-major `L`.
    pub lower: Vec<f64>,
}

struct NafTrace {
    trunk: ForwardTrace,
    features: Vec<f64>,
    value: ForwardTrace,
    policy: ForwardTrace,
    factor: ForwardTrace,
    out: NafOutput,
}

impl NafOutput {
    /// `zᵀ = dᵀ L`, so that `A = -|z|² / 2`.
    fn projected(&self, delta: &[f64]) -> Vec<f64> {
        let n = self.mu.len();
        (0..n)
            .map(|k| (k..n).map(|i| self.lower[i * n + k] * delta[i]).sum())
            .collect()
    }

    pub fn advantage(&self, action: &[f64]) -> Result<f64> {
        if action.len() != self.mu.len() {
            return Err(Error::shape(format!(
                "action has {} entries, policy outputs {}",
                action.len(),
                self.mu.len()
            )));
        }
        let delta: Vec<f64> = action.iter().zip(&self.mu).map(|(a, m)| a - m).collect();
        Ok(-0.5 * self.projected(&delta).iter().map(|z| z * z).sum::<f64>())
    }

    pub fn q_value(&self, action: &[f64]) -> Result<f64> {
        Ok(self.value + self.advantage(action)?)
    }
}

impl NafHeads {
    /// Trunk `obs_dim -> hidden...`, then one affine layer per head.
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::config(
                "the shared trunk needs at least one hidden layer",
            ));
        }
        let mut trunk_dims = vec![obs_dim];
        trunk_dims.extend_from_slice(hidden);
        let width = *hidden.last().expect("nonempty");
        Ok(Self {
            trunk: DenseNetwork::new(&trunk_dims, rng)?,
            value: DenseNetwork::new(&[width, 1], rng)?,
            policy: DenseNetwork::new(&[width, action_dim], rng)?,
            factor: DenseNetwork::new(&[width, triangular_len(action_dim)], rng)?,
            action_dim,
        })
    }

    pub fn from_parts(
        trunk: DenseNetwork,
        value: DenseNetwork,
        policy: DenseNetwork,
        factor: DenseNetwork,
    ) -> Result<Self> {
        let width = trunk.output_dim();
        let action_dim = policy.output_dim();
        if value.input_dim() != width || policy.input_dim() != width || factor.input_dim() != width
        {
            return Err(Error::shape("head inputs must match the trunk width"));
        }
        if value.output_dim() != 1 || factor.output_dim() != triangular_len(action_dim) {
            return Err(Error::shape(
                "value head must output 1 and factor head n(n+1)/2 entries",
            ));
        }
        Ok(Self {
            trunk,
            value,
            policy,
            factor,
            action_dim,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    fn features(&self, state: &[f64]) -> Result<Vec<f64>> {
        let mut h = self.trunk.forward(state)?;
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        Ok(h)
    }

    pub fn evaluate(&self, state: &[f64]) -> Result<NafOutput> {
        let h = self.features(state)?;
        let factor_raw = self.factor.forward(&h)?;
        Ok(NafOutput {
            value: self.value.forward(&h)?[0],
            mu: self.policy.forward(&h)?,
            lower: assemble_lower(&factor_raw, self.action_dim),
            factor_raw,
        })
    }

    pub fn state_value(&self, state: &[f64]) -> Result<f64> {
        let h = self.features(state)?;
        Ok(self.value.forward(&h)?[0])
    }

    pub fn mu(&self, state: &[f64]) -> Result<Vec<f64>> {
        let h = self.features(state)?;
        self.policy.forward(&h)
    }

    fn trace(&self, state: &[f64]) -> Result<NafTrace> {
        let trunk = self.trunk.forward_trace(state)?;
        let features: Vec<f64> = trunk.output().iter().map(|v| v.max(0.0)).collect();
        let value = self.value.forward_trace(&features)?;
        let policy = self.policy.forward_trace(&features)?;
        let factor = self.factor.forward_trace(&features)?;
        let out = NafOutput {
            value: value.output()[0],
            mu: policy.output().to_vec(),
            factor_raw: factor.output().to_vec(),
            lower: assemble_lower(factor.output(), self.action_dim),
        };
        Ok(NafTrace {
            trunk,
            features,
            value,
            policy,
            factor,
            out,
        })
    }

    pub fn zero_gradients(&self) -> NafGradients {
        NafGradients {
            trunk: self.trunk.zero_gradients(),
            value: self.value.zero_gradients(),
            policy: self.policy.zero_gradients(),
            factor: self.factor.zero_gradients(),
        }
    }

    /// Minibatch loss `mean((y_i - Q(s_i, a_i))²)` and its gradient, with
    /// `targets[i]` held fixed.
    pub fn loss_and_gradients(
        &self,
        batch: &[&Transition],
        targets: &[f64],
    ) -> Result<(f64, NafGradients)> {
        if batch.is_empty() {
            return Err(Error::Argument("empty minibatch".into()));
        }
        let n = self.action_dim;
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut grads = self.zero_gradients();
        for (t, &y) in batch.iter().zip(targets) {
            let tr = self.trace(t.state.as_slice())?;
            let action = &t.action_vector;
            if action.len() != n {
                return Err(Error::shape(format!(
                    "stored action has {} entries, expected {n}",
                    action.len()
                )));
            }
            let delta: Vec<f64> = action.iter().zip(&tr.out.mu).map(|(a, m)| a - m).collect();
            let z = tr.out.projected(&delta);
            let q = tr.out.value - 0.5 * z.iter().map(|v| v * v).sum::<f64>();
            let err = y - q;
            loss += scale * err * err;
            let dq = -2.0 * scale * err;

            // dA/dμ = L z, dA/dL_ik = -z_k d_i for i >= k.
            let lower = &tr.out.lower;
            let d_mu: Vec<f64> = (0..n)
                .map(|i| dq * (0..=i).map(|k| lower[i * n + k] * z[k]).sum::<f64>())
                .collect();
            let mut d_factor = Vec::with_capacity(triangular_len(n));
            for i in 0..n {
                for (k, zk) in z.iter().enumerate().take(i + 1) {
                    let g = -dq * zk * delta[i];
                    d_factor.push(if i == k { g * lower[i * n + i] } else { g });
                }
            }

            let (gv, hv) = self.value.backward_trace(&tr.value, &[dq])?;
            let (gp, hp) = self.policy.backward_trace(&tr.policy, &d_mu)?;
            let (gf, hf) = self.factor.backward_trace(&tr.factor, &d_factor)?;
            let d_features: Vec<f64> = (0..tr.features.len())
                .map(|j| {
                    if tr.features[j] > 0.0 {
                        hv[j] + hp[j] + hf[j]
                    } else {
                        0.0
                    }
                })
                .collect();
            let (gt, _) = self.trunk.backward_trace(&tr.trunk, &d_features)?;
            grads.trunk.add_assign(&gt);
            grads.value.add_assign(&gv);
            grads.policy.add_assign(&gp);
            grads.factor.add_assign(&gf);
        }
        if !loss.is_finite() {
            return Err(Error::numeric(format!("non-finite loss {loss}")));
        }
        Ok((loss, grads))
    }

    /// Networks in fixed order: trunk, value, policy, factor.
    pub fn networks_mut(&mut self) -> [&mut DenseNetwork; 4] {
        [
            &mut self.trunk,
            &mut self.value,
            &mut self.policy,
            &mut self.factor,
        ]
    }

    pub fn networks(&self) -> [&DenseNetwork; 4] {
        [&self.trunk, &self.value, &self.policy, &self.factor]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NafGradients {
    pub trunk: Gradients,
    pub value: Gradients,
    pub policy: Gradients,
    pub factor: Gradients,
}

impl NafGradients {
    pub fn parts(&self) -> [&Gradients; 4] {
        [&self.trunk, &self.value, &self.policy, &self.factor]
    }

    pub fn is_zero(&self) -> bool {
        self.parts().iter().all(|g| g.is_zero())
    }
}

/// One optimizer state per network of the heads.
#[derive(Debug, Clone)]
pub struct NafOptimizers {
    states: [OptimizerState; 4],
}

impl NafOptimizers {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        let s = OptimizerState::new(kind, learning_rate)?;
        Ok(Self {
            states: [s.clone(), s.clone(), s.clone(), s],
        })
    }
}

/// Bootstrapped targets `y_i = R_i + γ V'(s_{i+1})` from the target heads.
pub fn td_targets(target: &NafHeads, batch: &[&Transition], discount: f64) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|t| Ok(t.reward + discount * target.state_value(t.next_state.as_slice())?))
        .collect()
}

/// One gradient step on the online heads; the target heads only supply `V'`.
pub fn train_step(
    heads: &mut NafHeads,
    target: &NafHeads,
    batch: &[&Transition],
    optimizers: &mut NafOptimizers,
    discount: f64,
) -> Result<f64> {
    let targets = td_targets(target, batch, discount)?;
    let (loss, grads) = heads.loss_and_gradients(batch, &targets)?;
    for ((net, opt), g) in heads
        .networks_mut()
        .into_iter()
        .zip(optimizers.states.iter_mut())
        .zip(grads.parts())
    {
        apply_gradients(net, opt, g)?;
    }
    Ok(loss)
}

/// Copies every online parameter into the target heads.
pub fn sync_target(heads: &NafHeads, target: &mut NafHeads) {
    target.clone_from(heads);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action_space::AllocationGrid;
    use crate::env::Observation;
    use crate::rng::{stream, StreamTag};

    fn heads(seed: u64) -> NafHeads {
        NafHeads::new(3, 3, &[16, 16], &mut stream(seed, StreamTag::Init, 0)).unwrap()
    }

    /// Dense `-1/2 dᵀ (L Lᵀ) d`, independent of the head's own evaluation.
    fn dense_advantage(lower: &[f64], mu: &[f64], a: &[f64]) -> f64 {
        let n = mu.len();
        let mut p = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                p[i * n + j] = (0..n).map(|k| lower[i * n + k] * lower[j * n + k]).sum();
            }
        }
        let d: Vec<f64> = a.iter().zip(mu).map(|(x, m)| x - m).collect();
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += d[i] * p[i * n + j] * d[j];
            }
        }
        -0.5 * quad
    }

    #[test]
    fn lower_assembly() {
        let l = assemble_lower(&[0.0, 2.0, 1.0f64.ln(), -1.0, 3.0, 0.0], 3);
        assert_eq!(l, vec![1.0, 0.0, 0.0, 2.0, 1.0, 0.0, -1.0, 3.0, 1.0]);
    }

    #[test]
    fn advantage_examples() {
        let h = heads(1);
        let s = [0.4, 1.2, 0.8];
        let out = h.evaluate(&s).unwrap();
        assert_eq!(out.advantage(&out.mu).unwrap(), 0.0);
        assert_eq!(out.q_value(&out.mu).unwrap(), out.value);

        let identity = NafOutput {
            value: 0.0,
            mu: vec![0.0; 3],
            factor_raw: vec![0.0; 6],
            lower: assemble_lower(&[0.0; 6], 3),
        };
        assert_eq!(identity.advantage(&[1.0, 0.0, 0.0]).unwrap(), -0.5);
        assert!(matches!(identity.advantage(&[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn advantage_matches_dense_oracle() {
        let mut r = stream(99, StreamTag::Calibration, 0);
        for seed in 0..20 {
            let h = heads(seed);
            let s: Vec<f64> = (0..3).map(|_| r.random_range(0.0..2.0)).collect();
            let a: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
            let out = h.evaluate(&s).unwrap();
            let expected = dense_advantage(&out.lower, &out.mu, &a);
            let got = out.advantage(&a).unwrap();
            assert!(
                (got - expected).abs() <= 1e-12 * expected.abs().max(1.0),
                "{got} vs {expected}"
            );
            assert!(got <= 0.0);
            assert_eq!(out.q_value(&a).unwrap(), out.value + got);
        }
    }

    fn transition(s: [f64; 3], a: [u32; 3], r: f64, s2: [f64; 3]) -> Transition {
        let grid = AllocationGrid::new(10.0, 1.0, 3).unwrap();
        let a = grid.allocation(a.to_vec()).unwrap();
        Transition::new(
            &grid,
            Observation(s.to_vec()),
            a,
            r,
            Observation(s2.to_vec()),
        )
        .unwrap()
    }

    #[test]
    fn exact_targets_give_zero_loss() {
        let h = heads(3);
        let t = transition([0.3, 0.9, 1.1], [2, 5, 3], 0.0, [0.1, 0.2, 0.3]);
        let q = h
            .evaluate(t.state.as_slice())
            .unwrap()
            .q_value(&t.action_vector)
            .unwrap();
        let (loss, grads) = h.loss_and_gradients(&[&t], &[q]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.is_zero());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut h = heads(4);
        let target = h.clone();
        let before = h.clone();
        let t = transition([0.3, 0.9, 1.1], [2, 5, 3], 1.0, [0.1, 0.2, 0.3]);
        let mut opt = NafOptimizers::new(OptimizerKind::Sgd, 0.0).unwrap();
        let loss = train_step(&mut h, &target, &[&t], &mut opt, 0.9).unwrap();
        assert!(loss > 0.0);
        assert_eq!(h, before);
    }

    #[test]
    fn training_leaves_target_alone_and_sync_copies() {
        let mut h = heads(5);
        let mut target = heads(6);
        let target_before = target.clone();
        let t = transition([0.3, 0.9, 1.1], [2, 5, 3], 1.0, [0.1, 0.2, 0.3]);
        let mut opt = NafOptimizers::new(OptimizerKind::Sgd, 1e-2).unwrap();
        train_step(&mut h, &target, &[&t], &mut opt, 0.9).unwrap();
        assert_eq!(target, target_before);
        assert_ne!(h, target);
        sync_target(&h, &mut target);
        assert_eq!(h, target);
        let s = [0.5, 0.5, 0.5];
        assert_eq!(
            h.state_value(&s).unwrap().to_bits(),
            target.state_value(&s).unwrap().to_bits()
        );
        sync_target(&h, &mut target);
        assert_eq!(h, target);
    }

    #[test]
    fn empty_batch_rejected() {
        let h = heads(1);
        assert!(matches!(
            h.loss_and_gradients(&[], &[]),
            Err(Error::Argument(_))
        ));
    }
}
