//! Non-potential forces, the scalar constraint `f = beta(H) P - Omega` and the
//! projected force that keeps trajectories on `f = 0`.
//!
//! Notation used throughout: `K_i = dH/dp_i = p_i / m_i`, `U_i = dU/dq_i`,
//! `P` the power of the non-potential force and `Omega` its momentum
//! divergence.

use serde::{Deserialize, Serialize};

use crate::beta::BetaFamily;
use crate::error::{Error, Result};
use crate::phase::{PhaseState, SystemModel};

/// Scale of the `|P|^2` degeneracy threshold, `eps = SINGULAR_SCALE (1 + |F|^2)`.
pub const SINGULAR_SCALE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BaseForce {
    /// `F_i = -gamma p_i`.
    LinearFriction { gamma: f64 },
    /// `F_i = -dG(H)/dp_i` with `G(H) = sum_k g[k] H^k`.
    CanonicalDissipative { g: Vec<f64> },
}

/// The force at one state together with every derivative contraction the
/// constraint gradients need.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceTerms {
    pub force: Vec<f64>,
    /// `sum_i dF_i/dp_i`.
    pub omega: f64,
    /// `sum_i F_i K_i`.
    pub power: f64,
    /// `sum_j (dF_j/dp_i) K_j`.
    pub jp_k: Vec<f64>,
    /// `sum_j (dF_j/dq_i) K_j`.
    pub jq_k: Vec<f64>,
    /// `dOmega/dp_i = sum_j d^2 F_j / dp_i dp_j`.
    pub domega_dp: Vec<f64>,
    /// `dOmega/dq_i = sum_j d^2 F_j / dq_i dp_j`.
    pub domega_dq: Vec<f64>,
}

/// First three derivatives of `G` at `h`.
fn poly_derivs(g: &[f64], h: f64) -> [f64; 3] {
    let mut d = [0.0; 3];
    for (order, slot) in d.iter_mut().enumerate() {
        let order = order + 1;
        // Horner on the differentiated coefficients
        let mut acc = 0.0;
        for k in (order..g.len()).rev() {
            let falling: f64 = ((k - order + 1)..=k).map(|v| v as f64).product();
            acc = acc * h + g[k] * falling;
        }
        *slot = acc;
    }
    d
}

impl BaseForce {
    pub fn name(&self) -> &'static str {
        match self {
            BaseForce::LinearFriction { .. } => "linear-friction",
            BaseForce::CanonicalDissipative { .. } => "canonical-dissipative",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BaseForce::LinearFriction { gamma } if !gamma.is_finite() => {
                Err(Error::InvalidModel(format!("friction gamma = {gamma}")))
            }
            BaseForce::CanonicalDissipative { g } if g.iter().any(|c| !c.is_finite()) => {
                Err(Error::InvalidModel(format!("non-finite G coefficients {g:?}")))
            }
            _ => Ok(()),
        }
    }

    /// True when the force vanishes identically, leaving a conservative
    /// system with nothing to constrain.
    pub fn is_null(&self) -> bool {
        match self {
            BaseForce::LinearFriction { gamma } => *gamma == 0.0,
            BaseForce::CanonicalDissipative { g } => g.iter().skip(1).all(|c| *c == 0.0),
        }
    }

    pub fn force(&self, model: &SystemModel, s: &PhaseState) -> Result<Vec<f64>> {
        model.check(s)?;
        Ok(self.terms_unchecked(model, &s.q, &s.p).force)
    }

    pub fn terms(&self, model: &SystemModel, s: &PhaseState) -> Result<ForceTerms> {
        model.check(s)?;
        Ok(self.terms_unchecked(model, &s.q, &s.p))
    }

    pub(crate) fn terms_unchecked(&self, model: &SystemModel, q: &[f64], p: &[f64]) -> ForceTerms {
        let n = q.len();
        let k = model.grad_p_unchecked(p);
        match self {
            BaseForce::LinearFriction { gamma } => {
                let force: Vec<f64> = p.iter().map(|pi| -gamma * pi).collect();
                let power = force.iter().zip(&k).map(|(f, v)| f * v).sum();
                ForceTerms {
                    force,
                    omega: -gamma * n as f64,
                    power,
                    jp_k: k.iter().map(|v| -gamma * v).collect(),
                    jq_k: vec![0.0; n],
                    domega_dp: vec![0.0; n],
                    domega_dq: vec![0.0; n],
                }
            }
            BaseForce::CanonicalDissipative { g } => {
                let u = model.grad_q_unchecked(q);
                let h = k.iter().zip(p).map(|(v, pi)| 0.5 * v * pi).sum::<f64>() + model.potential_unchecked(q);
                let [g1, g2, g3] = poly_derivs(g, h);
                let k2: f64 = k.iter().map(|v| v * v).sum();
                let inv_m: Vec<f64> = (0..n).map(|j| 1.0 / model.component_mass(j)).collect();
                let m_sum: f64 = inv_m.iter().sum();
                ForceTerms {
                    force: k.iter().map(|v| -g1 * v).collect(),
                    omega: -g2 * k2 - g1 * m_sum,
                    power: -g1 * k2,
                    jp_k: (0..n).map(|i| -g2 * k[i] * k2 - g1 * k[i] * inv_m[i]).collect(),
                    jq_k: u.iter().map(|ui| -g2 * ui * k2).collect(),
                    domega_dp: (0..n)
                        .map(|i| -g3 * k[i] * k2 - g2 * 2.0 * k[i] * inv_m[i] - g2 * k[i] * m_sum)
                        .collect(),
                    domega_dq: u.iter().map(|ui| -g3 * ui * k2 - g2 * ui * m_sum).collect(),
                }
            }
        }
    }

    /// `J[j][i] = dF_j/dp_i`.
    pub fn jacobian_p(&self, model: &SystemModel, s: &PhaseState) -> Result<Vec<Vec<f64>>> {
        let h = model.hamiltonian(s)?;
        let n = s.len();
        let k = model.grad_p_unchecked(&s.p);
        Ok((0..n)
            .map(|j| {
                (0..n)
                    .map(|i| {
                        let diag = if i == j { 1.0 / model.component_mass(j) } else { 0.0 };
                        match self {
                            BaseForce::LinearFriction { gamma } => if i == j { -gamma } else { 0.0 },
                            BaseForce::CanonicalDissipative { g } => {
                                let [g1, g2, _] = poly_derivs(g, h);
                                -g2 * k[i] * k[j] - g1 * diag
                            }
                        }
                    })
                    .collect()
            })
            .collect())
    }

    /// `J[j][i] = dF_j/dq_i`.
    pub fn jacobian_q(&self, model: &SystemModel, s: &PhaseState) -> Result<Vec<Vec<f64>>> {
        let h = model.hamiltonian(s)?;
        let n = s.len();
        let k = model.grad_p_unchecked(&s.p);
        let u = model.grad_q_unchecked(&s.q);
        Ok((0..n)
            .map(|j| {
                (0..n)
                    .map(|i| match self {
                        BaseForce::LinearFriction { .. } => 0.0,
                        BaseForce::CanonicalDissipative { g } => -poly_derivs(g, h)[1] * u[i] * k[j],
                    })
                    .collect()
            })
            .collect())
    }
}

/// Power of the non-potential force, `sum_i F_i dH/dp_i`.
pub fn power(model: &SystemModel, force: &BaseForce, s: &PhaseState) -> Result<f64> {
    Ok(force.terms(model, s)?.power)
}

/// Momentum divergence of the non-potential force.
pub fn omega(model: &SystemModel, force: &BaseForce, s: &PhaseState) -> Result<f64> {
    Ok(force.terms(model, s)?.omega)
}

/// `P = df/dp` and `Q = df/dq`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintGradients {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

/// Multiplier and projected force at one state.
#[derive(Debug, Clone)]
pub(crate) struct Projection {
    pub lambda: f64,
    pub force_new: Vec<f64>,
}

/// A model, its non-potential force and the coefficient family that fixes
/// the constraint `beta(H) P - Omega = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedSystem {
    model: SystemModel,
    force: BaseForce,
    family: BetaFamily,
}

impl ConstrainedSystem {
    pub fn new(model: SystemModel, force: BaseForce, family: BetaFamily) -> Result<Self> {
        force.validate()?;
        family.validate()?;
        Ok(Self { model, force, family })
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    pub fn force(&self) -> &BaseForce {
        &self.force
    }

    pub fn family(&self) -> &BetaFamily {
        &self.family
    }

    pub fn power(&self, s: &PhaseState) -> Result<f64> {
        power(&self.model, &self.force, s)
    }

    pub fn omega(&self, s: &PhaseState) -> Result<f64> {
        omega(&self.model, &self.force, s)
    }

    pub fn constraint_value(&self, s: &PhaseState) -> Result<f64> {
        self.model.check(s)?;
        self.constraint_unchecked(&s.q, &s.p)
    }

    pub(crate) fn constraint_unchecked(&self, q: &[f64], p: &[f64]) -> Result<f64> {
        if self.force.is_null() {
            return Ok(0.0);
        }
        let t = self.force.terms_unchecked(&self.model, q, p);
        let h = self.energy_unchecked(q, p);
        Ok(self.family.beta(h)? * t.power - t.omega)
    }

    pub fn constraint_gradients(&self, s: &PhaseState) -> Result<ConstraintGradients> {
        self.model.check(s)?;
        Ok(self.gradients_unchecked(&s.q, &s.p)?.1)
    }

    fn energy_unchecked(&self, q: &[f64], p: &[f64]) -> f64 {
        let kin: f64 = p
            .iter()
            .enumerate()
            .map(|(j, pj)| pj * pj / (2.0 * self.model.component_mass(j)))
            .sum();
        kin + self.model.potential_unchecked(q)
    }

    /// Returns `(f, gradients, force terms)`.
    fn gradients_unchecked(&self, q: &[f64], p: &[f64]) -> Result<(f64, ConstraintGradients, ForceTerms)> {
        let n = q.len();
        let t = self.force.terms_unchecked(&self.model, q, p);
        if self.force.is_null() {
            let zero = ConstraintGradients {
                p: vec![0.0; n],
                q: vec![0.0; n],
            };
            return Ok((0.0, zero, t));
        }
        let h = self.energy_unchecked(q, p);
        let beta = self.family.beta(h)?;
        let dbeta = self.family.dbeta_dh(h)?;
        let k = self.model.grad_p_unchecked(p);
        let u = self.model.grad_q_unchecked(q);
        let gp = (0..n)
            .map(|i| {
                dbeta * k[i] * t.power + beta * t.jp_k[i] + beta * t.force[i] / self.model.component_mass(i)
                    - t.domega_dp[i]
            })
            .collect();
        let gq = (0..n)
            .map(|i| dbeta * u[i] * t.power + beta * t.jq_k[i] - t.domega_dq[i])
            .collect();
        let f = beta * t.power - t.omega;
        Ok((f, ConstraintGradients { p: gp, q: gq }, t))
    }

    pub(crate) fn project_unchecked(&self, q: &[f64], p: &[f64], time: f64) -> Result<Projection> {
        let (_, grads, terms) = self.gradients_unchecked(q, p)?;
        let u = self.model.grad_q_unchecked(q);
        if self.force.is_null() {
            return Ok(Projection {
                lambda: 0.0,
                force_new: u.iter().map(|v| -v).collect(),
            });
        }
        let k = self.model.grad_p_unchecked(p);
        let total: Vec<f64> = u.iter().zip(&terms.force).map(|(ui, fi)| -ui + fi).collect();
        let pp: f64 = grads.p.iter().map(|v| v * v).sum();
        let ff: f64 = total.iter().map(|v| v * v).sum();
        let threshold = SINGULAR_SCALE * (1.0 + ff);
        if !(pp > threshold) {
            return Err(Error::Singular {
                t: time,
                norm_sq: pp,
                threshold,
            });
        }
        let num: f64 = grads.p.iter().zip(&total).map(|(a, b)| a * b).sum::<f64>()
            + grads.q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>();
        let lambda = -num / pp;
        let force_new = total.iter().zip(&grads.p).map(|(fi, pi)| fi + lambda * pi).collect();
        Ok(Projection { lambda, force_new })
    }

    pub fn lagrange_multiplier(&self, s: &PhaseState) -> Result<f64> {
        self.model.check(s)?;
        Ok(self.project_unchecked(&s.q, &s.p, s.t)?.lambda)
    }

    /// Total momentum force `-dU/dq + F + lambda P` of the projected system.
    pub fn project_force(&self, s: &PhaseState) -> Result<Vec<f64>> {
        self.model.check(s)?;
        Ok(self.project_unchecked(&s.q, &s.p, s.t)?.force_new)
    }

    /// Velocity field `(dq/dt, dp/dt)` of the projected system.
    pub fn flow(&self, s: &PhaseState) -> Result<(Vec<f64>, Vec<f64>)> {
        self.model.check(s)?;
        self.flow_unchecked(&s.q, &s.p, s.t)
    }

    pub(crate) fn flow_unchecked(&self, q: &[f64], p: &[f64], time: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let proj = self.project_unchecked(q, p, time)?;
        Ok((self.model.grad_p_unchecked(p), proj.force_new))
    }

    /// Power delivered by the non-potential part of the projected force,
    /// `(F_new + dU/dq) . K`.
    pub fn effective_power(&self, s: &PhaseState) -> Result<f64> {
        let f = self.project_force(s)?;
        let u = self.model.grad_q_unchecked(&s.q);
        let k = self.model.grad_p_unchecked(&s.p);
        Ok(f.iter().zip(&u).zip(&k).map(|((fi, ui), ki)| (fi + ui) * ki).sum())
    }

    /// Momentum divergence of the projected force by central differences
    /// with step `1e-5 (1 + |p_i|)`.
    pub fn effective_omega(&self, s: &PhaseState) -> Result<f64> {
        self.model.check(s)?;
        let mut p = s.p.clone();
        let mut div = 0.0;
        for i in 0..p.len() {
            let h = 1e-5 * (1.0 + s.p[i].abs());
            let orig = p[i];
            p[i] = orig + h;
            let fp = self.project_unchecked(&s.q, &p, s.t)?.force_new[i];
            p[i] = orig - h;
            let fm = self.project_unchecked(&s.q, &p, s.t)?.force_new[i];
            p[i] = orig;
            div += (fp - fm) / (2.0 * h);
        }
        Ok(div)
    }

    /// `Omega[F_new] - beta(H) P[F_new]`, the constraint evaluated on the
    /// projected force itself, together with `beta(H) P[F_new]`.
    pub fn closure_residual(&self, s: &PhaseState) -> Result<(f64, f64)> {
        let h = self.model.hamiltonian(s)?;
        if self.force.is_null() {
            return Ok((0.0, 0.0));
        }
        let bp = self.family.beta(h)? * self.effective_power(s)?;
        Ok((self.effective_omega(s)? - bp, bp))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::Potential;

    fn state(q: &[f64], p: &[f64]) -> PhaseState {
        PhaseState::new(q.to_vec(), p.to_vec(), 0.0).unwrap()
    }

    fn cd() -> BaseForce {
        BaseForce::CanonicalDissipative {
            g: vec![0.3, 0.5, 0.1, -0.02],
        }
    }

    fn quartic_model() -> SystemModel {
        SystemModel::new(2, 2, vec![1.0, 1.7], Potential::Quartic { a: 1.0, b: 0.5 }).unwrap()
    }

    const Q: [f64; 4] = [0.3, -0.8, 1.1, 0.25];
    const P: [f64; 4] = [0.6, 0.2, -0.9, 1.3];

    #[test]
    fn polynomial_derivatives() {
        // G = 1 + 2H + 3H^2 + 4H^3
        let d = poly_derivs(&[1.0, 2.0, 3.0, 4.0], 2.0);
        assert_eq!(d, [2.0 + 12.0 + 48.0, 6.0 + 48.0, 24.0]);
        assert_eq!(poly_derivs(&[5.0], 1.0), [0.0; 3]);
    }

    #[test]
    fn friction_power_and_omega() {
        let m = SystemModel::uniform(1, 3, 2.0, Potential::Harmonic { omega: 1.0 }).unwrap();
        let f = BaseForce::LinearFriction { gamma: 0.7 };
        let s = state(&[0.1, 0.2, 0.3], &[1.0, -2.0, 0.5]);
        let p2 = 1.0 + 4.0 + 0.25;
        assert!((power(&m, &f, &s).unwrap() + 0.7 * p2 / 2.0).abs() < 1e-15);
        assert_eq!(omega(&m, &f, &s).unwrap(), -3.0 * 0.7);
        let rest = state(&[0.1, 0.2, 0.3], &[0.0; 3]);
        assert_eq!(power(&m, &cd(), &rest).unwrap(), 0.0);
    }

    #[test]
    fn dissipative_power_is_a_dot_product() {
        let m = quartic_model();
        let s = state(&Q, &P);
        let force = cd().force(&m, &s).unwrap();
        let k = m.grad_p(&s).unwrap();
        let direct: f64 = force.iter().zip(&k).map(|(a, b)| a * b).sum();
        assert!((power(&m, &cd(), &s).unwrap() - direct).abs() < 1e-14);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let m = quartic_model();
        let s = state(&Q, &P);
        let f = cd();
        let jp = f.jacobian_p(&m, &s).unwrap();
        let jq = f.jacobian_q(&m, &s).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let mut sp = s.clone();
            let mut sm = s.clone();
            sp.p[i] += h;
            sm.p[i] -= h;
            let fp = f.force(&m, &sp).unwrap();
            let fm = f.force(&m, &sm).unwrap();
            let mut sqp = s.clone();
            let mut sqm = s.clone();
            sqp.q[i] += h;
            sqm.q[i] -= h;
            let gp = f.force(&m, &sqp).unwrap();
            let gm = f.force(&m, &sqm).unwrap();
            for j in 0..4 {
                let fd = (fp[j] - fm[j]) / (2.0 * h);
                assert!((fd - jp[j][i]).abs() < 1e-6 * jp[j][i].abs().max(1.0));
                let fd = (gp[j] - gm[j]) / (2.0 * h);
                assert!((fd - jq[j][i]).abs() < 1e-6 * jq[j][i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn contractions_match_jacobians() {
        let m = quartic_model();
        let s = state(&Q, &P);
        let f = cd();
        let t = f.terms(&m, &s).unwrap();
        let jp = f.jacobian_p(&m, &s).unwrap();
        let jq = f.jacobian_q(&m, &s).unwrap();
        let k = m.grad_p(&s).unwrap();
        for i in 0..4 {
            let a: f64 = (0..4).map(|j| jp[j][i] * k[j]).sum();
            let b: f64 = (0..4).map(|j| jq[j][i] * k[j]).sum();
            assert!((a - t.jp_k[i]).abs() < 1e-13);
            assert!((b - t.jq_k[i]).abs() < 1e-13);
        }
        let div: f64 = (0..4).map(|i| jp[i][i]).sum();
        assert!((div - t.omega).abs() < 1e-13);
    }

    #[test]
    fn omega_gradients_match_finite_differences() {
        let m = quartic_model();
        let s = state(&Q, &P);
        let f = cd();
        let t = f.terms(&m, &s).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let mut a = s.clone();
            let mut b = s.clone();
            a.p[i] += h;
            b.p[i] -= h;
            let fd = (omega(&m, &f, &a).unwrap() - omega(&m, &f, &b).unwrap()) / (2.0 * h);
            assert!((fd - t.domega_dp[i]).abs() < 1e-6 * t.domega_dp[i].abs().max(1.0));
            let mut a = s.clone();
            let mut b = s.clone();
            a.q[i] += h;
            b.q[i] -= h;
            let fd = (omega(&m, &f, &a).unwrap() - omega(&m, &f, &b).unwrap()) / (2.0 * h);
            assert!((fd - t.domega_dq[i]).abs() < 1e-6 * t.domega_dq[i].abs().max(1.0));
        }
    }

    #[test]
    fn isokinetic_constraint_vanishes_at_target_kinetic_energy() {
        // N d = 3, beta0 = 3 / kT with kT = 1.5, so p^2 / m = 1.5 on the surface
        let m = SystemModel::uniform(1, 3, 1.0, Potential::Harmonic { omega: 1.0 }).unwrap();
        let sys = ConstrainedSystem::new(
            m,
            BaseForce::LinearFriction { gamma: 0.4 },
            BetaFamily::Constant { beta0: 2.0 },
        )
        .unwrap();
        let s = state(&[0.2, 0.1, -0.3], &[1.0, (0.5f64).sqrt(), 0.0]);
        assert!(sys.constraint_value(&s).unwrap().abs() < 1e-15);
        let off = state(&[0.2, 0.1, -0.3], &[1.0, 1.0, 0.0]);
        let expected = -2.0 * 0.4 * 2.0 + 0.4 * 3.0;
        assert!((sys.constraint_value(&off).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn one_dimensional_friction_gradient() {
        let m = SystemModel::uniform(1, 1, 1.0, Potential::Harmonic { omega: 1.3 }).unwrap();
        let sys = ConstrainedSystem::new(
            m,
            BaseForce::LinearFriction { gamma: 0.6 },
            BetaFamily::Constant { beta0: 1.7 },
        )
        .unwrap();
        let g = sys.constraint_gradients(&state(&[0.4], &[0.9])).unwrap();
        assert!((g.p[0] + 2.0 * 1.7 * 0.6 * 0.9).abs() < 1e-15);
        assert_eq!(g.q[0], 0.0);
    }

    #[test]
    fn conservative_limit_has_no_constraint() {
        let m = quartic_model();
        let sys = ConstrainedSystem::new(
            m.clone(),
            BaseForce::LinearFriction { gamma: 0.0 },
            BetaFamily::Constant { beta0: 1.0 },
        )
        .unwrap();
        let s = state(&Q, &P);
        assert_eq!(sys.constraint_value(&s).unwrap(), 0.0);
        let g = sys.constraint_gradients(&s).unwrap();
        assert!(g.p.iter().chain(&g.q).all(|v| *v == 0.0));
        let f = sys.project_force(&s).unwrap();
        let u = m.grad_q(&s).unwrap();
        assert!(f.iter().zip(&u).all(|(a, b)| *a == -b));
        assert_eq!(sys.effective_power(&s).unwrap(), 0.0);
    }

    #[test]
    fn zero_momentum_is_singular() {
        let m = SystemModel::uniform(1, 2, 1.0, Potential::Harmonic { omega: 1.0 }).unwrap();
        let sys = ConstrainedSystem::new(
            m,
            BaseForce::LinearFriction { gamma: 1.0 },
            BetaFamily::Constant { beta0: 2.0 },
        )
        .unwrap();
        assert!(matches!(
            sys.project_force(&state(&[0.5, 0.1], &[0.0, 0.0])),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn multiplier_makes_flow_tangent() {
        let families = [
            BetaFamily::Constant { beta0: 1.3 },
            BetaFamily::Linear { beta1: 0.9, beta2: 0.2 },
            BetaFamily::BreitWigner { energy: 1.0, width: 2.0 },
            BetaFamily::FermiBose { beta0: 1.1, mu: 0.5, a: 1.0 },
        ];
        for fam in families {
            for force in [BaseForce::LinearFriction { gamma: 0.8 }, cd()] {
                let sys = ConstrainedSystem::new(quartic_model(), force, fam.clone()).unwrap();
                let s = state(&Q, &P);
                let g = sys.constraint_gradients(&s).unwrap();
                let fnew = sys.project_force(&s).unwrap();
                let k = sys.model().grad_p(&s).unwrap();
                let rate: f64 = g.p.iter().zip(&fnew).map(|(a, b)| a * b).sum::<f64>()
                    + g.q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>();
                let scale: f64 = g.p.iter().zip(&fnew).map(|(a, b)| (a * b).abs()).sum::<f64>() + 1.0;
                assert!(rate.abs() < 1e-10 * scale, "{fam:?}: {rate}");
            }
        }
    }
}
