//! Phase-space states and separable Hamiltonian models.
//!
//! Every model has the form `H(q, p; x) = sum_j p_j^2 / (2 m_j) + U(q; x)`,
//! where `j` runs over all `N * d` Cartesian components and the mass of a
//! component is the mass of the particle it belongs to.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point `(q, p)` of the `2 N d` dimensional phase space together with its
/// time stamp.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub t: f64,
}

impl PhaseState {
    pub fn new(q: Vec<f64>, p: Vec<f64>, t: f64) -> Result<Self> {
        if q.len() != p.len() || q.is_empty() {
            return Err(Error::Dimension {
                expected: q.len().max(1),
                q: q.len(),
                p: p.len(),
            });
        }
        if let Some(index) = q.iter().chain(p.iter()).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if !t.is_finite() {
            return Err(Error::NonFinite { index: 2 * q.len() });
        }
        Ok(Self { q, p, t })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            q: vec![0.0; n],
            p: vec![0.0; n],
            t: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.p.iter()).all(|v| v.is_finite()) && self.t.is_finite()
    }

    pub fn with_momenta(&self, p: Vec<f64>) -> Self {
        Self {
            q: self.q.clone(),
            p,
            t: self.t,
        }
    }
}

/// Closed set of external potentials. Each variant provides its energy,
/// gradient and derivatives with respect to its own parameters analytically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Potential {
    /// `U = sum_j m_j omega^2 q_j^2 / 2`.
    Harmonic { omega: f64 },
    /// `U = sum_j (a q_j^2 / 2 + b q_j^4 / 4)`, independent of the masses.
    Quartic { a: f64, b: f64 },
    /// `U = 0`. The box edge only matters for phase-space integrals, where
    /// positions range over `[-L/2, L/2]` per component.
    Free {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        box_length: Option<f64>,
    },
}

impl Potential {
    pub fn name(&self) -> &'static str {
        match self {
            Potential::Harmonic { .. } => "harmonic",
            Potential::Quartic { .. } => "quartic",
            Potential::Free { .. } => "free",
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Potential::Harmonic { omega } if !(omega.is_finite() && omega > 0.0) => Err(
                Error::InvalidModel(format!("harmonic omega must be positive, got {omega}")),
            ),
            Potential::Quartic { a, b } if !(a.is_finite() && a > 0.0 && b.is_finite() && b >= 0.0) => {
                Err(Error::InvalidModel(format!(
                    "quartic potential needs a > 0 and b >= 0, got a={a}, b={b}"
                )))
            }
            Potential::Free {
                box_length: Some(l),
            } if !(l.is_finite() && l > 0.0) => Err(Error::InvalidModel(format!(
                "free-particle box length must be positive, got {l}"
            ))),
            _ => Ok(()),
        }
    }

    /// Names of the potential parameters that enter `H`.
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            Potential::Harmonic { .. } => &["omega"],
            Potential::Quartic { .. } => &["a", "b"],
            Potential::Free { .. } => &[],
        }
    }

    fn param(&self, name: &str) -> Option<f64> {
        match (self, name) {
            (Potential::Harmonic { omega }, "omega") => Some(*omega),
            (Potential::Quartic { a, .. }, "a") => Some(*a),
            (Potential::Quartic { b, .. }, "b") => Some(*b),
            _ => None,
        }
    }

    fn set_param(&mut self, name: &str, value: f64) -> bool {
        match (self, name) {
            (Potential::Harmonic { omega }, "omega") => *omega = value,
            (Potential::Quartic { a, .. }, "a") => *a = value,
            (Potential::Quartic { b, .. }, "b") => *b = value,
            _ => return false,
        }
        true
    }

    #[inline]
    fn energy_component(&self, mass: f64, q: f64) -> f64 {
        match *self {
            Potential::Harmonic { omega } => 0.5 * mass * omega * omega * q * q,
            Potential::Quartic { a, b } => {
                let q2 = q * q;
                0.5 * a * q2 + 0.25 * b * q2 * q2
            }
            Potential::Free { .. } => 0.0,
        }
    }

    #[inline]
    fn gradient_component(&self, mass: f64, q: f64) -> f64 {
        match *self {
            Potential::Harmonic { omega } => mass * omega * omega * q,
            Potential::Quartic { a, b } => a * q + b * q * q * q,
            Potential::Free { .. } => 0.0,
        }
    }
}

/// A separable `N`-particle Hamiltonian in `d` dimensions plus the external
/// parameters `x` that label it.
///
/// `x` consists of the potential's own parameters and any number of extra
/// named labels (a temperature, say) that do not enter `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    n_particles: usize,
    dim: usize,
    masses: Vec<f64>,
    potential: Potential,
    extra: BTreeMap<String, f64>,
}

impl SystemModel {
    pub fn new(n_particles: usize, dim: usize, masses: Vec<f64>, potential: Potential) -> Result<Self> {
        if n_particles == 0 || dim == 0 {
            return Err(Error::InvalidModel(format!(
                "need at least one particle and one dimension, got N={n_particles}, d={dim}"
            )));
        }
        if masses.len() != n_particles {
            return Err(Error::InvalidModel(format!(
                "expected {n_particles} masses, got {}",
                masses.len()
            )));
        }
        if let Some(m) = masses.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return Err(Error::InvalidModel(format!("masses must be positive, got {m}")));
        }
        potential.validate()?;
        Ok(Self {
            n_particles,
            dim,
            masses,
            potential,
            extra: BTreeMap::new(),
        })
    }

    /// Model with all masses equal to `mass`.
    pub fn uniform(n_particles: usize, dim: usize, mass: f64, potential: Potential) -> Result<Self> {
        Self::new(n_particles, dim, vec![mass; n_particles], potential)
    }

    /// Adds an external parameter that labels the model without entering `H`.
    pub fn with_extra(mut self, name: impl Into<String>, value: f64) -> Result<Self> {
        let name = name.into();
        if self.potential.param(&name).is_some() {
            return Err(Error::InvalidModel(format!(
                "`{name}` is already a potential parameter"
            )));
        }
        self.extra.insert(name, value);
        Ok(self)
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of Cartesian degrees of freedom, `N * d`.
    pub fn n_dof(&self) -> usize {
        self.n_particles * self.dim
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn extra(&self) -> &BTreeMap<String, f64> {
        &self.extra
    }

    /// Mass of Cartesian component `j`.
    #[inline]
    pub fn component_mass(&self, j: usize) -> f64 {
        self.masses[j / self.dim]
    }

    pub fn has_uniform_masses(&self) -> bool {
        self.masses.windows(2).all(|w| w[0] == w[1])
    }

    pub fn check(&self, s: &PhaseState) -> Result<()> {
        let n = self.n_dof();
        if s.q.len() != n || s.p.len() != n {
            return Err(Error::Dimension {
                expected: n,
                q: s.q.len(),
                p: s.p.len(),
            });
        }
        Ok(())
    }

    pub fn kinetic(&self, s: &PhaseState) -> Result<f64> {
        self.check(s)?;
        Ok(s.p
            .iter()
            .enumerate()
            .map(|(j, p)| p * p / (2.0 * self.component_mass(j)))
            .sum())
    }

    pub fn potential_energy(&self, s: &PhaseState) -> Result<f64> {
        self.check(s)?;
        Ok(self.potential_unchecked(&s.q))
    }

    pub(crate) fn potential_unchecked(&self, q: &[f64]) -> f64 {
        q.iter()
            .enumerate()
            .map(|(j, &qj)| self.potential.energy_component(self.component_mass(j), qj))
            .sum()
    }

    pub fn hamiltonian(&self, s: &PhaseState) -> Result<f64> {
        Ok(self.kinetic(s)? + self.potential_energy(s)?)
    }

    /// `dH/dq = dU/dq`.
    pub fn grad_q(&self, s: &PhaseState) -> Result<Vec<f64>> {
        self.check(s)?;
        Ok(self.grad_q_unchecked(&s.q))
    }

    pub(crate) fn grad_q_unchecked(&self, q: &[f64]) -> Vec<f64> {
        q.iter()
            .enumerate()
            .map(|(j, &qj)| self.potential.gradient_component(self.component_mass(j), qj))
            .collect()
    }

    /// `dH/dp = p / m`, the velocity field `K`.
    pub fn grad_p(&self, s: &PhaseState) -> Result<Vec<f64>> {
        self.check(s)?;
        Ok(self.grad_p_unchecked(&s.p))
    }

    pub(crate) fn grad_p_unchecked(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .enumerate()
            .map(|(j, pj)| pj / self.component_mass(j))
            .collect()
    }

    /// All external parameter names: potential parameters first, then extras.
    pub fn param_names(&self) -> Vec<String> {
        self.potential
            .param_names()
            .iter()
            .map(|s| s.to_string())
            .chain(self.extra.keys().cloned())
            .collect()
    }

    pub fn param(&self, name: &str) -> Result<f64> {
        self.potential
            .param(name)
            .or_else(|| self.extra.get(name).copied())
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    /// True if `name` is a parameter that `H` actually depends on.
    pub fn enters_hamiltonian(&self, name: &str) -> bool {
        self.potential.param(name).is_some()
    }

    /// Copy of the model with parameter `name` set to `value`.
    pub fn with_param(&self, name: &str, value: f64) -> Result<Self> {
        let mut out = self.clone();
        if out.potential.set_param(name, value) {
            out.potential.validate()?;
        } else if let Some(slot) = out.extra.get_mut(name) {
            *slot = value;
        } else {
            return Err(Error::UnknownParameter(name.to_string()));
        }
        Ok(out)
    }

    /// `dH/dx_k` at state `s`.
    pub fn param_derivative(&self, s: &PhaseState, name: &str) -> Result<f64> {
        self.check(s)?;
        match (&self.potential, name) {
            (Potential::Harmonic { omega }, "omega") => Ok(s
                .q
                .iter()
                .enumerate()
                .map(|(j, q)| self.component_mass(j) * omega * q * q)
                .sum()),
            (Potential::Quartic { .. }, "a") => Ok(s.q.iter().map(|q| 0.5 * q * q).sum()),
            (Potential::Quartic { .. }, "b") => Ok(s.q.iter().map(|q| 0.25 * q.powi(4)).sum()),
            _ if self.extra.contains_key(name) => Ok(0.0),
            _ => Err(Error::UnknownParameter(name.to_string())),
        }
    }

    /// Coefficients `c_k` with `H(x') - H(x) = sum_k c_k dH/dx_k |_x` holding
    /// exactly for every state, where `x'` is `other`'s parameter set.
    ///
    /// Both potentials are affine in a function of their parameters (`omega^2`
    /// for the oscillator, `a` and `b` for the quartic), which is what makes
    /// the identity exact.
    pub fn exact_shift_coefficients(&self, other: &SystemModel) -> Result<Vec<(String, f64)>> {
        if self.n_particles != other.n_particles || self.dim != other.dim || self.masses != other.masses {
            return Err(Error::Contract("models differ in particle content".into()));
        }
        match (&self.potential, &other.potential) {
            (Potential::Harmonic { omega: w0 }, Potential::Harmonic { omega: w1 }) => {
                Ok(vec![("omega".into(), (w1 * w1 - w0 * w0) / (2.0 * w0))])
            }
            (Potential::Quartic { a: a0, b: b0 }, Potential::Quartic { a: a1, b: b1 }) => {
                Ok(vec![("a".into(), a1 - a0), ("b".into(), b1 - b0)])
            }
            (Potential::Free { box_length: l0 }, Potential::Free { box_length: l1 }) if l0 == l1 => {
                Ok(Vec::new())
            }
            _ => Err(Error::Contract("models use different potentials".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(q: &[f64], p: &[f64]) -> PhaseState {
        PhaseState::new(q.to_vec(), p.to_vec(), 0.0).unwrap()
    }

    #[test]
    fn zero_state_free_particle_has_zero_energy() {
        let m = SystemModel::uniform(1, 1, 1.0, Potential::Free { box_length: None }).unwrap();
        assert_eq!(m.hamiltonian(&state(&[0.3], &[0.0])).unwrap(), 0.0);
    }

    #[test]
    fn unit_oscillator_energy() {
        let m = SystemModel::uniform(1, 1, 1.0, Potential::Harmonic { omega: 1.0 }).unwrap();
        assert_eq!(m.hamiltonian(&state(&[1.0], &[1.0])).unwrap(), 1.0);
    }

    #[test]
    fn oscillator_gradients_are_linear() {
        let m = SystemModel::uniform(1, 1, 1.0, Potential::Harmonic { omega: 1.0 }).unwrap();
        let s = state(&[2.0], &[3.0]);
        assert_eq!(m.grad_q(&s).unwrap(), vec![2.0]);
        assert_eq!(m.grad_p(&s).unwrap(), vec![3.0]);
    }

    #[test]
    fn zero_momentum_gives_zero_velocity() {
        let m = SystemModel::new(2, 2, vec![1.0, 3.0], Potential::Quartic { a: 1.0, b: 2.0 }).unwrap();
        let s = state(&[0.1, -0.4, 1.2, 0.7], &[0.0; 4]);
        assert!(m.grad_p(&s).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn omega_derivative_of_unit_oscillator() {
        let m = SystemModel::uniform(1, 1, 1.0, Potential::Harmonic { omega: 1.0 }).unwrap();
        assert_eq!(m.param_derivative(&state(&[1.0], &[0.5]), "omega").unwrap(), 1.0);
    }

    #[test]
    fn labels_do_not_enter_the_hamiltonian() {
        let m = SystemModel::uniform(1, 2, 1.0, Potential::Free { box_length: None })
            .unwrap()
            .with_extra("kT", 2.0)
            .unwrap();
        let s = state(&[0.1, 0.2], &[0.3, 0.4]);
        assert_eq!(m.param_derivative(&s, "kT").unwrap(), 0.0);
        assert!(matches!(
            m.param_derivative(&s, "nope"),
            Err(Error::UnknownParameter(_))
        ));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = SystemModel::uniform(2, 3, 1.0, Potential::Harmonic { omega: 1.0 }).unwrap();
        let s = state(&[0.0; 5], &[0.0; 5]);
        assert!(matches!(m.hamiltonian(&s), Err(Error::Dimension { expected: 6, .. })));
    }

    #[test]
    fn rejects_bad_models() {
        assert!(SystemModel::uniform(1, 1, -1.0, Potential::Free { box_length: None }).is_err());
        assert!(SystemModel::uniform(0, 1, 1.0, Potential::Free { box_length: None }).is_err());
        assert!(SystemModel::uniform(1, 1, 1.0, Potential::Harmonic { omega: 0.0 }).is_err());
        assert!(SystemModel::uniform(1, 1, 1.0, Potential::Quartic { a: 1.0, b: -1.0 }).is_err());
        assert!(PhaseState::new(vec![f64::NAN], vec![0.0], 0.0).is_err());
        assert!(PhaseState::new(vec![0.0], vec![0.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn exact_shift_reproduces_energy_difference() {
        let m0 = SystemModel::new(2, 1, vec![1.0, 2.5], Potential::Harmonic { omega: 1.3 }).unwrap();
        let m1 = m0.with_param("omega", 1.7).unwrap();
        let s = state(&[0.4, -1.1], &[0.2, 0.9]);
        let shift: f64 = m0
            .exact_shift_coefficients(&m1)
            .unwrap()
            .iter()
            .map(|(k, c)| c * m0.param_derivative(&s, k).unwrap())
            .sum();
        let expected = m1.hamiltonian(&s).unwrap() - m0.hamiltonian(&s).unwrap();
        assert!((shift - expected).abs() < 1e-14);
    }
}
