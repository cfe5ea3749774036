//! Time integration of the projected equations of motion
//! `dq/dt = K`, `dp/dt = F_new`, with periodic return to the constraint
//! surface, plus the closed-form isokinetic flow and parallel ensembles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forces::{ConstrainedSystem, SINGULAR_SCALE};
use crate::phase::{PhaseState, SystemModel};

/// Surface projection stops once `|f|` is below this.
pub const PROJECTION_TOLERANCE: f64 = 1e-12;
pub const PROJECTION_MAX_ITER: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Rk4,
    SemiImplicitEuler,
}

fn default_projection_interval() -> usize {
    1
}

fn default_drift_tolerance() -> f64 {
    1e-6
}

fn default_stride() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    #[serde(default)]
    pub method: Method,
    pub dt: f64,
    pub n_steps: usize,
    /// Steps between projections back onto `f = 0`; zero disables the
    /// periodic projection (drift beyond tolerance still forces one).
    #[serde(default = "default_projection_interval")]
    pub projection_interval: usize,
    #[serde(default = "default_drift_tolerance")]
    pub drift_tolerance: f64,
    /// Steps between recorded samples.
    #[serde(default = "default_stride")]
    pub stride: usize,
}

impl IntegratorSpec {
    pub fn new(method: Method, dt: f64, n_steps: usize) -> Self {
        Self {
            method,
            dt,
            n_steps,
            projection_interval: default_projection_interval(),
            drift_tolerance: default_drift_tolerance(),
            stride: default_stride(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Contract(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.drift_tolerance.is_finite() && self.drift_tolerance > 0.0) {
            return Err(Error::Contract(format!(
                "drift_tolerance must be positive, got {}",
                self.drift_tolerance
            )));
        }
        if self.stride == 0 {
            return Err(Error::Contract("stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// Advances `s` by one step of `spec.dt`.
pub fn step(sys: &ConstrainedSystem, s: &PhaseState, spec: &IntegratorSpec) -> Result<PhaseState> {
    sys.model().check(s)?;
    let dt = spec.dt;
    match spec.method {
        Method::SemiImplicitEuler => {
            let (_, dp) = sys.flow_unchecked(&s.q, &s.p, s.t)?;
            let p: Vec<f64> = s.p.iter().zip(&dp).map(|(p, f)| p + dt * f).collect();
            let q = s
                .q
                .iter()
                .zip(&p)
                .enumerate()
                .map(|(j, (q, p))| q + dt * p / sys.model().component_mass(j))
                .collect();
            Ok(PhaseState { q, p, t: s.t + dt })
        }
        Method::Rk4 => rk4(s, dt, |q, p, t| sys.flow_unchecked(q, p, t)),
    }
}

type Field = (Vec<f64>, Vec<f64>);

fn rk4<F: Fn(&[f64], &[f64], f64) -> Result<Field>>(s: &PhaseState, dt: f64, flow: F) -> Result<PhaseState> {
    let shift = |x: &[f64], k: &[f64], h: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + h * b).collect() };
    let (k1q, k1p) = flow(&s.q, &s.p, s.t)?;
    let (k2q, k2p) = flow(&shift(&s.q, &k1q, 0.5 * dt), &shift(&s.p, &k1p, 0.5 * dt), s.t + 0.5 * dt)?;
    let (k3q, k3p) = flow(&shift(&s.q, &k2q, 0.5 * dt), &shift(&s.p, &k2p, 0.5 * dt), s.t + 0.5 * dt)?;
    let (k4q, k4p) = flow(&shift(&s.q, &k3q, dt), &shift(&s.p, &k3p, dt), s.t + dt)?;
    let combine = |x: &[f64], a: &[f64], b: &[f64], c: &[f64], d: &[f64]| -> Vec<f64> {
        (0..x.len())
            .map(|i| x[i] + dt / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]))
            .collect()
    };
    Ok(PhaseState {
        q: combine(&s.q, &k1q, &k2q, &k3q, &k4q),
        p: combine(&s.p, &k1p, &k2p, &k3p, &k4p),
        t: s.t + dt,
    })
}

/// Moves the momenta along `P = df/dp` with Newton steps until
/// `|f| < PROJECTION_TOLERANCE`. Positions are never changed.
pub fn project_to_surface(sys: &ConstrainedSystem, s: &PhaseState) -> Result<PhaseState> {
    sys.model().check(s)?;
    if sys.force().is_null() {
        return Ok(s.clone());
    }
    let mut p = s.p.clone();
    let mut f = sys.constraint_unchecked(&s.q, &p)?;
    for _ in 0..PROJECTION_MAX_ITER {
        if f.abs() < PROJECTION_TOLERANCE {
            return Ok(s.with_momenta(p));
        }
        let g = sys.constraint_gradients(&s.with_momenta(p.clone()))?;
        let pp: f64 = g.p.iter().map(|v| v * v).sum();
        let threshold = SINGULAR_SCALE * (1.0 + f * f);
        if !(pp > threshold) {
            return Err(Error::Singular {
                t: s.t,
                norm_sq: pp,
                threshold,
            });
        }
        let scale = f / pp;
        for (pi, gi) in p.iter_mut().zip(&g.p) {
            *pi -= scale * gi;
        }
        f = sys.constraint_unchecked(&s.q, &p)?;
        if !f.is_finite() {
            break;
        }
    }
    if f.abs() < PROJECTION_TOLERANCE {
        return Ok(s.with_momenta(p));
    }
    Err(Error::ProjectionFailed {
        iterations: PROJECTION_MAX_ITER,
        residual: f.abs(),
    })
}

/// One recorded point of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: PhaseState,
    pub energy: f64,
    pub constraint: f64,
    /// Momentum divergence of the projected force.
    pub omega: f64,
    /// Power of the non-potential part of the projected force.
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryStats {
    pub steps: usize,
    /// Largest `|f|` seen right after a step, before any projection.
    pub max_drift: f64,
    pub projections: usize,
    pub final_constraint: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub stats: TrajectoryStats,
}

fn record(sys: &ConstrainedSystem, s: &PhaseState, constraint: f64) -> Result<Sample> {
    Ok(Sample {
        t: s.t,
        state: s.clone(),
        energy: sys.model().hamiltonian(s)?,
        constraint,
        omega: sys.effective_omega(s)?,
        power: sys.effective_power(s)?,
    })
}

/// Integrates from `s0`, handing every `stride`-th sample to `sink` as soon
/// as it is produced, so a failing run leaves all earlier samples delivered.
pub fn run_trajectory_streaming<S: FnMut(&Sample)>(
    sys: &ConstrainedSystem,
    s0: &PhaseState,
    spec: &IntegratorSpec,
    mut sink: S,
) -> Result<TrajectoryStats> {
    spec.validate()?;
    sys.model().check(s0)?;
    let f0 = sys.constraint_value(s0)?;
    if f0.abs() > spec.drift_tolerance {
        return Err(Error::OffSurface {
            residual: f0.abs(),
            tolerance: spec.drift_tolerance,
        });
    }
    let t0 = s0.t;
    let mut s = s0.clone();
    let mut stats = TrajectoryStats {
        final_constraint: f0,
        ..Default::default()
    };
    sink(&record(sys, &s, f0)?);
    for n in 1..=spec.n_steps {
        let mut next = step(sys, &s, spec).map_err(|e| e.at_step(n))?;
        next.t = t0 + n as f64 * spec.dt;
        let mut f = sys.constraint_value(&next).map_err(|e| e.at_step(n))?;
        stats.max_drift = stats.max_drift.max(f.abs());
        let periodic = spec.projection_interval > 0 && n % spec.projection_interval == 0;
        if periodic || f.abs() > spec.drift_tolerance {
            next = project_to_surface(sys, &next).map_err(|e| e.at_step(n))?;
            f = sys.constraint_value(&next).map_err(|e| e.at_step(n))?;
            stats.projections += 1;
        }
        s = next;
        stats.steps = n;
        stats.final_constraint = f;
        if n % spec.stride == 0 {
            sink(&record(sys, &s, f).map_err(|e| e.at_step(n))?);
        }
    }
    Ok(stats)
}

pub fn run_trajectory(sys: &ConstrainedSystem, s0: &PhaseState, spec: &IntegratorSpec) -> Result<Trajectory> {
    let mut samples = Vec::with_capacity(spec.n_steps / spec.stride.max(1) + 1);
    let stats = run_trajectory_streaming(sys, s0, spec, |smp| samples.push(smp.clone()))?;
    Ok(Trajectory { samples, stats })
}

/// Closed-form isokinetic force `-dU/dq + p (p . dU/dq) / p^2` for uniform
/// masses, which keeps `p^2` fixed exactly.
fn isokinetic_force(model: &SystemModel, q: &[f64], p: &[f64], t: f64) -> Result<Vec<f64>> {
    let u = model.grad_q_unchecked(q);
    let p2: f64 = p.iter().map(|v| v * v).sum();
    let ff: f64 = u.iter().map(|v| v * v).sum();
    if !(p2 > SINGULAR_SCALE * (1.0 + ff)) {
        return Err(Error::Singular {
            t,
            norm_sq: p2,
            threshold: SINGULAR_SCALE * (1.0 + ff),
        });
    }
    let alpha = p.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() / p2;
    Ok(u.iter().zip(p).map(|(ui, pi)| -ui + alpha * pi).collect())
}

/// One RK4 step of the isokinetic flow at temperature `kt`.
///
/// The flow is evaluated with the instantaneous `p^2 / m` in place of `kT`,
/// which is identical on the surface and makes the step agree with the
/// generic projected step. `kt` only serves to reject states that are
/// clearly off the surface.
pub fn isokinetic_step(model: &SystemModel, s: &PhaseState, kt: f64, dt: f64) -> Result<PhaseState> {
    model.check(s)?;
    if !model.has_uniform_masses() {
        return Err(Error::Contract("the isokinetic fast path needs equal masses".into()));
    }
    let m = model.masses()[0];
    let ratio = s.p.iter().map(|v| v * v).sum::<f64>() / (m * kt);
    if ratio != 0.0 && (ratio - 1.0).abs() > 1e-3 {
        return Err(Error::OffSurface {
            residual: (ratio - 1.0).abs(),
            tolerance: 1e-3,
        });
    }
    rk4(s, dt, |q, p, t| {
        let force = isokinetic_force(model, q, p, t)?;
        Ok((p.iter().map(|v| v / m).collect(), force))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialSampler {
    /// Independent normal coordinates, then projected onto the surface.
    Gaussian { q_sigma: f64, p_sigma: f64 },
}

impl InitialSampler {
    pub fn validate(&self) -> Result<()> {
        match *self {
            InitialSampler::Gaussian { q_sigma, p_sigma }
                if !(q_sigma.is_finite() && q_sigma >= 0.0 && p_sigma.is_finite() && p_sigma > 0.0) =>
            {
                Err(Error::Contract(format!(
                    "sampler widths must be non-negative (p_sigma positive), got q={q_sigma}, p={p_sigma}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn draw<R: Rng>(&self, sys: &ConstrainedSystem, rng: &mut R) -> Result<PhaseState> {
        let n = sys.model().n_dof();
        match *self {
            InitialSampler::Gaussian { q_sigma, p_sigma } => {
                let q = (0..n).map(|_| q_sigma * rng.sample::<f64, _>(StandardNormal)).collect();
                let p = (0..n).map(|_| p_sigma * rng.sample::<f64, _>(StandardNormal)).collect();
                project_to_surface(sys, &PhaseState { q, p, t: 0.0 })
            }
        }
    }
}

/// Random stream for trajectory `index` of a seeded ensemble.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySummary {
    pub index: usize,
    pub initial: PhaseState,
    pub mean_energy: f64,
    pub energies: Vec<f64>,
    pub positions: Vec<f64>,
    pub stats: TrajectoryStats,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ensemble {
    pub summaries: Vec<TrajectorySummary>,
    pub failures: Vec<(usize, Error)>,
}

impl Ensemble {
    pub fn pooled_energies(&self) -> Vec<f64> {
        self.summaries.iter().flat_map(|s| s.energies.iter().copied()).collect()
    }

    pub fn pooled_positions(&self) -> Vec<f64> {
        self.summaries.iter().flat_map(|s| s.positions.iter().copied()).collect()
    }
}

/// Runs `n_traj` independent trajectories in parallel. Trajectory `i` draws
/// its initial state from stream `i` of `seed`, so results do not depend on
/// scheduling. Failed trajectories are listed without discarding the rest.
pub fn run_ensemble(
    sys: &ConstrainedSystem,
    sampler: &InitialSampler,
    spec: &IntegratorSpec,
    n_traj: usize,
    seed: u64,
) -> Result<Ensemble> {
    if n_traj == 0 {
        return Err(Error::Contract("an ensemble needs at least one trajectory".into()));
    }
    sampler.validate()?;
    spec.validate()?;
    let results: Vec<(usize, Result<TrajectorySummary>)> = (0..n_traj)
        .into_par_iter()
        .map(|index| {
            let run = || -> Result<TrajectorySummary> {
                let mut rng = stream_rng(seed, index as u64);
                let initial = sampler.draw(sys, &mut rng)?;
                let traj = run_trajectory(sys, &initial, spec)?;
                let energies: Vec<f64> = traj.samples.iter().map(|s| s.energy).collect();
                let mean_energy = energies.iter().sum::<f64>() / energies.len() as f64;
                let positions = traj.samples.iter().flat_map(|s| s.state.q.iter().copied()).collect();
                Ok(TrajectorySummary {
                    index,
                    initial,
                    mean_energy,
                    energies,
                    positions,
                    stats: traj.stats,
                })
            };
            (index, run())
        })
        .collect();
    let mut out = Ensemble::default();
    for (index, r) in results {
        match r {
            Ok(s) => out.summaries.push(s),
            Err(e) => out.failures.push((index, e)),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beta::BetaFamily;
    use crate::forces::BaseForce;
    use crate::phase::Potential;

    fn isokinetic(n: usize, d: usize, kt: f64) -> ConstrainedSystem {
        let m = SystemModel::uniform(n, d, 1.0, Potential::Harmonic { omega: 1.0 }).unwrap();
        ConstrainedSystem::new(
            m,
            BaseForce::LinearFriction { gamma: 1.0 },
            BetaFamily::Constant {
                beta0: (n * d) as f64 / kt,
            },
        )
        .unwrap()
    }

    #[test]
    fn ballistic_euler_step() {
        let m = SystemModel::uniform(1, 2, 2.0, Potential::Free { box_length: None }).unwrap();
        let sys = ConstrainedSystem::new(
            m,
            BaseForce::LinearFriction { gamma: 0.0 },
            BetaFamily::Constant { beta0: 1.0 },
        )
        .unwrap();
        let s = PhaseState::new(vec![1.0, -1.0], vec![0.5, 2.0], 0.0).unwrap();
        let spec = IntegratorSpec::new(Method::SemiImplicitEuler, 0.25, 1);
        let out = step(&sys, &s, &spec).unwrap();
        assert_eq!(out.p, s.p);
        assert_eq!(out.q, vec![1.0 + 0.5 * 0.25 / 2.0, -1.0 + 2.0 * 0.25 / 2.0]);
    }

    #[test]
    fn rk4_matches_hand_tableau_on_oscillator() {
        // conservative unit oscillator: the flow is linear, (q, p)' = (p, -q)
        let m = SystemModel::uniform(1, 1, 1.0, Potential::Harmonic { omega: 1.0 }).unwrap();
        let sys = ConstrainedSystem::new(
            m,
            BaseForce::LinearFriction { gamma: 0.0 },
            BetaFamily::Constant { beta0: 1.0 },
        )
        .unwrap();
        let h = 0.1;
        let s = PhaseState::new(vec![1.0], vec![0.0], 0.0).unwrap();
        let out = step(&sys, &s, &IntegratorSpec::new(Method::Rk4, h, 1)).unwrap();
        let (q0, p0) = (1.0, 0.0);
        let (k1q, k1p) = (p0, -q0);
        let (k2q, k2p) = (p0 + 0.5 * h * k1p, -(q0 + 0.5 * h * k1q));
        let (k3q, k3p) = (p0 + 0.5 * h * k2p, -(q0 + 0.5 * h * k2q));
        let (k4q, k4p) = (p0 + h * k3p, -(q0 + h * k3q));
        let q1 = q0 + h / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
        let p1 = p0 + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        assert!((out.q[0] - q1).abs() < 1e-15);
        assert!((out.p[0] - p1).abs() < 1e-15);
    }

    #[test]
    fn radial_projection_for_isokinetic_model() {
        let sys = isokinetic(1, 3, 1.0);
        let p_on = [0.6, -0.48, 0.64];
        let s = PhaseState::new(vec![0.2, 0.5, -0.1], p_on.iter().map(|v| 1.1 * v).collect(), 0.0).unwrap();
        let out = project_to_surface(&sys, &s).unwrap();
        for (a, b) in out.p.iter().zip(&p_on) {
            assert!((a - b).abs() < 1e-13);
        }
        assert_eq!(out.q, s.q);
        let again = project_to_surface(&sys, &out).unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn fast_path_matches_generic_step() {
        let sys = isokinetic(2, 3, 1.3);
        let mut rng = stream_rng(7, 0);
        for _ in 0..20 {
            let s = InitialSampler::Gaussian { q_sigma: 1.0, p_sigma: 1.0 }.draw(&sys, &mut rng).unwrap();
            let spec = IntegratorSpec::new(Method::Rk4, 1e-3, 1);
            let generic = step(&sys, &s, &spec).unwrap();
            let fast = isokinetic_step(sys.model(), &s, 1.3, 1e-3).unwrap();
            let dp: f64 = generic.p.iter().zip(&s.p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let diff: f64 = generic.p.iter().zip(&fast.p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(diff < 1e-10 * dp, "{diff} vs {dp}");
        }
    }

    #[test]
    fn fast_path_free_particles_move_ballistically() {
        let m = SystemModel::uniform(1, 2, 1.0, Potential::Free { box_length: None }).unwrap();
        let s = PhaseState::new(vec![0.0, 1.0], vec![0.6, 0.8], 0.0).unwrap();
        let out = isokinetic_step(&m, &s, 1.0, 0.5).unwrap();
        assert_eq!(out.p, s.p);
        assert!((out.q[0] - 0.3).abs() < 1e-15 && (out.q[1] - 1.4).abs() < 1e-15);
        let rest = PhaseState::new(vec![0.3, 0.1], vec![0.0, 0.0], 0.0).unwrap();
        let h = SystemModel::uniform(1, 2, 1.0, Potential::Harmonic { omega: 1.0 }).unwrap();
        assert!(matches!(isokinetic_step(&h, &rest, 1.0, 0.1), Err(Error::Singular { .. })));
    }

    #[test]
    fn off_surface_start_is_rejected() {
        let sys = isokinetic(1, 2, 1.0);
        let s = PhaseState::new(vec![0.1, 0.2], vec![2.0, 0.0], 0.0).unwrap();
        let r = run_trajectory(&sys, &s, &IntegratorSpec::new(Method::Rk4, 1e-3, 10));
        assert!(matches!(r, Err(Error::OffSurface { .. })));
    }

    #[test]
    fn trajectory_timestamps_follow_the_stride() {
        let sys = isokinetic(1, 2, 1.0);
        let s = project_to_surface(&sys, &PhaseState::new(vec![0.4, -0.2], vec![0.5, 0.9], 0.0).unwrap()).unwrap();
        let mut spec = IntegratorSpec::new(Method::Rk4, 0.01, 25);
        spec.stride = 5;
        let tr = run_trajectory(&sys, &s, &spec).unwrap();
        assert_eq!(tr.samples.len(), 6);
        for (i, smp) in tr.samples.iter().enumerate() {
            assert_eq!(smp.t, i as f64 * 5.0 * 0.01);
            assert!(smp.constraint.abs() <= spec.drift_tolerance);
        }
    }

    #[test]
    fn conservative_energy_is_conserved() {
        let m = SystemModel::uniform(2, 1, 1.0, Potential::Quartic { a: 1.0, b: 0.5 }).unwrap();
        let sys = ConstrainedSystem::new(
            m,
            BaseForce::LinearFriction { gamma: 0.0 },
            BetaFamily::Constant { beta0: 1.0 },
        )
        .unwrap();
        let s = PhaseState::new(vec![0.5, -1.0], vec![0.3, 0.2], 0.0).unwrap();
        let mut spec = IntegratorSpec::new(Method::Rk4, 1e-2, 10_000);
        spec.stride = 1000;
        let tr = run_trajectory(&sys, &s, &spec).unwrap();
        let e0 = tr.samples[0].energy;
        for smp in &tr.samples {
            assert!((smp.energy - e0).abs() < 1e-8);
        }
    }

    #[test]
    fn ensembles_are_reproducible() {
        let sys = isokinetic(1, 2, 1.0);
        let sampler = InitialSampler::Gaussian { q_sigma: 1.0, p_sigma: 1.0 };
        let spec = IntegratorSpec::new(Method::Rk4, 1e-2, 50);
        let a = run_ensemble(&sys, &sampler, &spec, 8, 42).unwrap();
        let b = run_ensemble(&sys, &sampler, &spec, 8, 42).unwrap();
        assert_eq!(a.pooled_energies(), b.pooled_energies());
        assert!(a.failures.is_empty());
    }

    #[test]
    fn single_member_ensemble_is_a_trajectory() {
        let sys = isokinetic(1, 2, 1.0);
        let sampler = InitialSampler::Gaussian { q_sigma: 1.0, p_sigma: 1.0 };
        let spec = IntegratorSpec::new(Method::Rk4, 1e-2, 50);
        let e = run_ensemble(&sys, &sampler, &spec, 1, 3).unwrap();
        let tr = run_trajectory(&sys, &e.summaries[0].initial, &spec).unwrap();
        let direct: Vec<f64> = tr.samples.iter().map(|s| s.energy).collect();
        assert_eq!(e.summaries[0].energies, direct);
    }
}
