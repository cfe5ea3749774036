//! Stationary densities `rho = exp(-B(H)) / Z`, their normalization through
//! the density of states, Liouville residuals and goodness-of-fit checks of
//! sampled or simulated energies.

use std::f64::consts::FRAC_PI_2;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beta::BetaFamily;
use crate::dos::{orbit_period, DensityOfStates};
use crate::dynamics::{step, stream_rng, IntegratorSpec};
use crate::error::{Error, Result};
use crate::forces::ConstrainedSystem;
use crate::phase::{PhaseState, Potential, SystemModel};
use crate::quadrature::integrate_panels;
use crate::stats;

/// Tail cutoff: integration stops where `ln(E g(E) rho(E))` has fallen this
/// far below its maximum.
pub const TAIL_DROP: f64 = 50.0;
/// Segments of the tabulated energy CDF.
pub const CDF_SEGMENTS: usize = 4096;
/// Smallest sample accepted by the histogram comparison.
pub const MIN_HISTOGRAM_SAMPLES: usize = 1000;
/// Bins used by the pushforward comparison.
pub const PUSHFORWARD_BINS: usize = 40;

const PANELS: usize = 32;
const REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyWindow {
    pub min: f64,
    pub max: f64,
}

impl EnergyWindow {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min >= 0.0 && max > min) {
            return Err(Error::Contract(format!(
                "energy window needs 0 <= min < max, got [{min}, {max}]"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, e: f64) -> bool {
        e >= self.min && e <= self.max
    }
}

/// A normalized stationary density for one model and coefficient family.
#[derive(Debug)]
pub struct DensityModel {
    model: SystemModel,
    family: BetaFamily,
    window: Option<EnergyWindow>,
    dos: DensityOfStates,
    lo: f64,
    hi: f64,
    shift: f64,
    norm: f64,
    ln_z: f64,
    out_of_window: AtomicUsize,
}

impl Clone for DensityModel {
    fn clone(&self) -> Self {
        Self {
            model: self.model.clone(),
            family: self.family.clone(),
            window: self.window,
            dos: self.dos.clone(),
            lo: self.lo,
            hi: self.hi,
            shift: self.shift,
            norm: self.norm,
            ln_z: self.ln_z,
            out_of_window: AtomicUsize::new(self.out_of_window.load(Ordering::Relaxed)),
        }
    }
}

/// `ln(E g(E)) - B(E)` scanned over `E = 2^k`; returns the first energy past
/// the maximum where it has dropped by `TAIL_DROP` and is still falling.
fn tail_cutoff(model: &SystemModel, family: &BetaFamily) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    let mut prev = f64::NEG_INFINITY;
    for k in -30..=64 {
        let e = 2f64.powi(k);
        let l = DensityOfStates::tail_log_g(model, e) + e.ln() - family.antiderivative(e)?;
        if l.is_nan() {
            break;
        }
        best = best.max(l);
        if l < best - TAIL_DROP && l < prev {
            // tighten to the crossing inside the last doubling
            let target = best - TAIL_DROP;
            let (mut a, mut b) = (0.5 * e, e);
            for _ in 0..40 {
                let mid = 0.5 * (a + b);
                let lm = DensityOfStates::tail_log_g(model, mid) + mid.ln() - family.antiderivative(mid)?;
                if lm < target {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            return Ok(b);
        }
        prev = l;
    }
    Err(Error::Divergent(format!(
        "exp(-B) of the {} family does not beat the density of states",
        family.name()
    )))
}

impl DensityModel {
    pub fn new(model: SystemModel, family: BetaFamily, window: Option<EnergyWindow>) -> Result<Self> {
        family.validate()?;
        if let Some(w) = window {
            EnergyWindow::new(w.min, w.max)?;
        }
        let (lo, hi) = match window {
            Some(w) => (w.min, w.max),
            None => {
                if matches!(family, BetaFamily::BreitWigner { .. }) {
                    return Err(Error::Divergent(
                        "the breit-wigner density decays too slowly to normalize without an energy window".into(),
                    ));
                }
                (0.0, tail_cutoff(&model, &family)?)
            }
        };
        family.check_domain(lo.max(f64::MIN_POSITIVE))?;
        family.check_domain(hi)?;
        let dos = DensityOfStates::new(&model, hi)?;
        let mut dm = Self {
            model,
            family,
            window,
            dos,
            lo,
            hi,
            shift: 0.0,
            norm: 1.0,
            ln_z: 0.0,
            out_of_window: AtomicUsize::new(0),
        };
        // scale factor so that no integrand overflows
        let (slo, shi) = (lo.sqrt(), hi.sqrt());
        dm.shift = (1..=512)
            .map(|i| {
                let s = slo + (shi - slo) * i as f64 / 512.0;
                dm.log_weight(s * s)
            })
            .filter(|v| v.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);
        if !dm.shift.is_finite() {
            return Err(Error::Divergent("density of states vanishes on the energy range".into()));
        }
        let norm = dm.integrate_scaled(|_| 1.0, lo, hi)?;
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Divergent(format!("normalization integral is {norm}")));
        }
        dm.norm = norm;
        dm.ln_z = dm.shift + norm.ln();
        Ok(dm)
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    pub fn family(&self) -> &BetaFamily {
        &self.family
    }

    pub fn window(&self) -> Option<EnergyWindow> {
        self.window
    }

    pub fn dos(&self) -> &DensityOfStates {
        &self.dos
    }

    /// Energy range the integrals cover: the window, or `[0, cutoff]`.
    pub fn energy_range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn partition_function(&self) -> f64 {
        self.ln_z.exp()
    }

    pub fn ln_partition_function(&self) -> f64 {
        self.ln_z
    }

    /// `ln g(E) - B(E)`.
    fn log_weight(&self, e: f64) -> f64 {
        match self.family.antiderivative(e) {
            Ok(b) => self.dos.log_g(e) - b,
            Err(_) => f64::NAN,
        }
    }

    /// `int phi(E) g(E) exp(-B(E) - shift) dE` over `[a, b]`, integrated in
    /// `s = sqrt(E)` so that `E^(-1/2)` densities stay smooth.
    fn integrate_scaled<F: Fn(f64) -> f64>(&self, phi: F, a: f64, b: f64) -> Result<f64> {
        let shift = self.shift;
        let q = integrate_panels(
            |s| {
                let e = s * s;
                let w = self.log_weight(e) - shift;
                if w == f64::NEG_INFINITY {
                    0.0
                } else {
                    2.0 * s * phi(e) * w.exp()
                }
            },
            a.sqrt(),
            b.sqrt(),
            PANELS,
            REL_TOL,
            1e-300,
        );
        if !q.value.is_finite() {
            return Err(Error::Divergent(format!("energy integral over [{a}, {b}] is not finite")));
        }
        Ok(q.value)
    }

    /// `<phi(H)>` under the normalized density.
    pub fn expectation<F: Fn(f64) -> f64>(&self, phi: F) -> Result<f64> {
        Ok(self.integrate_scaled(phi, self.lo, self.hi)? / self.norm)
    }

    /// Probability of `H` falling in `[a, b]`.
    pub fn probability(&self, a: f64, b: f64) -> Result<f64> {
        let (a, b) = (a.max(self.lo), b.min(self.hi));
        if b <= a {
            return Ok(0.0);
        }
        Ok(self.integrate_scaled(|_| 1.0, a, b)? / self.norm)
    }

    /// Probability density of the energy, `g(E) exp(-B(E)) / Z`.
    pub fn energy_pdf(&self, e: f64) -> f64 {
        if e < self.lo || e > self.hi {
            return 0.0;
        }
        let w = self.log_weight(e) - self.ln_z;
        if w.is_nan() {
            0.0
        } else {
            w.exp()
        }
    }

    /// `ln rho(s)`; `-inf` outside the window.
    pub fn log_density_at(&self, s: &PhaseState) -> Result<f64> {
        let h = self.model.hamiltonian(s)?;
        if let Some(w) = self.window {
            if !w.contains(h) {
                self.out_of_window.fetch_add(1, Ordering::Relaxed);
                return Ok(f64::NEG_INFINITY);
            }
        }
        Ok(-self.family.antiderivative(h)? - self.ln_z)
    }

    /// `rho(s) = exp(-B(H(s))) / Z`. States outside the window get zero and
    /// are counted in [`DensityModel::out_of_window_count`].
    pub fn density_at(&self, s: &PhaseState) -> Result<f64> {
        Ok(self.log_density_at(s)?.exp())
    }

    pub fn out_of_window_count(&self) -> usize {
        self.out_of_window.load(Ordering::Relaxed)
    }

    pub fn energy_cdf(&self) -> Result<EnergyCdf> {
        EnergyCdf::new(self)
    }
}

/// Partition function without an energy window.
pub fn partition_function(family: &BetaFamily, model: &SystemModel) -> Result<f64> {
    Ok(DensityModel::new(model.clone(), family.clone(), None)?.partition_function())
}

/// Tabulated cumulative distribution of `H`, piecewise linear on segments
/// equally spaced in `sqrt(E)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyCdf {
    nodes: Vec<f64>,
    cdf: Vec<f64>,
}

impl EnergyCdf {
    fn new(dm: &DensityModel) -> Result<Self> {
        let (slo, shi) = (dm.lo.sqrt(), dm.hi.sqrt());
        let nodes: Vec<f64> = (0..=CDF_SEGMENTS)
            .map(|i| {
                let s = slo + (shi - slo) * i as f64 / CDF_SEGMENTS as f64;
                if i == CDF_SEGMENTS {
                    dm.hi
                } else {
                    s * s
                }
            })
            .collect();
        let pieces: Vec<f64> = nodes
            .par_windows(2)
            .map(|w| dm.integrate_scaled(|_| 1.0, w[0], w[1]))
            .collect::<Result<_>>()?;
        let mut cdf = Vec::with_capacity(nodes.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for p in &pieces {
            acc += p;
            cdf.push(acc);
        }
        for v in &mut cdf {
            *v /= acc;
        }
        Ok(Self { nodes, cdf })
    }

    pub fn cdf(&self, e: f64) -> f64 {
        if e <= self.nodes[0] {
            return 0.0;
        }
        if e >= *self.nodes.last().unwrap() {
            return 1.0;
        }
        let i = self.nodes.partition_point(|x| *x <= e) - 1;
        let frac = (e - self.nodes[i]) / (self.nodes[i + 1] - self.nodes[i]);
        self.cdf[i] + frac * (self.cdf[i + 1] - self.cdf[i])
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let i = (self.cdf.partition_point(|c| *c < u)).clamp(1, self.cdf.len() - 1) - 1;
        let span = self.cdf[i + 1] - self.cdf[i];
        let frac = if span > 0.0 { (u - self.cdf[i]) / span } else { 0.0 };
        self.nodes[i] + frac * (self.nodes[i + 1] - self.nodes[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramComparison {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub probabilities: Vec<f64>,
    pub n_samples: usize,
    pub ks_statistic: f64,
    pub ks_critical: f64,
    pub chi_square: f64,
    pub dof: usize,
    pub chi_square_critical: f64,
}

impl HistogramComparison {
    pub fn passed(&self) -> bool {
        self.ks_statistic < self.ks_critical && self.chi_square < self.chi_square_critical
    }
}

/// Compares sampled energies with the analytic energy distribution on
/// equal-probability bins, merging bins until every expected count is at
/// least five.
pub fn compare_histogram(dm: &DensityModel, energies: &[f64], n_bins: usize) -> Result<HistogramComparison> {
    let cdf = dm.energy_cdf()?;
    compare_with_cdf(dm, &cdf, energies, n_bins)
}

fn compare_with_cdf(
    dm: &DensityModel,
    cdf: &EnergyCdf,
    energies: &[f64],
    n_bins: usize,
) -> Result<HistogramComparison> {
    let n = energies.len();
    if n < MIN_HISTOGRAM_SAMPLES {
        return Err(Error::Contract(format!(
            "histogram comparison needs at least {MIN_HISTOGRAM_SAMPLES} samples, got {n}"
        )));
    }
    if n_bins < 2 {
        return Err(Error::Contract("need at least two bins".into()));
    }
    let (lo, hi) = dm.energy_range();
    let raw: Vec<f64> = (0..=n_bins)
        .map(|k| match k {
            0 => lo,
            k if k == n_bins => hi,
            k => cdf.quantile(k as f64 / n_bins as f64),
        })
        .collect();
    // merge from the left until each bin expects at least five samples
    let mut edges = vec![lo];
    let mut probabilities = Vec::new();
    let mut pending = 0.0;
    for w in raw.windows(2) {
        pending += cdf.cdf(w[1]) - cdf.cdf(w[0]);
        if pending * n as f64 >= 5.0 {
            edges.push(w[1]);
            probabilities.push(pending);
            pending = 0.0;
        }
    }
    if pending > 0.0 {
        match probabilities.last_mut() {
            Some(last) => {
                *last += pending;
                *edges.last_mut().unwrap() = hi;
            }
            None => {
                probabilities.push(pending);
                edges.push(hi);
            }
        }
    }
    let mut counts = vec![0u64; probabilities.len()];
    for &e in energies {
        let idx = edges.partition_point(|x| *x <= e).saturating_sub(1).min(counts.len() - 1);
        counts[idx] += 1;
    }
    let observed: Vec<f64> = counts.iter().map(|c| *c as f64).collect();
    let expected: Vec<f64> = probabilities.iter().map(|p| p * n as f64).collect();
    let dof = probabilities.len().saturating_sub(1).max(1);
    Ok(HistogramComparison {
        ks_statistic: stats::ks_one_sample(energies, |e| cdf.cdf(e)),
        ks_critical: stats::ks_critical_one_sample(n),
        chi_square: stats::chi_square(&observed, &expected),
        chi_square_critical: stats::chi_square_critical(dof),
        dof,
        edges,
        counts,
        probabilities,
        n_samples: n,
    })
}

/// Liouville residual `R = div_q(K rho) + div_p(F_new rho)` divided by `rho`,
/// and the same value normalized by `1 + |grad ln rho| |v|` where `v` is the
/// phase-space velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residual {
    pub raw: f64,
    pub normalized: f64,
}

/// Evaluates the residual of `dm`'s density under `sys`'s projected flow.
/// The density enters through the chain rule `grad ln rho = -beta grad H`;
/// the divergence of the projected force is taken by central differences.
pub fn stationarity_residual(dm: &DensityModel, sys: &ConstrainedSystem, s: &PhaseState) -> Result<Residual> {
    let model = dm.model();
    let h = model.hamiltonian(s)?;
    let beta = dm.family().beta(h)?;
    let u = model.grad_q(s)?;
    let k = model.grad_p(s)?;
    let fnew = sys.project_force(s)?;
    let div = sys.effective_omega(s)?;
    let drift: f64 = (0..k.len()).map(|i| k[i] * (fnew[i] + u[i])).sum();
    let raw = div - beta * drift;
    let grad = beta.abs() * (u.iter().chain(&k).map(|v| v * v).sum::<f64>()).sqrt();
    let speed = (k.iter().chain(&fnew).map(|v| v * v).sum::<f64>()).sqrt();
    Ok(Residual {
        raw,
        normalized: raw.abs() / (1.0 + grad * speed),
    })
}

/// Exact draws from the stationary density of a separable model: the
/// energy by inverse CDF, then a uniform point on that energy shell.
#[derive(Debug, Clone)]
pub struct PhaseSampler<'a> {
    dm: &'a DensityModel,
    cdf: EnergyCdf,
}

/// Quartic shells are sampled by rejection; an acceptance rate below this is
/// reported as an error.
pub const REJECTION_FLOOR: f64 = 1e-3;
const REJECTION_BUDGET: usize = 20_000;

impl<'a> PhaseSampler<'a> {
    pub fn new(dm: &'a DensityModel) -> Result<Self> {
        Ok(Self {
            dm,
            cdf: dm.energy_cdf()?,
        })
    }

    pub fn cdf(&self) -> &EnergyCdf {
        &self.cdf
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<PhaseState> {
        let e = self.cdf.quantile(rng.random::<f64>());
        self.sample_shell(e, rng)
    }

    /// Uniform point on the shell `H = e` under the microcanonical measure.
    pub fn sample_shell<R: Rng>(&self, e: f64, rng: &mut R) -> Result<PhaseState> {
        let model = self.dm.model();
        let n = model.n_dof();
        match *model.potential() {
            Potential::Harmonic { omega } => {
                let x = sphere(2 * n, e.sqrt(), rng);
                let q = (0..n)
                    .map(|j| x[n + j] * (2.0 / model.component_mass(j)).sqrt() / omega)
                    .collect();
                let p = (0..n).map(|j| x[j] * (2.0 * model.component_mass(j)).sqrt()).collect();
                Ok(PhaseState { q, p, t: 0.0 })
            }
            Potential::Free { box_length } => {
                let l = box_length.ok_or_else(|| Error::Divergent("free particles need a box".into()))?;
                let x = sphere(n, e.sqrt(), rng);
                let q = (0..n).map(|_| l * (rng.random::<f64>() - 0.5)).collect();
                let p = (0..n).map(|j| x[j] * (2.0 * model.component_mass(j)).sqrt()).collect();
                Ok(PhaseState { q, p, t: 0.0 })
            }
            Potential::Quartic { a, b } => self.sample_quartic_shell(a, b, e, rng),
        }
    }

    fn sample_quartic_shell<R: Rng>(&self, a: f64, b: f64, e: f64, rng: &mut R) -> Result<PhaseState> {
        let model = self.dm.model();
        let n = model.n_dof();
        // split e over the coordinates with weight prod_j T(e_j); T is
        // largest at zero energy, so T(0)^n bounds the proposal ratio
        let t0 = orbit_period(a, b, 0.0);
        let mut parts = None;
        for _ in 0..REJECTION_BUDGET {
            let mut cuts: Vec<f64> = (0..n - 1).map(|_| rng.random::<f64>() * e).collect();
            cuts.push(0.0);
            cuts.push(e);
            cuts.sort_by(f64::total_cmp);
            let split: Vec<f64> = cuts.windows(2).map(|w| w[1] - w[0]).collect();
            let ratio: f64 = split.iter().map(|ej| orbit_period(a, b, *ej) / t0).product();
            if rng.random::<f64>() < ratio {
                parts = Some(split);
                break;
            }
        }
        let parts = parts.ok_or_else(|| {
            Error::Contract(format!(
                "quartic shell sampler at E = {e} accepted nothing in {REJECTION_BUDGET} proposals (rate below {REJECTION_FLOOR})"
            ))
        })?;
        let mut q = Vec::with_capacity(n);
        let mut p = Vec::with_capacity(n);
        for (j, &ej) in parts.iter().enumerate() {
            let m = model.component_mass(j);
            let y = if ej > 0.0 { 4.0 * ej / (a + (a * a + 4.0 * b * ej).sqrt()) } else { 0.0 };
            // time along the orbit is uniform; in the angle q = qmax sin(theta)
            // the density is w(theta), decreasing on [0, pi/2]
            let w = |th: f64| 1.0 / (0.5 * a + 0.25 * b * y * (1.0 + th.sin().powi(2))).sqrt();
            let w0 = w(0.0);
            let theta = loop {
                let th = rng.random::<f64>() * FRAC_PI_2;
                if rng.random::<f64>() * w0 < w(th) {
                    break th;
                }
            };
            let sign = |r: &mut R| if r.random::<bool>() { 1.0 } else { -1.0 };
            let qj = sign(rng) * y.sqrt() * theta.sin();
            let v = 0.5 * a * qj * qj + 0.25 * b * qj.powi(4);
            let pj = sign(rng) * (2.0 * m * (ej - v).max(0.0)).sqrt();
            q.push(qj);
            p.push(pj);
        }
        Ok(PhaseState { q, p, t: 0.0 })
    }
}

fn sphere<R: Rng>(dim: usize, radius: f64, rng: &mut R) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            return x.into_iter().map(|v| radius * v / norm).collect();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PushforwardReport {
    pub horizon_steps: usize,
    pub before: HistogramComparison,
    pub after: HistogramComparison,
    pub ks_two_sample: f64,
    pub ks_two_sample_critical: f64,
}

impl PushforwardReport {
    pub fn passed(&self) -> bool {
        self.ks_two_sample < self.ks_two_sample_critical
    }
}

/// Draws `n_samples` states from `dm`, evolves each for `horizon_steps`
/// steps of `sys`'s projected flow without returning it to the surface,
/// and compares the energy distributions before and after.
pub fn pushforward_invariance(
    dm: &DensityModel,
    sys: &ConstrainedSystem,
    spec: &IntegratorSpec,
    n_samples: usize,
    horizon_steps: usize,
    seed: u64,
) -> Result<PushforwardReport> {
    spec.validate()?;
    let sampler = PhaseSampler::new(dm)?;
    let pairs: Vec<(f64, f64)> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let mut s = sampler.sample(&mut rng)?;
            let e0 = dm.model().hamiltonian(&s)?;
            for n in 0..horizon_steps {
                s = step(sys, &s, spec).map_err(|e| e.at_step(n + 1))?;
            }
            Ok((e0, dm.model().hamiltonian(&s)?))
        })
        .collect::<Result<_>>()?;
    let before: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let after: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    Ok(PushforwardReport {
        horizon_steps,
        before: compare_with_cdf(dm, sampler.cdf(), &before, PUSHFORWARD_BINS)?,
        after: compare_with_cdf(dm, sampler.cdf(), &after, PUSHFORWARD_BINS)?,
        ks_two_sample: stats::ks_two_sample(&before, &after),
        ks_two_sample_critical: stats::ks_critical_two_sample(n_samples, n_samples),
    })
}
