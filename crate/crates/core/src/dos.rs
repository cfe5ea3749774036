//! Densities of states `g(E) = int delta(H - E) dq dp` for the built-in
//! separable models, plus the parameter-weighted densities
//! `Y_k(E) = int delta(H - E) dH/dx_k dq dp` that reduce thermodynamic forces
//! to one-dimensional energy integrals.

use std::f64::consts::{FRAC_PI_2, PI};

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::phase::{Potential, SystemModel};
use crate::quadrature::integrate;

/// Grid intervals used to tabulate the quartic density of states.
pub const QUARTIC_GRID: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub enum DensityOfStates {
    /// `g = (2 pi / omega)^n E^(n-1) / (n-1)!`, independent of the masses.
    Harmonic { n: usize, omega: f64, log_prefactor: f64 },
    /// `g = L^n prod_j sqrt(2 pi m_j) E^(n/2 - 1) / Gamma(n/2)`.
    Free { n: usize, log_prefactor: f64 },
    /// Numerically convolved single-coordinate densities on a uniform grid.
    Tabulated(Box<QuarticTable>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuarticTable {
    step: f64,
    log_mass_factor: f64,
    g: Vec<f64>,
    y_a: Vec<f64>,
    y_b: Vec<f64>,
}

impl DensityOfStates {
    /// Builds the density of states, tabulating up to `e_max` where the model
    /// has no closed form.
    pub fn new(model: &SystemModel, e_max: f64) -> Result<Self> {
        let n = model.n_dof();
        let nf = n as f64;
        match *model.potential() {
            Potential::Harmonic { omega } => Ok(DensityOfStates::Harmonic {
                n,
                omega,
                log_prefactor: nf * (2.0 * PI / omega).ln() - ln_gamma(nf),
            }),
            Potential::Free { box_length } => {
                let l = box_length.ok_or_else(|| {
                    Error::Divergent("free particles without a box have infinite phase volume".into())
                })?;
                let masses: f64 = (0..n).map(|j| (2.0 * PI * model.component_mass(j)).ln()).sum();
                Ok(DensityOfStates::Free {
                    n,
                    log_prefactor: nf * l.ln() + 0.5 * masses - ln_gamma(0.5 * nf),
                })
            }
            Potential::Quartic { a, b } => {
                if !(e_max.is_finite() && e_max > 0.0) {
                    return Err(Error::Contract(format!("tabulation range must be positive, got {e_max}")));
                }
                Ok(DensityOfStates::Tabulated(Box::new(QuarticTable::build(model, a, b, e_max))))
            }
        }
    }

    /// Upper bound on the growth of `ln g(E)` used to locate tail cutoffs
    /// before any table exists. Exact for the closed-form models; for the
    /// quartic it is the oscillator exponent `n - 1`, which bounds the true
    /// growth `3n/4 - 1` from above.
    pub fn tail_log_g(model: &SystemModel, e: f64) -> f64 {
        let n = model.n_dof() as f64;
        match model.potential() {
            Potential::Harmonic { .. } | Potential::Quartic { .. } => (n - 1.0) * e.ln(),
            Potential::Free { .. } => (0.5 * n - 1.0) * e.ln(),
        }
    }

    pub fn log_g(&self, e: f64) -> f64 {
        if e <= 0.0 {
            return f64::NEG_INFINITY;
        }
        match self {
            DensityOfStates::Harmonic { n, log_prefactor, .. } => log_prefactor + (*n as f64 - 1.0) * e.ln(),
            DensityOfStates::Free { n, log_prefactor } => log_prefactor + (0.5 * *n as f64 - 1.0) * e.ln(),
            DensityOfStates::Tabulated(t) => {
                let g = t.interp(&t.g, e);
                if g > 0.0 {
                    g.ln() + t.log_mass_factor
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// `Y_k(E) / g(E)`, the microcanonical mean of `dH/dx_k` on the shell.
    /// `None` if the parameter does not enter `H`.
    pub fn shell_mean(&self, name: &str, e: f64) -> Option<f64> {
        match (self, name) {
            // virial: <U> = E / 2 on the shell and dH/domega = 2U / omega
            (DensityOfStates::Harmonic { omega, .. }, "omega") => Some(e / omega),
            (DensityOfStates::Tabulated(t), "a" | "b") => {
                let y = if name == "a" { &t.y_a } else { &t.y_b };
                let g = t.interp(&t.g, e);
                Some(if g > 0.0 { t.interp(y, e) / g } else { 0.0 })
            }
            _ => None,
        }
    }

    /// Upper end of the tabulated range, if any.
    pub fn table_limit(&self) -> Option<f64> {
        match self {
            DensityOfStates::Tabulated(t) => Some(t.step * (t.g.len() - 1) as f64),
            _ => None,
        }
    }
}

/// Orbit period of one unit-mass coordinate in `a q^2/2 + b q^4/4` at energy `e`.
pub(crate) fn orbit_period(a: f64, b: f64, e: f64) -> f64 {
    let y = if e > 0.0 { 4.0 * e / (a + (a * a + 4.0 * b * e).sqrt()) } else { 0.0 };
    let v = integrate(
        |th: f64| 1.0 / (0.5 * a + 0.25 * b * y * (1.0 + th.sin().powi(2))).sqrt(),
        0.0,
        FRAC_PI_2,
        1e-13,
        0.0,
    );
    2.0 * 2f64.sqrt() * v.value
}

/// `(T(e), W_a(e), W_b(e))` for one unit-mass coordinate in `a q^2/2 + b q^4/4`,
/// where `T` is the orbit period (the one-coordinate density of states) and
/// `W` weights the orbit by `q^2/2` or `q^4/4`.
fn orbit_integrals(a: f64, b: f64, e: f64) -> (f64, f64, f64) {
    let y = if e > 0.0 { 4.0 * e / (a + (a * a + 4.0 * b * e).sqrt()) } else { 0.0 };
    let pref = 2.0 * 2f64.sqrt();
    let inv = |th: f64| {
        let s2 = th.sin().powi(2);
        (s2, 1.0 / (0.5 * a + 0.25 * b * y * (1.0 + s2)).sqrt())
    };
    let t = integrate(|th| inv(th).1, 0.0, FRAC_PI_2, 1e-13, 0.0).value;
    let wa = integrate(
        |th| {
            let (s2, w) = inv(th);
            0.5 * y * s2 * w
        },
        0.0,
        FRAC_PI_2,
        1e-13,
        0.0,
    )
    .value;
    let wb = integrate(
        |th| {
            let (s2, w) = inv(th);
            0.25 * y * y * s2 * s2 * w
        },
        0.0,
        FRAC_PI_2,
        1e-13,
        0.0,
    )
    .value;
    (pref * t, pref * wa, pref * wb)
}

/// `out[i] = int_0^{E_i} f(e) g(E_i - e) de` on a uniform grid by composite
/// Simpson, finishing odd interval counts with a 3/8 panel.
fn convolve(f: &[f64], g: &[f64], h: f64) -> Vec<f64> {
    let len = f.len();
    let mut out = vec![0.0; len];
    for (i, slot) in out.iter_mut().enumerate().skip(1) {
        let term = |k: usize| f[k] * g[i - k];
        let mut acc = 0.0;
        let simpson_end = if i % 2 == 0 { i } else if i >= 3 { i - 3 } else { 0 };
        if simpson_end > 0 {
            let mut s = term(0) + term(simpson_end);
            for k in 1..simpson_end {
                s += if k % 2 == 1 { 4.0 } else { 2.0 } * term(k);
            }
            acc += s * h / 3.0;
        }
        if i == 1 {
            // Simpson with midpoint values from cubics through the first nodes
            let mid = |v: &[f64]| (5.0 * v[0] + 15.0 * v[1] - 5.0 * v[2] + v[3]) / 16.0;
            acc += h / 6.0 * (term(0) + 4.0 * mid(f) * mid(g) + term(1));
        } else if i % 2 == 1 {
            let k = simpson_end;
            acc += 3.0 * h / 8.0 * (term(k) + 3.0 * term(k + 1) + 3.0 * term(k + 2) + term(k + 3));
        }
        *slot = acc;
    }
    out
}

impl QuarticTable {
    fn build(model: &SystemModel, a: f64, b: f64, e_max: f64) -> Self {
        let n = model.n_dof();
        let step = e_max / QUARTIC_GRID as f64;
        let points: Vec<(f64, f64, f64)> = (0..=QUARTIC_GRID)
            .map(|i| orbit_integrals(a, b, step * i as f64))
            .collect();
        let t: Vec<f64> = points.iter().map(|p| p.0).collect();
        let wa: Vec<f64> = points.iter().map(|p| p.1).collect();
        let wb: Vec<f64> = points.iter().map(|p| p.2).collect();

        let mut g_prev = t.clone();
        for _ in 1..n.saturating_sub(1) {
            g_prev = convolve(&g_prev, &t, step);
        }
        // g_prev holds g_{n-1} when n >= 2
        let (g, y_a, y_b) = if n == 1 {
            (t, wa, wb)
        } else {
            let nf = n as f64;
            let scale = |v: Vec<f64>| v.into_iter().map(|x| nf * x).collect::<Vec<_>>();
            (
                convolve(&g_prev, &t, step),
                scale(convolve(&wa, &g_prev, step)),
                scale(convolve(&wb, &g_prev, step)),
            )
        };
        // every mass enters as a sqrt(m) factor on its own coordinate's period
        let log_mass_factor = (0..n).map(|j| 0.5 * model.component_mass(j).ln()).sum();
        Self {
            step,
            log_mass_factor,
            g,
            y_a,
            y_b,
        }
    }

    /// Four-point Lagrange interpolation of a tabulated column.
    fn interp(&self, col: &[f64], e: f64) -> f64 {
        let last = col.len() - 1;
        let x = e / self.step;
        let i = (x.floor() as isize).clamp(1, last as isize - 2) as usize;
        let xs = [i - 1, i, i + 1, i + 2];
        let mut acc = 0.0;
        for (a, &ia) in xs.iter().enumerate() {
            let mut w = 1.0;
            for (b, &ib) in xs.iter().enumerate() {
                if a != b {
                    w *= (x - ib as f64) / (ia as f64 - ib as f64);
                }
            }
            acc += w * col[ia];
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_single_coordinate_period() {
        let m = SystemModel::uniform(1, 1, 1.0, Potential::Harmonic { omega: 2.0 }).unwrap();
        let d = DensityOfStates::new(&m, 1.0).unwrap();
        assert!((d.log_g(3.0) - PI.ln()).abs() < 1e-15);
    }

    #[test]
    fn quartic_without_anharmonicity_is_an_oscillator() {
        for (n, mass) in [(1usize, 1.0), (2, 1.0), (3, 2.5)] {
            let a = 1.7;
            let q = SystemModel::uniform(n, 1, mass, Potential::Quartic { a, b: 0.0 }).unwrap();
            let h = SystemModel::uniform(n, 1, mass, Potential::Harmonic { omega: (a / mass).sqrt() }).unwrap();
            let dq = DensityOfStates::new(&q, 10.0).unwrap();
            let dh = DensityOfStates::new(&h, 10.0).unwrap();
            for e in [0.3, 1.0, 4.4, 9.7] {
                let rel = (dq.log_g(e) - dh.log_g(e)).abs();
                assert!(rel < 1e-9, "n={n} e={e}: {} vs {}", dq.log_g(e), dh.log_g(e));
                // dH/da = U / a and the shell mean of U is E / 2
                let ya = dq.shell_mean("a", e).unwrap();
                assert!((ya - 0.5 * e / a).abs() < 1e-8 * e, "n={n} e={e}: {ya}");
            }
        }
    }

    #[test]
    fn quartic_orbit_period_decreases() {
        let (t0, _, _) = orbit_integrals(1.0, 1.0, 0.0);
        let (t1, _, _) = orbit_integrals(1.0, 1.0, 2.0);
        assert!((t0 - 2.0 * PI).abs() < 1e-12);
        assert!(t1 < t0);
    }

    #[test]
    fn quartic_period_against_direct_integral() {
        // T(e) = 2 int_{-qm}^{qm} dq / sqrt(2 (e - V(q)))
        let (a, b, e) = (0.8, 1.3, 1.9);
        let v = |q: f64| 0.5 * a * q * q + 0.25 * b * q.powi(4);
        let qm2 = (-a + (a * a + 4.0 * b * e).sqrt()) / b;
        let qm = qm2.sqrt();
        // q = qm (1 - u^2) removes the turning-point singularity
        let direct = 4.0
            * integrate(
                |u| {
                    let q = qm * (1.0 - u * u);
                    2.0 * u * qm / (2.0 * (e - v(q))).sqrt()
                },
                1e-12,
                1.0,
                1e-12,
                0.0,
            )
            .value;
        let (t, _, _) = orbit_integrals(a, b, e);
        assert!((t - direct).abs() < 1e-8 * t, "{t} vs {direct}");
    }

    #[test]
    fn free_particles_need_a_box() {
        let m = SystemModel::uniform(1, 1, 1.0, Potential::Free { box_length: None }).unwrap();
        assert!(matches!(DensityOfStates::new(&m, 1.0), Err(Error::Divergent(_))));
    }

    #[test]
    fn convolution_of_constants_is_linear() {
        let f = vec![1.0; 11];
        let out = convolve(&f, &f, 0.1);
        for (i, v) in out.iter().enumerate() {
            assert!((v - 0.1 * i as f64).abs() < 1e-14);
        }
    }
}
