//! Coefficient families `beta(H)` linking phase-volume contraction to the
//! power of the non-potential forces, with their antiderivatives `B(H)`.
//!
//! A family fixes the stationary density `exp(-B(H)) / Z`. Integration
//! constants of `B` are chosen so that every closed form below is exact;
//! they only ever shift `ln Z`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Densities whose exponent exceeds this are reported as exactly zero.
pub const DENSITY_FLOOR_EXPONENT: f64 = 700.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BetaFamily {
    /// `beta = beta0`: the canonical density `exp(-beta0 H)`.
    Constant { beta0: f64 },
    /// `beta = beta1 + beta2 H`, giving `exp(-(beta1 H + beta2 H^2 / 2))`.
    Linear { beta1: f64, beta2: f64 },
    /// Resonance density `1 / ((H - E)^2 + (Gamma/2)^2)`.
    BreitWigner {
        #[serde(rename = "energy")]
        energy: f64,
        #[serde(rename = "width")]
        width: f64,
    },
    /// Classical Fermi-Bose density `1 / (exp(beta0 (H - mu)) + a)`.
    FermiBose { beta0: f64, mu: f64, a: f64 },
}

impl BetaFamily {
    pub fn name(&self) -> &'static str {
        match self {
            BetaFamily::Constant { .. } => "constant",
            BetaFamily::Linear { .. } => "linear",
            BetaFamily::BreitWigner { .. } => "breit-wigner",
            BetaFamily::FermiBose { .. } => "fermi-bose",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidFamily(msg));
        match *self {
            BetaFamily::Constant { beta0 } if !beta0.is_finite() => bad(format!("beta0 = {beta0}")),
            BetaFamily::Linear { beta1, beta2 } if !(beta1.is_finite() && beta2.is_finite()) => {
                bad(format!("beta1 = {beta1}, beta2 = {beta2}"))
            }
            BetaFamily::BreitWigner { energy, width } if !(energy.is_finite() && width.is_finite() && width > 0.0) => {
                bad(format!("breit-wigner needs a positive width, got E={energy}, Gamma={width}"))
            }
            BetaFamily::FermiBose { beta0, mu, a }
                if !(beta0.is_finite() && beta0 > 0.0 && mu.is_finite() && a.is_finite()) =>
            {
                bad(format!("fermi-bose needs beta0 > 0, got beta0={beta0}, mu={mu}, a={a}"))
            }
            _ => Ok(()),
        }
    }

    /// Names under which the family's parameters appear in an external
    /// parameter map.
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            BetaFamily::Constant { .. } => &["beta0"],
            BetaFamily::Linear { .. } => &["beta1", "beta2"],
            BetaFamily::BreitWigner { .. } => &["E", "Gamma"],
            BetaFamily::FermiBose { .. } => &["beta0", "mu", "stat"],
        }
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        match (self, name) {
            (BetaFamily::Constant { beta0 }, "beta0") => Some(*beta0),
            (BetaFamily::Linear { beta1, .. }, "beta1") => Some(*beta1),
            (BetaFamily::Linear { beta2, .. }, "beta2") => Some(*beta2),
            (BetaFamily::BreitWigner { energy, .. }, "E") => Some(*energy),
            (BetaFamily::BreitWigner { width, .. }, "Gamma") => Some(*width),
            (BetaFamily::FermiBose { beta0, .. }, "beta0") => Some(*beta0),
            (BetaFamily::FermiBose { mu, .. }, "mu") => Some(*mu),
            (BetaFamily::FermiBose { a, .. }, "stat") => Some(*a),
            _ => None,
        }
    }

    pub fn with_param(&self, name: &str, value: f64) -> Result<Self> {
        let mut out = self.clone();
        let slot = match (&mut out, name) {
            (BetaFamily::Constant { beta0 }, "beta0") => beta0,
            (BetaFamily::Linear { beta1, .. }, "beta1") => beta1,
            (BetaFamily::Linear { beta2, .. }, "beta2") => beta2,
            (BetaFamily::BreitWigner { energy, .. }, "E") => energy,
            (BetaFamily::BreitWigner { width, .. }, "Gamma") => width,
            (BetaFamily::FermiBose { beta0, .. }, "beta0") => beta0,
            (BetaFamily::FermiBose { mu, .. }, "mu") => mu,
            (BetaFamily::FermiBose { a, .. }, "stat") => a,
            _ => return Err(Error::UnknownParameter(name.to_string())),
        };
        *slot = value;
        out.validate()?;
        Ok(out)
    }

    /// Temperature implied by the family when it has an inverse-temperature
    /// parameter.
    pub fn natural_temperature(&self) -> Option<f64> {
        match *self {
            BetaFamily::Constant { beta0 } | BetaFamily::FermiBose { beta0, .. } if beta0 > 0.0 => {
                Some(1.0 / beta0)
            }
            BetaFamily::Linear { beta1, .. } if beta1 > 0.0 => Some(1.0 / beta1),
            _ => None,
        }
    }

    /// Whether the density decreases monotonically in `H` over `[lo, hi]`,
    /// increases, or neither.
    pub(crate) fn monotonicity(&self, lo: f64, hi: f64) -> Monotonicity {
        match *self {
            BetaFamily::Constant { beta0 } => sign_to_mono(beta0),
            BetaFamily::Linear { beta1, beta2 } => {
                let (b_lo, b_hi) = (beta1 + beta2 * lo, beta1 + beta2 * hi);
                if b_lo >= 0.0 && b_hi >= 0.0 {
                    Monotonicity::Decreasing
                } else if b_lo <= 0.0 && b_hi <= 0.0 {
                    Monotonicity::Increasing
                } else {
                    Monotonicity::Mixed
                }
            }
            BetaFamily::BreitWigner { energy, .. } => {
                if lo >= energy {
                    Monotonicity::Decreasing
                } else if hi <= energy {
                    Monotonicity::Increasing
                } else {
                    Monotonicity::Mixed
                }
            }
            BetaFamily::FermiBose { .. } => Monotonicity::Decreasing,
        }
    }

    /// Dimensionless `x = beta0 (H - mu)` and `e^x + a` for Fermi-Bose, with
    /// the domain check.
    fn fermi_bose_arg(beta0: f64, mu: f64, a: f64, h: f64) -> Result<f64> {
        let x = beta0 * (h - mu);
        // e^x + a > 0  <=>  a >= 0 or x > ln(-a)
        if a < 0.0 && x <= (-a).ln() {
            return Err(Error::Domain {
                family: "fermi-bose",
                energy: h,
                reason: format!("exp(beta0 (H - mu)) + a <= 0 with a = {a}"),
            });
        }
        Ok(x)
    }

    pub fn check_domain(&self, h: f64) -> Result<()> {
        if let BetaFamily::FermiBose { beta0, mu, a } = *self {
            Self::fermi_bose_arg(beta0, mu, a, h)?;
        }
        Ok(())
    }

    pub fn beta(&self, h: f64) -> Result<f64> {
        Ok(match *self {
            BetaFamily::Constant { beta0 } => beta0,
            BetaFamily::Linear { beta1, beta2 } => beta1 + beta2 * h,
            BetaFamily::BreitWigner { energy, width } => {
                let d = h - energy;
                let g = 0.5 * width;
                2.0 * d / (d * d + g * g)
            }
            BetaFamily::FermiBose { beta0, mu, a } => {
                let x = Self::fermi_bose_arg(beta0, mu, a, h)?;
                if x >= 0.0 {
                    beta0 / (1.0 + a * (-x).exp())
                } else {
                    let ex = x.exp();
                    beta0 * (ex / (ex + a))
                }
            }
        })
    }

    pub fn dbeta_dh(&self, h: f64) -> Result<f64> {
        Ok(match *self {
            BetaFamily::Constant { .. } => 0.0,
            BetaFamily::Linear { beta2, .. } => beta2,
            BetaFamily::BreitWigner { energy, width } => {
                let d = h - energy;
                let g2 = 0.25 * width * width;
                let den = d * d + g2;
                2.0 * (g2 - d * d) / (den * den)
            }
            BetaFamily::FermiBose { beta0, mu, a } => {
                let x = Self::fermi_bose_arg(beta0, mu, a, h)?;
                // beta0^2 a e^{-x} / (1 + a e^{-x})^2, written to avoid overflow
                if x >= 0.0 {
                    let e = (-x).exp();
                    let den = 1.0 + a * e;
                    beta0 * beta0 * a * e / (den * den)
                } else {
                    let e = x.exp();
                    let den = e + a;
                    beta0 * beta0 * a * e / (den * den)
                }
            }
        })
    }

    /// `B(H)` with `dB/dH = beta(H)`.
    pub fn antiderivative(&self, h: f64) -> Result<f64> {
        Ok(match *self {
            BetaFamily::Constant { beta0 } => beta0 * h,
            BetaFamily::Linear { beta1, beta2 } => beta1 * h + 0.5 * beta2 * h * h,
            BetaFamily::BreitWigner { energy, width } => {
                let d = h - energy;
                let g = 0.5 * width;
                (d * d + g * g).ln()
            }
            BetaFamily::FermiBose { beta0, mu, a } => {
                let x = Self::fermi_bose_arg(beta0, mu, a, h)?;
                if x > 0.0 {
                    x + (a * (-x).exp()).ln_1p()
                } else {
                    (x.exp() + a).ln()
                }
            }
        })
    }

    /// `exp(-B(H))`, flushed to zero once `B` exceeds the floor exponent.
    pub fn unnormalized_density(&self, h: f64) -> Result<f64> {
        let b = self.antiderivative(h)?;
        Ok(if b > DENSITY_FLOOR_EXPONENT { 0.0 } else { (-b).exp() })
    }

    /// Nonlinear Liouville source `C(rho) = -beta0 (rho - a rho^2)` of the
    /// Fermi-Bose family; satisfies `C(rho(H)) = -beta(H) rho(H)` for the
    /// unnormalized density `rho(H) = exp(-B(H))`.
    pub fn c_of_rho(&self, rho: f64) -> Result<f64> {
        match *self {
            BetaFamily::FermiBose { beta0, a, .. } => Ok(-beta0 * (rho - a * rho * rho)),
            _ => Err(Error::Contract(format!(
                "C(rho) is only defined for the fermi-bose family, not {}",
                self.name()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Monotonicity {
    Decreasing,
    Increasing,
    Mixed,
}

fn sign_to_mono(beta: f64) -> Monotonicity {
    if beta >= 0.0 {
        Monotonicity::Decreasing
    } else {
        Monotonicity::Increasing
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FAMILIES: [BetaFamily; 6] = [
        BetaFamily::Constant { beta0: 1.7 },
        BetaFamily::Linear { beta1: 0.8, beta2: 0.3 },
        BetaFamily::BreitWigner { energy: 2.0, width: 1.5 },
        BetaFamily::FermiBose { beta0: 1.2, mu: 1.0, a: 1.0 },
        BetaFamily::FermiBose { beta0: 0.9, mu: -0.5, a: -1.0 },
        BetaFamily::FermiBose { beta0: 2.0, mu: 0.3, a: 0.0 },
    ];

    #[test]
    fn breit_wigner_vanishes_at_resonance() {
        let f = BetaFamily::BreitWigner { energy: 3.0, width: 0.7 };
        assert_eq!(f.beta(3.0).unwrap(), 0.0);
    }

    #[test]
    fn linear_without_slope_is_constant() {
        let f = BetaFamily::Linear { beta1: 2.0, beta2: 0.0 };
        for h in [0.0, 1.0, 17.5] {
            assert_eq!(f.beta(h).unwrap(), 2.0);
        }
    }

    #[test]
    fn fermi_bose_without_statistics_is_canonical() {
        let f = BetaFamily::FermiBose { beta0: 1.3, mu: 0.4, a: 0.0 };
        let c = BetaFamily::Constant { beta0: 1.3 };
        for h in [0.0, 0.2, 3.0, 40.0] {
            assert_eq!(f.beta(h).unwrap(), 1.3);
            assert_eq!(f.dbeta_dh(h).unwrap(), 0.0);
            let shift = f.antiderivative(h).unwrap() - c.antiderivative(h).unwrap();
            assert!((shift + 1.3 * 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_antiderivatives() {
        let bw = BetaFamily::BreitWigner { energy: 0.0, width: 2.0 };
        assert_eq!(bw.antiderivative(0.0).unwrap(), 0.0);
        let lin = BetaFamily::Linear { beta1: 1.0, beta2: 2.0 };
        assert_eq!(lin.antiderivative(3.0).unwrap(), 12.0);
    }

    #[test]
    fn density_values() {
        assert_eq!(BetaFamily::Constant { beta0: 1.0 }.unnormalized_density(0.0).unwrap(), 1.0);
        let bw = BetaFamily::BreitWigner { energy: 1.0, width: 2.0 };
        assert_eq!(bw.unnormalized_density(1.0).unwrap(), 1.0);
        let fb = BetaFamily::FermiBose { beta0: 1.0, mu: 0.0, a: 1.0 };
        assert!((fb.unnormalized_density(0.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(BetaFamily::Constant { beta0: 1.0 }.unnormalized_density(800.0).unwrap(), 0.0);
    }

    #[test]
    fn fermi_bose_density_matches_target_form() {
        for (b0, mu, a) in [(1.2, 1.0, 1.0), (0.9, -0.5, -1.0), (2.0, 0.3, 0.5)] {
            let f = BetaFamily::FermiBose { beta0: b0, mu, a };
            for h in [0.0, 0.4, 1.0, 2.5, 9.0] {
                let target = 1.0 / ((b0 * (h - mu)).exp() + a);
                let got = f.unnormalized_density(h).unwrap();
                assert!((got - target).abs() <= 1e-14 * target, "{a} {h}: {got} vs {target}");
            }
        }
    }

    #[test]
    fn bose_domain_error_below_mu() {
        let f = BetaFamily::FermiBose { beta0: 1.0, mu: 1.0, a: -1.0 };
        assert!(matches!(f.beta(1.0), Err(Error::Domain { .. })));
        assert!(matches!(f.beta(0.5), Err(Error::Domain { .. })));
        assert!(f.beta(1.5).is_ok());
    }

    #[test]
    fn breit_wigner_is_symmetric_about_resonance() {
        let f = BetaFamily::BreitWigner { energy: 4.0, width: 0.6 };
        for d in [0.01, 0.3, 2.0, 11.0] {
            assert_eq!(
                f.unnormalized_density(4.0 + d).unwrap(),
                f.unnormalized_density(4.0 - d).unwrap()
            );
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for f in FAMILIES {
            for h in [0.3f64, 1.1, 2.7, 6.0] {
                let step = 1e-5 * h.abs().max(1.0);
                let fd_b = (f.antiderivative(h + step).unwrap() - f.antiderivative(h - step).unwrap()) / (2.0 * step);
                let beta = f.beta(h).unwrap();
                assert!((fd_b - beta).abs() <= 1e-8 * beta.abs().max(1.0), "{f:?} B' at {h}");
                let fd_beta = (f.beta(h + step).unwrap() - f.beta(h - step).unwrap()) / (2.0 * step);
                let d = f.dbeta_dh(h).unwrap();
                assert!((fd_beta - d).abs() <= 1e-6 * d.abs().max(1.0), "{f:?} beta' at {h}");
                let fd_log = -(f.unnormalized_density(h + step).unwrap().ln()
                    - f.unnormalized_density(h - step).unwrap().ln())
                    / (2.0 * step);
                assert!((fd_log - beta).abs() <= 1e-6 * beta.abs().max(1.0));
            }
        }
    }

    #[test]
    fn c_of_rho_composition() {
        assert_eq!(BetaFamily::FermiBose { beta0: 1.0, mu: 0.0, a: 1.0 }.c_of_rho(0.0).unwrap(), 0.0);
        let canon = BetaFamily::FermiBose { beta0: 1.4, mu: 0.0, a: 0.0 };
        assert_eq!(canon.c_of_rho(0.25).unwrap(), -1.4 * 0.25);
        for f in &FAMILIES[3..] {
            for h in [0.1, 0.9, 2.2, 5.0, 12.0] {
                let rho = f.unnormalized_density(h).unwrap();
                let lhs = f.c_of_rho(rho).unwrap();
                let rhs = -f.beta(h).unwrap() * rho;
                assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs(), "{f:?} at {h}: {lhs} vs {rhs}");
            }
        }
        assert!(BetaFamily::Constant { beta0: 1.0 }.c_of_rho(0.5).is_err());
    }

    #[test]
    fn parameter_round_trip() {
        for f in FAMILIES {
            for name in f.param_names() {
                let v = f.param(name).unwrap();
                assert_eq!(f.with_param(name, v).unwrap(), f);
            }
        }
    }
}
