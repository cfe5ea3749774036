//! Adaptive Gauss-Kronrod (7/15) quadrature on finite intervals.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_INTERVALS: usize = 4000;

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let pair = f(c - dx) + f(c + dx);
        kronrod += WGK[i] * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Integrates `f` over `[a, b]`, bisecting the interval with the largest
/// error estimate until the total estimate is below
/// `max(abs_tol, rel_tol |I|)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> Quadrature {
    integrate_panels(f, a, b, 1, rel_tol, abs_tol)
}

/// As [`integrate`], starting from `panels` equal sub-intervals.
pub fn integrate_panels<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    panels: usize,
    rel_tol: f64,
    abs_tol: f64,
) -> Quadrature {
    if a == b {
        return Quadrature {
            value: 0.0,
            error: 0.0,
            converged: true,
        };
    }
    let panels = panels.max(1);
    let width = (b - a) / panels as f64;
    let mut intervals: Vec<(f64, f64, f64, f64)> = (0..panels)
        .map(|i| {
            let lo = a + width * i as f64;
            let hi = if i + 1 == panels { b } else { lo + width };
            let (v, e) = gk15(&f, lo, hi);
            (lo, hi, v, e)
        })
        .collect();
    loop {
        let value: f64 = intervals.iter().map(|iv| iv.2).sum();
        let error: f64 = intervals.iter().map(|iv| iv.3).sum();
        let target = abs_tol.max(rel_tol * value.abs());
        if error <= target || intervals.len() >= MAX_INTERVALS {
            return Quadrature {
                value,
                error,
                converged: error <= target,
            };
        }
        let (worst, _) = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("at least one interval");
        let (lo, hi, _, _) = intervals.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // interval can no longer be split in floating point
            return Quadrature {
                value,
                error,
                converged: false,
            };
        }
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let q = integrate(|x| x.powi(5) - 2.0 * x * x + 1.0, -1.0, 2.0, 1e-14, 0.0);
        let exact = (64.0 - 1.0) / 6.0 - 2.0 * (8.0 + 1.0) / 3.0 + 3.0;
        assert!((q.value - exact).abs() < 1e-13);
    }

    #[test]
    fn gaussian_integral() {
        let q = integrate(|x: f64| (-x * x).exp(), -10.0, 10.0, 1e-13, 0.0);
        assert!((q.value - std::f64::consts::PI.sqrt()).abs() < 1e-13);
        assert!(q.converged);
    }

    #[test]
    fn integrable_endpoint_singularity() {
        let q = integrate(|x: f64| 1.0 / x.sqrt(), 0.0, 1.0, 1e-10, 0.0);
        assert!((q.value - 2.0).abs() < 1e-8);
    }

    #[test]
    fn empty_interval() {
        assert_eq!(integrate(|x| x, 1.0, 1.0, 1e-10, 0.0).value, 0.0);
    }
}
