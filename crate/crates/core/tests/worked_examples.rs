use thermofew::dynamics::stream_rng;
use thermofew::*;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn isokinetic(kt: f64, m: f64, omega: f64) -> ConstrainedSystem {
    let model = SystemModel::uniform(2, 3, m, Potential::Harmonic { omega }).unwrap();
    let nd = model.n_dof() as f64;
    ConstrainedSystem::new(model, BaseForce::LinearFriction { gamma: 1.0 }, BetaFamily::Constant { beta0: nd / kt }).unwrap()
}

#[test]
fn isokinetic_surface_force() {
    let (kt, m, omega) = (0.8, 1.3, 1.7);
    let sys = isokinetic(kt, m, omega);
    let sampler = InitialSampler::Gaussian { q_sigma: 1.0, p_sigma: 1.0 };
    let mut rng = stream_rng(11, 0);
    for _ in 0..50 {
        let s = sampler.draw(&sys, &mut rng).unwrap();
        let p2 = dot(&s.p, &s.p);
        assert!((p2 / m - kt).abs() < 1e-10 * kt);
        let pq = dot(&s.p, &s.q);
        let f = sys.project_force(&s).unwrap();
        for i in 0..6 {
            let want = -m * omega * omega * s.q[i] + omega * omega / kt * s.p[i] * pq;
            assert!((f[i] - want).abs() <= 1e-10 * want.abs().max(1e-12), "{i}: {} vs {want}", f[i]);
        }
    }
}

#[test]
fn null_force_keeps_hamiltonian_flow() {
    let model = SystemModel::uniform(1, 2, 1.0, Potential::Quartic { a: 1.0, b: 1.0 }).unwrap();
    let sys = ConstrainedSystem::new(model, BaseForce::LinearFriction { gamma: 0.0 }, BetaFamily::Constant { beta0: 1.0 }).unwrap();
    let s = PhaseState::new(vec![0.4, -1.1], vec![0.3, 0.9], 0.0).unwrap();
    let f = sys.project_force(&s).unwrap();
    let du = sys.model().grad_q(&s).unwrap();
    assert_eq!(f, du.iter().map(|v| -v).collect::<Vec<_>>());
}

#[test]
fn closure_residual_for_isokinetic_is_minus_alpha() {
    // The projected isokinetic force -dU + alpha p has momentum divergence
    // (n - 1) alpha while beta P_new = n alpha, so the residual is -alpha.
    let sys = isokinetic(1.0, 1.0, 1.0);
    let sampler = InitialSampler::Gaussian { q_sigma: 1.0, p_sigma: 1.0 };
    let mut rng = stream_rng(3, 0);
    for _ in 0..20 {
        let s = sampler.draw(&sys, &mut rng).unwrap();
        let du = sys.model().grad_q(&s).unwrap();
        let alpha = dot(&s.p, &du) / dot(&s.p, &s.p);
        let (r, _) = sys.closure_residual(&s).unwrap();
        assert!((r + alpha).abs() < 1e-6 * (1.0 + alpha.abs()), "{r} vs {}", -alpha);
    }
}

#[test]
fn canonical_harmonic_thermodynamics() {
    for n in 1..=3 {
        for d in 1..=3 {
            let (kt, omega) = (1.3, 0.7);
            let model = SystemModel::uniform(n, d, 1.0, Potential::Harmonic { omega }).unwrap();
            let nd = (n * d) as f64;
            let dm = DensityModel::new(model, BetaFamily::Constant { beta0: 1.0 / kt }, None).unwrap();
            let u = internal_energy(&dm).unwrap();
            let s = entropy(&dm, None).unwrap();
            let x = thermodynamic_force(&dm, "omega").unwrap();
            let s_want = nd * (1.0 + (2.0 * std::f64::consts::PI * kt / omega).ln());
            assert!((u / (nd * kt) - 1.0).abs() < 1e-6);
            assert!((s / s_want - 1.0).abs() < 1e-6, "{s} vs {s_want}");
            assert!((x / (-nd * kt / omega) - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn fermi_bose_density_form() {
    // exp(-B) with B = ln(e^x + a) is 1 / (exp(beta0 (H - mu)) + a)
    for a in [1.0, -1.0, 0.0] {
        let fam = BetaFamily::FermiBose { beta0: 1.4, mu: 0.3, a };
        for h in [0.5f64, 1.0, 2.5, 7.0] {
            let want = 1.0 / ((1.4 * (h - 0.3)).exp() + a);
            let got = fam.unnormalized_density(h).unwrap();
            assert!((got / want - 1.0).abs() < 1e-14, "a={a} h={h}: {got} vs {want}");
        }
    }
}

#[test]
fn breit_wigner_needs_window() {
    let model = SystemModel::uniform(1, 1, 1.0, Potential::Harmonic { omega: 1.0 }).unwrap();
    let fam = BetaFamily::BreitWigner { energy: 1.0, width: 0.5 };
    assert!(matches!(DensityModel::new(model.clone(), fam.clone(), None), Err(Error::Divergent(_))));
    let dm = DensityModel::new(model, fam, Some(EnergyWindow::new(0.0, 10.0).unwrap())).unwrap();
    let p = dm.probability(0.0, 10.0).unwrap();
    assert!((p - 1.0).abs() < 1e-10);
}
