//! Fixtures shared by the criterion benchmarks.

use thermofew::{BaseForce, BetaFamily, ConstrainedSystem, InitialSampler, PhaseState, Potential, SystemModel};

pub fn isokinetic(n: usize, d: usize) -> ConstrainedSystem {
    let model = SystemModel::uniform(n, d, 1.0, Potential::Harmonic { omega: 1.0 }).unwrap();
    let beta0 = model.n_dof() as f64;
    ConstrainedSystem::new(model, BaseForce::LinearFriction { gamma: 1.0 }, BetaFamily::Constant { beta0 }).unwrap()
}

pub fn dissipative_quartic(n: usize, d: usize) -> ConstrainedSystem {
    let model = SystemModel::uniform(n, d, 1.0, Potential::Quartic { a: 1.0, b: 0.5 }).unwrap();
    ConstrainedSystem::new(
        model,
        BaseForce::CanonicalDissipative { g: vec![0.0, 0.5, 0.1] },
        BetaFamily::Linear { beta1: 1.0, beta2: 0.2 },
    )
    .unwrap()
}

pub fn surface_state(sys: &ConstrainedSystem, seed: u64) -> PhaseState {
    let sampler = InitialSampler::Gaussian { q_sigma: 1.0, p_sigma: 1.0 };
    sampler.draw(sys, &mut thermofew::dynamics::stream_rng(seed, 0)).unwrap()
}
