//! Shared fixtures for the benchmarks.

use kmwave::{
    evolve, init_circle, init_from_phase_function, uniform_grid, Builtin, DispersionSymbol,
    EvolveSettings, MarkerChart, PhasePoint, Scheme,
};

pub fn free() -> DispersionSymbol {
    DispersionSymbol::builtin(Builtin::Schrodinger {
        stiffness: 0.0,
        force: 0.0,
    })
}

pub fn harmonic() -> DispersionSymbol {
    DispersionSymbol::builtin(Builtin::Harmonic { omega: 1.0 })
}

/// Gaussian beam focusing at `t = 1`, evolved to `t`.
pub fn converging_beam(n: usize, eps: f64, t: f64) -> MarkerChart {
    let c = init_from_phase_function(
        |q| -q * q / 2.0,
        |q| -q,
        |q| (-q * q).exp(),
        &uniform_grid(-3.0, 3.0, n),
        eps,
    )
    .expect("valid grid");
    if t == 0.0 {
        return c;
    }
    let mut s = EvolveSettings::new(Scheme::Rk4, 0.05, 0.0, t);
    s.save_every = usize::MAX;
    evolve(&c, &free(), &s).expect("free flow").last().clone()
}

pub fn unit_circle(n: usize) -> MarkerChart {
    init_circle(PhasePoint::new(0.0, 0.0), 1.0, n, 0.05, 1.0).expect("valid circle")
}
