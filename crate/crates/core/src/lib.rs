//! Semiclassical wave propagation by transport of Lagrangian curves
//! carrying half-densities, parallel phases and Maslov counters.

pub mod dynamics;
pub mod error;
pub mod io;
pub mod manifold;
pub mod reconstruct;
pub mod structure;
pub mod symbol;

pub use dynamics::{
    evolve, step, step_variational, EvolveSettings, Scheme, StepDiagnostics, Trajectory,
};
pub use error::{Error, Result};
pub use manifold::{
    gauge_transform, init_circle, init_from_phase_function, phase_coherence_residual,
    quantization_data, quantize_circles, refine, uniform_grid, GaugeMap, MarkerChart, PhasePoint,
    QuantizationData, QuantizedLevel, Topology, QUANTIZE_MARKERS,
};
pub use reconstruct::{
    branches_at, field_at, field_momentum, field_profile, Branch, FieldSample, Method,
    ReconstructSettings,
};
pub use structure::{
    dtheta_eval, energy_derivative, evolution_field, frozen_in_check, frozen_in_check_with,
    hamiltonian_vector, observables, pairing_eval, perturb, poisson_bracket, theta_eval, theta_raw,
    transport_tangent, FrozenInReport, FunctionalDerivative, Jet, Observables, PhaseFunction,
    RawTangent, TangentPerturbation, DEFAULT_FD_AMPLITUDE,
};
pub use symbol::{make_symbol, Builtin, DispersionSymbol, FrequencyData, SymbolDescriptor};
