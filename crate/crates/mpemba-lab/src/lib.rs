//! Exact relaxation dynamics of a driven-dissipative two-level system and
//! the anomalous-relaxation (Mpemba) crossings it produces.
//!
//! The library propagates the vectorized density matrix analytically in
//! every eigenvalue region of the 4x4 generator, including the second- and
//! third-order exceptional points where the evolution picks up polynomial
//! prefactors, and locates intersections of observable trajectories either
//! in closed form (Lambert W roots of exponential-plus-linear brackets,
//! quadratics on the equal-gap line and at the third-order point) or with a
//! grid-plus-bisection oracle.
//!
//! Entry points:
//! - [`lindblad`]: parameter and state types, generator, steady states.
//! - [`spectrum`]: eigenvalues, region classification, Jordan machinery.
//! - [`evolution`]: analytic propagation plus the RK4 validation oracle.
//! - [`observables`]: energy, entropy, temperature, KL distance and speed.
//! - [`lambertw`]: real-branch Lambert W.
//! - [`mpemba`]: crossing detection and classification.
//! - [`cli`]: the command-line front end (`classify`, `quench`, `scan`,
//!   `crossings`, `selftest`).
//!
//! Runnable walkthroughs of each capability live in `examples/`.

pub mod cli;
pub mod error;
pub mod evolution;
pub mod lambertw;
pub mod lindblad;
pub mod mpemba;
pub mod observables;
pub mod spectrum;

pub use error::Error;
pub use evolution::{propagate_analytic, propagate_rk4, Propagator};
pub use lambertw::{lambert_w, WBranch};
pub use lindblad::{
    build_lindbladian, initial_condition, steady_state, ControlParams, DensityVector,
    QuenchExperiment,
};
pub use mpemba::{
    crossing_times_closed_form, crossing_times_region_b, crossing_times_region_d,
    crossing_times_region_e, delta_coefficients, find_crossings_grid, region_a1_criterion,
    DeltaCoefficients, MpembaReport,
};
pub use observables::{energy, entropy, kl_divergence, kl_speed, temperature, ObservableKind};
pub use spectrum::{
    classify_region, e_point, eigensystem, nonzero_eigenvalues, region_b_m2_gamma, region_c_gamma,
    region_d_gamma, RegionTag, SpectralData,
};
