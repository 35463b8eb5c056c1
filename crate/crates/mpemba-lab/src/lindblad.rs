//! Model state and parameter types for the driven-dissipative two-level
//! system: the vectorized density matrix, the 4x4 Lindbladian generator,
//! its steady state, and quench initial conditions.
//!
//! The density matrix is stored as the column vector
//! (rho_eg, rho_ge, rho_ee, rho_gg) and evolves under
//! i d/dt |rho> = L |rho>. The detuning fixes the unit of energy, leaving
//! two dimensionless controls: the drive `d_tilde` and the dissipation
//! `gamma_tilde`.

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::Error;

/// 4x4 complex matrix acting on vectorized density matrices.
pub type CMatrix4 = Matrix4<C64>;
/// Vectorized density matrix / eigenvector storage.
pub type CVector4 = Vector4<C64>;

/// Tolerance used by the physical-state predicates.
pub const PHYS_TOL: f64 = 1e-10;

/// Dimensionless control parameters of the model: drive `d_tilde = d/delta`
/// and dissipation `gamma_tilde = Gamma/delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    pub d_tilde: f64,
    pub gamma_tilde: f64,
}

impl ControlParams {
    /// Validates finiteness and `gamma_tilde >= 0`. Negative drive is
    /// allowed; the spectrum depends on the drive only through its square.
    pub fn new(d_tilde: f64, gamma_tilde: f64) -> Result<Self, Error> {
        if !d_tilde.is_finite() || !gamma_tilde.is_finite() {
            return Err(Error::InvalidParams(format!(
                "control parameters must be finite, got d_tilde={d_tilde}, gamma_tilde={gamma_tilde}"
            )));
        }
        if gamma_tilde < 0.0 {
            return Err(Error::InvalidParams(format!(
                "gamma_tilde must be non-negative, got {gamma_tilde}"
            )));
        }
        Ok(Self { d_tilde, gamma_tilde })
    }
}

/// Real/imaginary decomposition of the coherence, rho_eg = rho_re + i rho_im.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceParts {
    pub rho_re: f64,
    pub rho_im: f64,
}

impl CoherenceParts {
    /// Rebuilds the conjugate coherence pair (rho_eg, rho_ge).
    pub fn to_coherences(self) -> (C64, C64) {
        (
            C64::new(self.rho_re, self.rho_im),
            C64::new(self.rho_re, -self.rho_im),
        )
    }

    /// Reads the decomposition off rho_eg.
    pub fn from_coherence(rho_eg: C64) -> Self {
        Self { rho_re: rho_eg.re, rho_im: rho_eg.im }
    }
}

/// Vectorized density matrix with component order (eg, ge, ee, gg),
/// i.e. indices j = 1..4 of the model. All four components are stored as
/// complex numbers; physicality is a checked predicate rather than a type
/// constraint because spectral intermediates are genuinely complex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityVector {
    pub rho_eg: C64,
    pub rho_ge: C64,
    pub rho_ee: C64,
    pub rho_gg: C64,
}

impl DensityVector {
    pub fn new(rho_eg: C64, rho_ge: C64, rho_ee: C64, rho_gg: C64) -> Self {
        Self { rho_eg, rho_ge, rho_ee, rho_gg }
    }

    /// Builds a diagonal-plus-coherence state from real data.
    pub fn from_parts(coh: CoherenceParts, rho_ee: f64, rho_gg: f64) -> Self {
        let (eg, ge) = coh.to_coherences();
        Self::new(eg, ge, C64::new(rho_ee, 0.0), C64::new(rho_gg, 0.0))
    }

    pub fn coherence_parts(&self) -> CoherenceParts {
        CoherenceParts::from_coherence(self.rho_eg)
    }

    pub fn as_vector(&self) -> CVector4 {
        CVector4::new(self.rho_eg, self.rho_ge, self.rho_ee, self.rho_gg)
    }

    pub fn from_vector(v: &CVector4) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    /// |rho_ge - conj(rho_eg)| plus the imaginary parts of the populations.
    pub fn hermiticity_defect(&self) -> f64 {
        (self.rho_ge - self.rho_eg.conj()).norm() + self.rho_ee.im.abs() + self.rho_gg.im.abs()
    }

    /// |rho_ee + rho_gg - 1|.
    pub fn trace_defect(&self) -> f64 {
        (self.rho_ee + self.rho_gg - C64::new(1.0, 0.0)).norm()
    }

    /// Determinant of the reconstructed 2x2 density matrix,
    /// rho_ee * rho_gg - |rho_eg|^2. Non-negative for physical states.
    pub fn determinant2(&self) -> f64 {
        self.rho_ee.re * self.rho_gg.re - self.rho_eg.norm_sqr()
    }

    /// Smallest eigenvalue of the reconstructed 2x2 density matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        let tr = self.rho_ee.re + self.rho_gg.re;
        let split = ((self.rho_ee.re - self.rho_gg.re).powi(2) / 4.0 + self.rho_eg.norm_sqr()).sqrt();
        tr / 2.0 - split
    }

    /// Physical-state predicate: Hermiticity, unit trace and positivity
    /// within `tol`.
    pub fn is_physical(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol && self.trace_defect() <= tol && self.determinant2() >= -tol
    }

    /// Componentwise sup-norm distance to another state.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        (self.as_vector() - other.as_vector()).amax()
    }
}

/// A quench experiment: two pre-quench parameter pairs producing the copies
/// I and II, both evolved under the common post-quench parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuenchExperiment {
    pub pre_i: ControlParams,
    pub pre_ii: ControlParams,
    pub post: ControlParams,
}

impl QuenchExperiment {
    pub fn new(pre_i: ControlParams, pre_ii: ControlParams, post: ControlParams) -> Self {
        Self { pre_i, pre_ii, post }
    }

    /// Fixed-dissipation protocol: only the drives differ between the copies
    /// and the post-quench point.
    pub fn fixed_dissipation(d_i: f64, d_ii: f64, post: ControlParams) -> Result<Self, Error> {
        Ok(Self {
            pre_i: ControlParams::new(d_i, post.gamma_tilde)?,
            pre_ii: ControlParams::new(d_ii, post.gamma_tilde)?,
            post,
        })
    }

    pub fn initial_pair(&self) -> (DensityVector, DensityVector) {
        (initial_condition(self.pre_i), initial_condition(self.pre_ii))
    }
}

/// Builds the 4x4 Lindbladian matrix in the (eg, ge, ee, gg) ordering.
///
/// The column sums are not all zero (the generator is genuinely
/// non-classical), while rows 3 and 4 are entrywise negatives of each other
/// so the trace rho_ee + rho_gg is conserved under d rho/dt = -i L rho.
pub fn build_lindbladian(p: ControlParams) -> CMatrix4 {
    let d2 = C64::new(p.d_tilde / 2.0, 0.0);
    let g = p.gamma_tilde;
    let zero = C64::new(0.0, 0.0);
    CMatrix4::from_rows(&[
        [C64::new(1.0, -g / 2.0), zero, -d2, d2].into(),
        [zero, C64::new(-1.0, -g / 2.0), d2, -d2].into(),
        [-d2, d2, C64::new(0.0, -g), zero].into(),
        [d2, -d2, C64::new(0.0, g), zero].into(),
    ])
}

/// Steady state of the generator at `p`: the zero mode of L, normalized to
/// unit trace. In closed form,
/// rho_gg = (4 + d^2 + G^2) / (4 + 2 d^2 + G^2), rho_ee = d^2 / (4 + 2 d^2 + G^2),
/// rho_re = -2 d / (4 + 2 d^2 + G^2),           rho_im = -d G / (4 + 2 d^2 + G^2).
pub fn steady_state(p: ControlParams) -> DensityVector {
    let d = p.d_tilde;
    let g = p.gamma_tilde;
    let den = 4.0 + 2.0 * d * d + g * g;
    let coh = CoherenceParts { rho_re: -2.0 * d / den, rho_im: -d * g / den };
    DensityVector::from_parts(coh, d * d / den, (4.0 + d * d + g * g) / den)
}

/// The quench protocol prepares each copy in the steady state of its
/// pre-quench parameters.
pub fn initial_condition(pre: ControlParams) -> DensityVector {
    steady_state(pre)
}

/// Uniformly random physical state: a Bloch vector drawn from the ball of
/// the given radius (radius 1 = all physical states, pure ones included).
pub fn random_physical_state<R: rand::Rng>(rng: &mut R, max_radius: f64) -> DensityVector {
    let (x, y, z) = loop {
        let x = rng.gen_range(-1.0..1.0);
        let y = rng.gen_range(-1.0..1.0);
        let z = rng.gen_range(-1.0..1.0);
        if x * x + y * y + z * z <= 1.0 {
            break (x * max_radius, y * max_radius, z * max_radius);
        }
    };
    DensityVector::from_parts(
        CoherenceParts { rho_re: x / 2.0, rho_im: -y / 2.0 },
        (1.0 + z) / 2.0,
        (1.0 - z) / 2.0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn lindbladian_with_no_coupling_is_diagonal() {
        let l = build_lindbladian(ControlParams::new(0.0, 0.0).unwrap());
        let expected = CMatrix4::from_diagonal(&CVector4::new(
            c(1.0, 0.0),
            c(-1.0, 0.0),
            c(0.0, 0.0),
            c(0.0, 0.0),
        ));
        assert_eq!(l, expected);
    }

    #[test]
    fn lindbladian_matches_direct_substitution() {
        let l = build_lindbladian(ControlParams::new(1.0, 2.0).unwrap());
        let expected = CMatrix4::from_rows(&[
            [c(1.0, -1.0), c(0.0, 0.0), c(-0.5, 0.0), c(0.5, 0.0)].into(),
            [c(0.0, 0.0), c(-1.0, -1.0), c(0.5, 0.0), c(-0.5, 0.0)].into(),
            [c(-0.5, 0.0), c(0.5, 0.0), c(0.0, -2.0), c(0.0, 0.0)].into(),
            [c(0.5, 0.0), c(-0.5, 0.0), c(0.0, 2.0), c(0.0, 0.0)].into(),
        ]);
        assert_eq!(l, expected);
    }

    #[test]
    fn lindbladian_column_sums_are_not_zero() {
        let l = build_lindbladian(ControlParams::new(1.0, 2.0).unwrap());
        let col1: C64 = (0..4).map(|i| l[(i, 0)]).sum();
        assert_abs_diff_eq!(col1.re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(col1.im, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn lindbladian_population_rows_cancel() {
        for (d, g) in [(1.0, 2.0), (4.0, 18.0), (-3.0, 0.5), (0.0, 7.0)] {
            let l = build_lindbladian(ControlParams::new(d, g).unwrap());
            for j in 0..4 {
                let sum = l[(2, j)] + l[(3, j)];
                assert!(sum.norm() < 1e-15, "rows 3+4 must cancel at column {j}");
            }
        }
    }

    #[test]
    fn steady_state_without_drive_is_pure_ground() {
        let ss = steady_state(ControlParams::new(0.0, 5.0).unwrap());
        assert_eq!(ss.rho_eg, c(0.0, 0.0));
        assert_eq!(ss.rho_ge, c(0.0, 0.0));
        assert_eq!(ss.rho_ee, c(0.0, 0.0));
        assert_eq!(ss.rho_gg, c(1.0, 0.0));
    }

    #[test]
    fn steady_state_at_closed_system_point() {
        // d = 2, Gamma = 0: denominators 4 + 2*4 = 12.
        let ss = steady_state(ControlParams::new(2.0, 0.0).unwrap());
        assert_abs_diff_eq!(ss.rho_gg.re, 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ss.rho_ee.re, 1.0 / 3.0, epsilon = 1e-15);
        let coh = ss.coherence_parts();
        assert_abs_diff_eq!(coh.rho_re, -1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(coh.rho_im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn steady_state_annihilated_by_generator() {
        for (d, g) in [(1.0, 2.0), (4.0, 18.145), (10.0, 0.3), (-2.5, 6.0), (0.0, 0.0)] {
            let p = ControlParams::new(d, g).unwrap();
            let residual = (build_lindbladian(p) * steady_state(p).as_vector()).amax();
            assert!(residual <= 1e-12, "‖L rho_ss‖ = {residual} at ({d}, {g})");
        }
    }

    #[test]
    fn initial_condition_is_definitionally_the_steady_state() {
        let p = ControlParams::new(3.0, 15.0).unwrap();
        assert_eq!(initial_condition(p), steady_state(p));
        let ss = steady_state(p);
        // Evaluated from the closed forms in extended precision.
        assert_abs_diff_eq!(ss.rho_gg.re, 0.96356275303643723618, epsilon = 1e-16);
        assert_abs_diff_eq!(ss.rho_ee.re, 0.036437246963562749946, epsilon = 1e-16);
        assert_abs_diff_eq!(ss.rho_eg.re, -0.024291497975708502024, epsilon = 1e-16);
        assert_abs_diff_eq!(ss.rho_eg.im, -0.18218623481781376518, epsilon = 1e-16);
    }

    #[test]
    fn golden_initial_condition_on_the_ep_line() {
        // pre = (10, sqrt(284 + 32 sqrt 2)); frozen from the closed forms
        // evaluated in extended precision.
        let gamma = (284.0 + 32.0 * 2.0_f64.sqrt()).sqrt();
        let rho = initial_condition(ControlParams::new(10.0, gamma).unwrap());
        assert_abs_diff_eq!(rho.rho_eg.re, -0.037505520297172417867, epsilon = 1e-15);
        assert_abs_diff_eq!(rho.rho_eg.im, -0.34027596858288401106, epsilon = 1e-15);
        assert_abs_diff_eq!(rho.rho_ee.re, 0.18752760148586208934, epsilon = 1e-15);
        assert_abs_diff_eq!(rho.rho_gg.re, 0.81247239851413791066, epsilon = 1e-15);
    }

    #[test]
    fn rejects_non_finite_and_negative_dissipation() {
        assert!(ControlParams::new(f64::NAN, 1.0).is_err());
        assert!(ControlParams::new(1.0, f64::INFINITY).is_err());
        assert!(ControlParams::new(1.0, -0.1).is_err());
        assert!(ControlParams::new(-5.0, 0.0).is_ok());
    }

    proptest! {
        #[test]
        fn coherence_parts_round_trip(re in -1.0_f64..1.0, im in -1.0_f64..1.0) {
            let parts = CoherenceParts { rho_re: re, rho_im: im };
            let (eg, ge) = parts.to_coherences();
            let back = CoherenceParts::from_coherence(eg);
            prop_assert_eq!(parts, back);
            prop_assert_eq!(ge, eg.conj());
        }

        #[test]
        fn steady_states_are_physical(d in -20.0_f64..20.0, g in 0.0_f64..40.0) {
            let ss = steady_state(ControlParams::new(d, g).unwrap());
            prop_assert!(ss.is_physical(PHYS_TOL));
            prop_assert!(ss.min_eigenvalue() >= -1e-12);
        }
    }
}
