//! Exact time evolution per region, plus an independent fixed-step RK4
//! integrator used purely as a validation oracle.
//!
//! Away from exceptional points the state relaxes as a sum of exponential
//! modes; on the exceptional sets the Jordan defects contribute additional
//! t and t^2/2 factors. Both cases are handled uniformly by exponentiating
//! the Jordan form.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::lindblad::{build_lindbladian, CMatrix4, ControlParams, DensityVector};
use crate::spectrum::{eigensystem, SpectralData};

const I: C64 = C64::new(0.0, 1.0);

/// Default number of samples for trajectory grids.
pub const DEFAULT_GRID_POINTS: usize = 2000;

/// Default oracle step for the RK4 integrator.
pub const DEFAULT_RK4_DT: f64 = 1e-4;

/// Default observation horizon: twenty lifetimes of the slowest mode.
/// Infinite in the non-relaxing closed-system limit.
pub fn default_horizon(data: &SpectralData) -> f64 {
    let slow = data.lambda_slow();
    if slow > 0.0 {
        20.0 / slow
    } else {
        f64::INFINITY
    }
}

/// Mode amplitudes a_k of an initial state in the spectral basis,
/// a_k = sum_n l_{k,n} rho_n(0). The steady amplitude a_1 carries the
/// trace, so the t -> infinity limit of the mode sum is the steady state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeCoefficients {
    pub a: [C64; 4],
}

impl ModeCoefficients {
    /// Real/imaginary split of the conjugate-pair amplitude a_3 = a_re + i a_im
    /// (physical initial states in the oscillatory regions have a_4 = conj(a_3)).
    pub fn pair_split(&self) -> (f64, f64) {
        (self.a[2].re, self.a[2].im)
    }

    /// Oscillation phase atan2(a_im, a_re) of the damped-cosine form.
    pub fn phase(&self) -> f64 {
        let (re, im) = self.pair_split();
        im.atan2(re)
    }
}

/// Contracts the left rows with the initial state.
pub fn mode_coefficients(rho0: &DensityVector, spec: &SpectralData) -> ModeCoefficients {
    let v = spec.left_vectors * rho0.as_vector();
    ModeCoefficients { a: [v[0], v[1], v[2], v[3]] }
}

/// Region-resolved analytic propagator for a fixed post-quench point.
/// Builds the spectral decomposition once; each evaluation is a 4x4
/// product with the exponentiated Jordan form.
#[derive(Debug, Clone)]
pub struct Propagator {
    data: SpectralData,
}

impl Propagator {
    pub fn new(post: ControlParams) -> Self {
        Self { data: eigensystem(post) }
    }

    pub fn from_spectral_data(data: SpectralData) -> Self {
        Self { data }
    }

    pub fn spectral_data(&self) -> &SpectralData {
        &self.data
    }

    /// exp(-i J t): diagonal decay factors, with -i t and -t^2/2 defect
    /// entries along each Jordan chain.
    fn jordan_exponential(&self, t: f64) -> CMatrix4 {
        let mut m = CMatrix4::zeros();
        for k in 0..4 {
            m[(k, k)] = (-self.data.lambdas[k] * t).exp();
        }
        let one = C64::new(1.0, 0.0);
        for k in 0..3 {
            if self.data.jordan_form[(k, k + 1)] == one {
                m[(k, k + 1)] = -I * t * m[(k, k)];
                if k + 2 < 4 && self.data.jordan_form[(k + 1, k + 2)] == one {
                    m[(k, k + 2)] = C64::new(-t * t / 2.0, 0.0) * m[(k, k)];
                }
            }
        }
        m
    }

    /// Evolves precomputed mode amplitudes to time `t >= 0`.
    pub fn evolve_coefficients(&self, coeffs: &ModeCoefficients, t: f64) -> DensityVector {
        let a = nalgebra::Vector4::new(coeffs.a[0], coeffs.a[1], coeffs.a[2], coeffs.a[3]);
        let v = self.data.right_vectors * (self.jordan_exponential(t) * a);
        DensityVector::from_vector(&v)
    }

    pub fn propagate(&self, rho0: &DensityVector, t: f64) -> Result<DensityVector, Error> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("propagation time must be >= 0, got {t}")));
        }
        Ok(self.evolve_coefficients(&mode_coefficients(rho0, &self.data), t))
    }

    /// Samples a uniform grid t_i = i * horizon / n, i = 1..=n.
    pub fn trajectory(&self, rho0: &DensityVector, horizon: f64, n: usize) -> Result<Trajectory, Error> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Domain(format!("horizon must be positive and finite, got {horizon}")));
        }
        if n < 2 {
            return Err(Error::Domain(format!("need at least 2 grid points, got {n}")));
        }
        let coeffs = mode_coefficients(rho0, &self.data);
        let mut times = Vec::with_capacity(n);
        let mut states = Vec::with_capacity(n);
        for i in 1..=n {
            let t = horizon * i as f64 / n as f64;
            times.push(t);
            states.push(self.evolve_coefficients(&coeffs, t));
        }
        Ok(Trajectory { times, states, provenance: Provenance::Analytic })
    }
}

/// Closed-form propagation of one state; see [`Propagator`] for repeated use.
pub fn propagate_analytic(rho0: &DensityVector, post: ControlParams, t: f64) -> Result<DensityVector, Error> {
    Propagator::new(post).propagate(rho0, t)
}

/// Classical fixed-step fourth-order Runge-Kutta on d rho/dt = -i L rho.
/// Independent of the spectral machinery; global error O(dt^4).
pub fn propagate_rk4(
    rho0: &DensityVector,
    post: ControlParams,
    t: f64,
    dt: f64,
) -> Result<DensityVector, Error> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("propagation time must be >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(*rho0);
    }
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("step size must be positive, got {dt}")));
    }
    let l = build_lindbladian(post);
    let f = |y: &nalgebra::Vector4<C64>| -(I * (l * y));
    let mut y = rho0.as_vector();
    let mut remaining = t;
    while remaining > 0.0 {
        let h = dt.min(remaining);
        let hc = C64::new(h, 0.0);
        let k1 = f(&y);
        let k2 = f(&(y + k1 * (hc / 2.0.into())));
        let k3 = f(&(y + k2 * (hc / 2.0.into())));
        let k4 = f(&(y + k3 * hc));
        y += (k1 + k2 * 2.0.into() + k3 * 2.0.into() + k4) * (hc / 6.0.into());
        remaining -= h;
    }
    Ok(DensityVector::from_vector(&y))
}

/// How a trajectory was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Analytic,
    Rk4,
}

/// Time series of states on a strictly increasing grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityVector>,
    pub provenance: Provenance,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lindblad::{initial_condition, steady_state, PHYS_TOL};
    use crate::spectrum::{e_point, region_b_m2_gamma, region_c_gamma, region_d_gamma};
    use approx::assert_abs_diff_eq;

    fn params(d: f64, g: f64) -> ControlParams {
        ControlParams::new(d, g).unwrap()
    }

    fn region_points() -> Vec<ControlParams> {
        vec![
            params(2.5, 0.5),
            params(1.0, 10.0),
            params(6.0, 6.0 * 17.0_f64.sqrt()),
            params(4.0, region_d_gamma(4.0).unwrap()),
            params(4.0, region_c_gamma(4.0).unwrap()),
            e_point(),
        ]
    }

    #[test]
    fn identity_at_time_zero() {
        for post in region_points() {
            let rho0 = initial_condition(params(1.7, 3.0));
            let rho = propagate_analytic(&rho0, post, 0.0).unwrap();
            assert!(rho.sup_distance(&rho0) <= 1e-12);
        }
    }

    #[test]
    fn steady_state_is_a_fixed_point() {
        for post in region_points() {
            let ss = steady_state(post);
            for t in [0.3, 2.0, 9.5] {
                let rho = propagate_analytic(&ss, post, t).unwrap();
                assert!(
                    rho.sup_distance(&ss) <= 1e-9,
                    "steady state drifted by {} at {post:?}",
                    rho.sup_distance(&ss)
                );
            }
        }
    }

    #[test]
    fn steady_initial_state_has_no_decaying_amplitudes() {
        let post = params(4.0, region_d_gamma(4.0).unwrap());
        let prop = Propagator::new(post);
        let coeffs = mode_coefficients(&steady_state(post), prop.spectral_data());
        for k in 1..4 {
            assert!(coeffs.a[k].norm() <= 1e-10, "a_{} = {}", k + 1, coeffs.a[k]);
        }
    }

    #[test]
    fn oscillatory_amplitudes_are_conjugate() {
        let prop = Propagator::new(params(2.5, 0.5));
        let coeffs = mode_coefficients(&initial_condition(params(2.1, 0.5)), prop.spectral_data());
        assert!((coeffs.a[3] - coeffs.a[2].conj()).norm() <= 1e-10);
    }

    #[test]
    fn golden_mode_coefficients() {
        // rho0 = steady(2.1, 0.5) decomposed at post = (2.5, 0.5); frozen
        // from the closed-form tables evaluated in extended precision.
        let prop = Propagator::new(params(2.5, 0.5));
        let coeffs = mode_coefficients(&initial_condition(params(2.1, 0.5)), prop.spectral_data());
        assert_abs_diff_eq!(coeffs.a[0].re, 0.62686567164179104478, epsilon = 1e-12);
        assert_abs_diff_eq!(coeffs.a[0].im, 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(coeffs.a[1].re, 0.012900698554930779019, epsilon = 1e-12);
        assert_abs_diff_eq!(coeffs.a[2].re, 0.011409852392075201339, epsilon = 1e-12);
        assert_abs_diff_eq!(coeffs.a[2].im, -0.0037746945774719453725, epsilon = 1e-12);
    }

    #[test]
    fn reconstruction_at_time_zero() {
        for post in region_points() {
            let prop = Propagator::new(post);
            let rho0 = initial_condition(params(3.3, 7.7));
            let coeffs = mode_coefficients(&rho0, prop.spectral_data());
            let rebuilt = prop.evolve_coefficients(&coeffs, 0.0);
            assert!(rebuilt.sup_distance(&rho0) <= 1e-10);
        }
    }

    #[test]
    fn analytic_agrees_with_rk4_everywhere() {
        for post in region_points() {
            let prop = Propagator::new(post);
            let rho0 = initial_condition(params(5.0, 2.0));
            for t in [0.1, 1.0, 5.0] {
                let a = prop.propagate(&rho0, t).unwrap();
                let b = propagate_rk4(&rho0, post, t, DEFAULT_RK4_DT).unwrap();
                assert!(
                    a.sup_distance(&b) <= 1e-8,
                    "analytic/RK4 disagree by {} at {post:?}, t = {t}",
                    a.sup_distance(&b)
                );
            }
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        let post = params(2.5, 0.5);
        let rho0 = initial_condition(params(2.1, 0.5));
        let exact = propagate_analytic(&rho0, post, 1.0).unwrap();
        let coarse = propagate_rk4(&rho0, post, 1.0, 2e-3).unwrap();
        let fine = propagate_rk4(&rho0, post, 1.0, 1e-3).unwrap();
        let e_coarse = coarse.sup_distance(&exact);
        let e_fine = fine.sup_distance(&exact);
        let order = (e_coarse / e_fine).log2();
        assert!(
            (order - 4.0).abs() < 0.5,
            "observed convergence order {order} (errors {e_coarse:.3e} / {e_fine:.3e})"
        );
    }

    #[test]
    fn semigroup_property() {
        for post in region_points() {
            let prop = Propagator::new(post);
            let rho0 = initial_condition(params(1.2, 4.0));
            let (s, t) = (0.4, 1.3);
            let step = prop.propagate(&prop.propagate(&rho0, s).unwrap(), t).unwrap();
            let joint = prop.propagate(&rho0, s + t).unwrap();
            assert!(
                step.sup_distance(&joint) <= 1e-9,
                "semigroup violated by {} at {post:?}",
                step.sup_distance(&joint)
            );
        }
    }

    #[test]
    fn long_time_limit_reaches_the_steady_state() {
        for post in region_points() {
            let prop = Propagator::new(post);
            let slow = prop.spectral_data().lambda_slow();
            let rho0 = initial_condition(params(7.0, 1.0));
            let late = prop.propagate(&rho0, 30.0 / slow).unwrap();
            assert!(
                late.sup_distance(&steady_state(post)) <= 1e-9,
                "late-time distance {} at {post:?}",
                late.sup_distance(&steady_state(post))
            );
        }
    }

    #[test]
    fn conservation_along_trajectories() {
        for post in region_points() {
            let prop = Propagator::new(post);
            let rho0 = initial_condition(params(9.0, 0.7));
            let horizon = default_horizon(prop.spectral_data());
            let traj = prop.trajectory(&rho0, horizon, 200).unwrap();
            for (t, state) in traj.times.iter().zip(&traj.states) {
                assert!(state.trace_defect() <= PHYS_TOL, "trace broken at t = {t}");
                assert!(state.hermiticity_defect() <= PHYS_TOL, "hermiticity broken at t = {t}");
                assert!(state.min_eigenvalue() >= -1e-8, "positivity broken at t = {t}");
            }
        }
    }

    #[test]
    fn defect_terms_vanish_without_chain_amplitudes() {
        // A state built to have a_3 = a_4 = 0 at the second-order point
        // relaxes purely exponentially: check against the mode sum with the
        // defect entry removed.
        let post = params(4.0, region_d_gamma(4.0).unwrap());
        let prop = Propagator::new(post);
        let data = prop.spectral_data().clone();
        // Construct rho0 = r1 * w1 + r2 * w2 (real combination keeping trace).
        let v = data.right_vectors.column(0) * C64::new(1.0, 0.0)
            + data.right_vectors.column(1) * C64::new(0.05, 0.0);
        let scale = (v[2] + v[3]).re;
        let rho0 = DensityVector::from_vector(&(v / C64::new(scale, 0.0)));
        let coeffs = mode_coefficients(&rho0, &data);
        assert!(coeffs.a[2].norm() <= 1e-12 && coeffs.a[3].norm() <= 1e-12);
        let t = 0.37;
        let evolved = prop.evolve_coefficients(&coeffs, t);
        let pure: nalgebra::Vector4<C64> = data.right_vectors.column(0) * coeffs.a[0]
            + data.right_vectors.column(1)
                * (coeffs.a[1] * (-data.lambdas[1] * t).exp());
        assert!(evolved.sup_distance(&DensityVector::from_vector(&pure)) <= 1e-12);
    }

    #[test]
    fn rejects_bad_arguments() {
        let post = params(2.5, 0.5);
        let rho0 = initial_condition(post);
        assert!(propagate_analytic(&rho0, post, -1.0).is_err());
        assert!(propagate_rk4(&rho0, post, -1.0, 1e-4).is_err());
        assert!(propagate_rk4(&rho0, post, 1.0, 0.0).is_err());
        assert!(propagate_rk4(&rho0, post, 0.0, 1e-4).unwrap().sup_distance(&rho0) == 0.0);
    }
}
