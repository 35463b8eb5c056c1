//! Scalar observables of the relaxing state: ground-state probability,
//! energy, von Neumann entropy, temperature, and the Kullback-Leibler
//! distance to the steady state together with its decay speed.
//!
//! Rates are evaluated analytically from rho_dot = -i L rho; finite
//! differences appear only in tests as oracles. Temperature is the ratio of
//! the energy and entropy rates and passes through genuine singularities
//! where the entropy rate vanishes; those points are reported as an
//! undefined sentinel rather than dropped.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::lindblad::{build_lindbladian, ControlParams, DensityVector};

/// Smallest density-matrix eigenvalue admitted into a logarithm.
pub const LOG_EIGENVALUE_FLOOR: f64 = 1e-14;

/// Relative threshold below which the entropy rate makes the temperature
/// undefined.
pub const TEMPERATURE_SENTINEL_REL: f64 = 1e-12;

/// The observables studied for anomalous-relaxation crossings. Serialized
/// with the same short labels the CLI accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObservableKind {
    #[serde(rename = "gg")]
    GroundPop,
    #[serde(rename = "energy")]
    Energy,
    #[serde(rename = "entropy")]
    Entropy,
    #[serde(rename = "temperature")]
    Temperature,
    #[serde(rename = "kl")]
    KLDivergence,
    #[serde(rename = "kl_speed")]
    KLSpeed,
}

impl ObservableKind {
    pub const ALL: [ObservableKind; 6] = [
        ObservableKind::GroundPop,
        ObservableKind::Energy,
        ObservableKind::Entropy,
        ObservableKind::Temperature,
        ObservableKind::KLDivergence,
        ObservableKind::KLSpeed,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ObservableKind::GroundPop => "gg",
            ObservableKind::Energy => "energy",
            ObservableKind::Entropy => "entropy",
            ObservableKind::Temperature => "temperature",
            ObservableKind::KLDivergence => "kl",
            ObservableKind::KLSpeed => "kl_speed",
        }
    }
}

/// Rate selector for [`observable_rate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateKind {
    Energy,
    Entropy,
}

/// Eigenvalues of the reconstructed 2x2 density matrix,
/// p_± = tr/2 ± sqrt((rho_ee - rho_gg)^2 / 4 + |rho_eg|^2), larger first.
fn eigenvalues2(rho: &DensityVector) -> (f64, f64) {
    let ee = rho.rho_ee.re;
    let gg = rho.rho_gg.re;
    let tr = ee + gg;
    let split = ((ee - gg) * (ee - gg) / 4.0 + rho.rho_eg.norm_sqr()).sqrt();
    (tr / 2.0 + split, tr / 2.0 - split)
}

/// Eigenvalues together with orthonormal eigenvectors (in the (e, g) basis).
fn eigensystem2(rho: &DensityVector) -> [(f64, [C64; 2]); 2] {
    let ee = rho.rho_ee.re;
    let gg = rho.rho_gg.re;
    let b = rho.rho_eg;
    let (p_hi, p_lo) = eigenvalues2(rho);
    if b.norm() < 1e-15 * (1.0 + ee.abs() + gg.abs()) {
        // Diagonal state: eigenvectors are the basis states.
        let (e_vec, g_vec) = ([C64::new(1.0, 0.0), C64::new(0.0, 0.0)], [C64::new(0.0, 0.0), C64::new(1.0, 0.0)]);
        return if ee >= gg {
            [(p_hi, e_vec), (p_lo, g_vec)]
        } else {
            [(p_hi, g_vec), (p_lo, e_vec)]
        };
    }
    let mut out = [(0.0, [C64::new(0.0, 0.0); 2]); 2];
    for (slot, p) in [(0usize, p_hi), (1usize, p_lo)] {
        let v0 = b;
        let v1 = C64::new(p - ee, 0.0);
        let norm = (v0.norm_sqr() + v1.norm_sqr()).sqrt();
        out[slot] = (p, [v0 / norm, v1 / norm]);
    }
    out
}

/// Average energy 1 - rho_gg + d * rho_re, i.e. Tr[rho H] for the post-quench
/// two-level Hamiltonian with unit gap and drive coupling d/2 on the
/// off-diagonal.
pub fn energy(rho: &DensityVector, p: ControlParams) -> f64 {
    1.0 - rho.rho_gg.re + p.d_tilde * rho.rho_eg.re
}

/// Von Neumann entropy -p+ ln p+ - p- ln p-, clamped into [0, ln 2] up to
/// the stated tolerance; 0 ln 0 reads as 0.
pub fn entropy(rho: &DensityVector) -> f64 {
    let (p_hi, p_lo) = eigenvalues2(rho);
    let mut s = 0.0;
    for p in [p_hi, p_lo] {
        debug_assert!(p >= -1e-10, "entropy of a non-physical state (p = {p})");
        let p = p.clamp(0.0, 1.0);
        if p > 0.0 {
            s -= p * p.ln();
        }
    }
    s
}

fn rho_dot(rho: &DensityVector, p: ControlParams) -> DensityVector {
    let v = build_lindbladian(p) * rho.as_vector();
    DensityVector::from_vector(&(v * C64::new(0.0, -1.0)))
}

/// Tr[X ln rho] for Hermitian-ish vectorized X, evaluated in the eigenbasis
/// of rho. Errors when an eigenvalue of rho sits below the logarithm floor.
fn trace_against_log(x: &DensityVector, rho: &DensityVector) -> Result<f64, Error> {
    let eig = eigensystem2(rho);
    let mut acc = 0.0;
    for (p, v) in eig {
        if p < LOG_EIGENVALUE_FLOOR {
            return Err(Error::DegenerateState(format!(
                "density-matrix eigenvalue {p:.3e} below the logarithm floor"
            )));
        }
        // <v| X |v> with X = [[x_ee, x_eg], [x_ge, x_gg]].
        let xv0 = x.rho_ee * v[0] + x.rho_eg * v[1];
        let xv1 = x.rho_ge * v[0] + x.rho_gg * v[1];
        let expect = (v[0].conj() * xv0 + v[1].conj() * xv1).re;
        acc += p.ln() * expect;
    }
    Ok(acc)
}

/// Exact observable rates from rho_dot = -i L rho.
///
/// Energy: -d(rho_gg)/dt + d * d(rho_re)/dt. Entropy: -Tr[rho_dot ln rho],
/// valid because Tr rho_dot = 0; errors on (near-)pure states where ln rho
/// is unbounded.
pub fn observable_rate(rho: &DensityVector, p: ControlParams, kind: RateKind) -> Result<f64, Error> {
    let dot = rho_dot(rho, p);
    match kind {
        RateKind::Energy => Ok(-dot.rho_gg.re + p.d_tilde * dot.rho_eg.re),
        RateKind::Entropy => Ok(-trace_against_log(&dot, rho)?),
    }
}

/// Temperature dE/dS as the ratio of the two rates. `None` is the undefined
/// sentinel: the entropy rate is below threshold (or a rate is unavailable),
/// which happens at genuine singular points of the curve. Negative values
/// are legitimate.
pub fn temperature(rho: &DensityVector, p: ControlParams) -> Option<f64> {
    let e_rate = observable_rate(rho, p, RateKind::Energy).ok()?;
    let s_rate = observable_rate(rho, p, RateKind::Entropy).ok()?;
    if s_rate.abs() < TEMPERATURE_SENTINEL_REL * e_rate.abs().max(1.0) {
        return None;
    }
    Some(e_rate / s_rate)
}

/// Quantum relative entropy Tr[rho (ln rho - ln rho_ss)] >= 0. Weight of
/// `rho` outside the support of `rho_ss` is a support violation reported as
/// +infinity.
pub fn kl_divergence(rho: &DensityVector, rho_ss: &DensityVector) -> f64 {
    let rho_eig = eigensystem2(rho);
    let ss_eig = eigensystem2(rho_ss);
    let mut acc = 0.0;
    // Tr[rho ln rho]
    for (p, _) in rho_eig {
        let p = p.clamp(0.0, 1.0);
        if p > 0.0 {
            acc += p * p.ln();
        }
    }
    // -Tr[rho ln rho_ss] = -sum_i ln(q_i) <w_i| rho |w_i>
    for (q, w) in ss_eig {
        let rv0 = rho.rho_ee * w[0] + rho.rho_eg * w[1];
        let rv1 = rho.rho_ge * w[0] + rho.rho_gg * w[1];
        let weight = (w[0].conj() * rv0 + w[1].conj() * rv1).re;
        if q < LOG_EIGENVALUE_FLOOR {
            if weight > LOG_EIGENVALUE_FLOOR {
                return f64::INFINITY;
            }
            continue;
        }
        acc -= q.ln() * weight;
    }
    // Clamp the tiny negative residue of rho == rho_ss.
    acc.max(0.0)
}

/// Relaxation speed -d/dt of the KL distance: -Tr[rho_dot (ln rho - ln rho_ss)]
/// (the Tr rho_dot term vanishes identically).
pub fn kl_speed(rho: &DensityVector, p: ControlParams, rho_ss: &DensityVector) -> Result<f64, Error> {
    let dot = rho_dot(rho, p);
    let against_rho = trace_against_log(&dot, rho)?;
    let against_ss = trace_against_log(&dot, rho_ss)?;
    Ok(-(against_rho - against_ss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::Propagator;
    use crate::lindblad::{initial_condition, steady_state};
    use crate::spectrum::region_d_gamma;
    use approx::assert_abs_diff_eq;

    fn params(d: f64, g: f64) -> ControlParams {
        ControlParams::new(d, g).unwrap()
    }

    fn ground() -> DensityVector {
        DensityVector::from_parts(crate::lindblad::CoherenceParts { rho_re: 0.0, rho_im: 0.0 }, 0.0, 1.0)
    }

    fn mixed() -> DensityVector {
        DensityVector::from_parts(crate::lindblad::CoherenceParts { rho_re: 0.0, rho_im: 0.0 }, 0.5, 0.5)
    }

    #[test]
    fn ground_state_observables() {
        assert_eq!(energy(&ground(), params(7.3, 1.0)), 0.0);
        assert_eq!(entropy(&ground()), 0.0);
        assert_abs_diff_eq!(entropy(&mixed()), std::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn energy_matches_hamiltonian_trace() {
        // Tr[rho H] with H = [[1, d/2], [d/2, 0]] for a state with coherence.
        let p = params(3.0, 2.0);
        let rho = initial_condition(params(1.4, 0.9));
        let tr = rho.rho_ee.re * 1.0
            + (rho.rho_eg * C64::new(p.d_tilde / 2.0, 0.0)).re
            + (rho.rho_ge * C64::new(p.d_tilde / 2.0, 0.0)).re;
        assert_abs_diff_eq!(energy(&rho, p), tr, epsilon = 1e-12);
    }

    #[test]
    fn energy_of_closed_system_steady_state() {
        let rho = steady_state(params(2.0, 0.0));
        assert_abs_diff_eq!(energy(&rho, params(2.0, 0.0)), -1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn rates_vanish_at_the_fixed_point() {
        let p = params(4.0, region_d_gamma(4.0).unwrap());
        let ss = steady_state(p);
        assert!(observable_rate(&ss, p, RateKind::Energy).unwrap().abs() <= 1e-12);
        assert!(observable_rate(&ss, p, RateKind::Entropy).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn rates_match_central_differences() {
        let post = params(2.5, 0.5);
        let prop = Propagator::new(post);
        let rho0 = initial_condition(params(2.1, 0.5));
        let h = 1e-5;
        for t in [0.2, 0.9, 2.7] {
            let rho = prop.propagate(&rho0, t).unwrap();
            let fwd = prop.propagate(&rho0, t + h).unwrap();
            let bwd = prop.propagate(&rho0, t - h).unwrap();

            let e_rate = observable_rate(&rho, post, RateKind::Energy).unwrap();
            let e_fd = (energy(&fwd, post) - energy(&bwd, post)) / (2.0 * h);
            assert_abs_diff_eq!(e_rate, e_fd, epsilon = 1e-7);

            let s_rate = observable_rate(&rho, post, RateKind::Entropy).unwrap();
            let s_fd = (entropy(&fwd) - entropy(&bwd)) / (2.0 * h);
            assert_abs_diff_eq!(s_rate, s_fd, epsilon = 1e-7);
        }
    }

    #[test]
    fn temperature_sentinel_on_flat_entropy() {
        let p = params(4.0, region_d_gamma(4.0).unwrap());
        assert_eq!(temperature(&steady_state(p), p), None);
    }

    #[test]
    fn entropy_rate_errors_on_pure_states() {
        let p = params(1.0, 1.0);
        assert!(observable_rate(&ground(), p, RateKind::Entropy).is_err());
    }

    #[test]
    fn kl_basics() {
        let p = params(4.0, 18.0);
        let ss = steady_state(p);
        assert!(kl_divergence(&ss, &ss) <= 1e-12);
        // Pure ground state against the maximally mixed state: ln 2.
        assert_abs_diff_eq!(kl_divergence(&ground(), &mixed()), std::f64::consts::LN_2, epsilon = 1e-12);
        // Support violation: any weight outside a pure reference diverges.
        assert_eq!(kl_divergence(&mixed(), &ground()), f64::INFINITY);
        assert!(kl_speed(&ss, p, &ss).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn kl_speed_matches_central_differences() {
        let post = params(2.5, 0.5);
        let prop = Propagator::new(post);
        let ss = steady_state(post);
        let rho0 = initial_condition(params(1.0, 0.5));
        let h = 1e-5;
        for t in [0.5, 1.5, 4.0] {
            let rho = prop.propagate(&rho0, t).unwrap();
            let fwd = prop.propagate(&rho0, t + h).unwrap();
            let bwd = prop.propagate(&rho0, t - h).unwrap();
            let v = kl_speed(&rho, post, &ss).unwrap();
            let v_fd = -(kl_divergence(&fwd, &ss) - kl_divergence(&bwd, &ss)) / (2.0 * h);
            assert_abs_diff_eq!(v, v_fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn kl_is_monotone_along_trajectories() {
        for (post, pre) in [
            (params(2.5, 0.5), params(2.1, 0.5)),
            (params(4.0, region_d_gamma(4.0).unwrap()), params(10.0, 15.0)),
        ] {
            let prop = Propagator::new(post);
            let ss = steady_state(post);
            let horizon = crate::evolution::default_horizon(prop.spectral_data());
            let traj = prop.trajectory(&initial_condition(pre), horizon, 500).unwrap();
            let mut prev = f64::INFINITY;
            for state in &traj.states {
                let d = kl_divergence(state, &ss);
                assert!(d <= prev + 1e-10, "KL increased: {prev} -> {d}");
                prev = d;
            }
        }
    }

    #[test]
    fn temperature_ratio_matches_differenced_curves() {
        let post = params(2.5, 0.5);
        let prop = Propagator::new(post);
        let rho0 = initial_condition(params(2.1, 0.5));
        let h = 1e-5;
        for t in [0.4, 1.1, 3.0] {
            let rho = prop.propagate(&rho0, t).unwrap();
            if let Some(temp) = temperature(&rho, post) {
                let fwd = prop.propagate(&rho0, t + h).unwrap();
                let bwd = prop.propagate(&rho0, t - h).unwrap();
                let de = (energy(&fwd, post) - energy(&bwd, post)) / (2.0 * h);
                let ds = (entropy(&fwd) - entropy(&bwd)) / (2.0 * h);
                let ratio = de / ds;
                assert!(
                    (temp - ratio).abs() <= 1e-6 * ratio.abs().max(1.0),
                    "temperature {temp} vs differenced ratio {ratio} at t = {t}"
                );
            }
        }
    }
}
