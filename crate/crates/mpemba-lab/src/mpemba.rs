//! Crossing detection and classification for pairs of relaxation
//! trajectories: closed-form intersection times where the difference of an
//! observable reduces to exponential-plus-polynomial brackets (second- and
//! third-order exceptional points, the equal-gap line), the
//! necessary-and-sufficient oscillatory-region criterion, and a generic
//! grid-plus-bisection finder for everything else.
//!
//! A crossing at time t > 0 is a strict sign change of
//! Delta(t) = obs_I(t) - obs_II(t); an even total count means the copies'
//! initial ordering is restored after the last crossing, an odd count means
//! it is reversed.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::evolution::{mode_coefficients, ModeCoefficients, Propagator};
use crate::lambertw::{branch_point, lambert_w, WBranch};
use crate::lindblad::{steady_state, DensityVector, QuenchExperiment};
use crate::observables::{energy, entropy, kl_divergence, kl_speed, temperature, ObservableKind};
use crate::spectrum::{RegionTag, SpectralData};

const I: C64 = C64::new(0.0, 1.0);

/// Crossings closer to t = 0 than this (relative to the horizon or gap
/// scale) are treated as the excluded t = 0 contact.
const T_MIN_REL: f64 = 1e-12;

/// Difference level below which the two copies are indistinguishable.
const DEGENERATE_LEVEL: f64 = 1e-13;

/// Grid-doubling cap of the crossing finder.
const MAX_GRID_POINTS: usize = 1 << 16;

/// Crossing count bucketed the way the analysis reads: none, one (final
/// reversal), two (identities restored), or more.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    None,
    Single,
    Double,
    Multiple(usize),
}

impl Classification {
    pub fn from_count(n: usize) -> Self {
        match n {
            0 => Classification::None,
            1 => Classification::Single,
            2 => Classification::Double,
            n => Classification::Multiple(n),
        }
    }

    pub fn count(&self) -> usize {
        match self {
            Classification::None => 0,
            Classification::Single => 1,
            Classification::Double => 2,
            Classification::Multiple(n) => *n,
        }
    }
}

/// Whether the copies' initial identities survive all crossings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parity {
    EvenRestored,
    OddReversed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrossingMethod {
    ClosedForm,
    GridOracle,
}

/// One detected crossing. `flagged` marks temperature crossings inside a
/// negative-temperature or sentinel-adjacent epoch, where the reversal may
/// not be well defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub time: f64,
    pub flagged: bool,
}

/// Ordered crossing times with their classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpembaReport {
    pub crossings: Vec<Crossing>,
    pub classification: Classification,
    pub method: CrossingMethod,
    pub parity: Parity,
    /// Set when the observable difference never rises above the
    /// indistinguishability level anywhere on the grid.
    pub degenerate: bool,
}

impl MpembaReport {
    fn from_times(mut times: Vec<f64>, method: CrossingMethod) -> Self {
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let crossings = times.into_iter().map(|time| Crossing { time, flagged: false }).collect();
        Self::from_crossings(crossings, method, false)
    }

    fn from_crossings(crossings: Vec<Crossing>, method: CrossingMethod, degenerate: bool) -> Self {
        let n = crossings.len();
        MpembaReport {
            crossings,
            classification: Classification::from_count(n),
            method,
            parity: if n % 2 == 0 { Parity::EvenRestored } else { Parity::OddReversed },
            degenerate,
        }
    }

    pub fn times(&self) -> Vec<f64> {
        self.crossings.iter().map(|c| c.time).collect()
    }
}

/// Region-resolved coefficients of the observable difference between the
/// two copies of a quench experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaCoefficients {
    pub region: RegionTag,
    pub kind: ObservableKind,
    pub values: DeltaValues,
}

/// The closed-form shape of Delta(t) per region. All coefficients are real
/// for physical initial states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DeltaValues {
    /// Delta(t) = sign * e^{-l2 t} (c1 e^{-(l4 - l2) t} + c2 t + c3); the
    /// linear term is the defect contribution of the degenerate pair.
    /// `sign` is +1 for the ground population and -1 for the energy, so
    /// (c1, c2, c3) are the conventionally named coefficient triples.
    SecondOrderEp { c1: f64, c2: f64, c3: f64, sign: f64, lambda2: f64, lambda4: f64 },
    /// Delta(t) = e^{-l2 t} (alpha4 x^m + alpha3 x + alpha2) with
    /// x = e^{-(l3 - l2) t} and gap ratio m = (l4 - l3)/(l3 - l2); a
    /// quadratic in x exactly on the equal-gap line m = 2.
    EqualGapLine {
        alpha2: f64,
        alpha3: f64,
        alpha4: f64,
        gap_ratio: f64,
        lambda2: f64,
        lambda3: f64,
        lambda4: f64,
    },
    /// Delta(t) = e^{-lambda t} (gamma2 t^2 + gamma1 t + gamma0) at the
    /// third-order point.
    ThirdOrderEp { gamma0: f64, gamma1: f64, gamma2: f64, lambda: f64 },
    /// Delta(t) = 2 e^{-l2 t} hypot(d_re, d_im) *
    ///   [ d2 / (2 hypot) + e^{-(l_re - l2) t} cos(l_im t - theta) ].
    Oscillatory {
        delta_a2: f64,
        delta_a_re: f64,
        delta_a_im: f64,
        theta: f64,
        lambda2: f64,
        lambda_re: f64,
        lambda_im: f64,
    },
}

impl DeltaCoefficients {
    /// Evaluates the closed-form difference at time `t`.
    pub fn evaluate(&self, t: f64) -> f64 {
        match self.values {
            DeltaValues::SecondOrderEp { c1, c2, c3, sign, lambda2, lambda4 } => {
                sign * (-lambda2 * t).exp() * (c1 * (-(lambda4 - lambda2) * t).exp() + c2 * t + c3)
            }
            DeltaValues::EqualGapLine { alpha2, alpha3, alpha4, gap_ratio, lambda2, lambda3, .. } => {
                let x = (-(lambda3 - lambda2) * t).exp();
                (-lambda2 * t).exp() * (alpha4 * x.powf(gap_ratio) + alpha3 * x + alpha2)
            }
            DeltaValues::ThirdOrderEp { gamma0, gamma1, gamma2, lambda } => {
                (-lambda * t).exp() * ((gamma2 * t + gamma1) * t + gamma0)
            }
            DeltaValues::Oscillatory {
                delta_a2,
                delta_a_re,
                delta_a_im,
                theta,
                lambda2,
                lambda_re,
                lambda_im,
            } => {
                let hyp = delta_a_re.hypot(delta_a_im);
                (-lambda2 * t).exp()
                    * (delta_a2
                        + 2.0 * hyp * (-(lambda_re - lambda2) * t).exp() * (lambda_im * t - theta).cos())
            }
        }
    }

    /// Labeled quadratic roots (t_plus, t_minus) of the third-order-point
    /// form, before positivity filtering. The labels trade places when the
    /// copies are swapped, because every coefficient changes sign while the
    /// discriminant root does not.
    pub fn third_order_branches(&self) -> Result<(f64, f64), Error> {
        match self.values {
            DeltaValues::ThirdOrderEp { gamma0, gamma1, gamma2, .. } => {
                let disc = gamma1 * gamma1 - 4.0 * gamma2 * gamma0;
                if disc < 0.0 || gamma2 == 0.0 {
                    return Err(Error::Domain(
                        "quadratic has no real branch pair here".into(),
                    ));
                }
                let root = disc.sqrt();
                Ok(((-gamma1 + root) / (2.0 * gamma2), (-gamma1 - root) / (2.0 * gamma2)))
            }
            _ => Err(Error::Domain("not third-order-point coefficients".into())),
        }
    }
}

fn weight_row(kind: ObservableKind, d_tilde: f64) -> Result<nalgebra::RowVector4<C64>, Error> {
    // Observable = const + W . rho; the constant cancels in differences.
    match kind {
        ObservableKind::GroundPop => Ok(nalgebra::RowVector4::new(
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(1.0, 0.0),
        )),
        ObservableKind::Energy => Ok(nalgebra::RowVector4::new(
            C64::new(d_tilde / 2.0, 0.0),
            C64::new(d_tilde / 2.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(-1.0, 0.0),
        )),
        other => Err(Error::Domain(format!(
            "closed-form difference coefficients exist for the ground population and energy only, not {other:?}"
        ))),
    }
}

fn assert_real(z: C64, what: &str) -> f64 {
    debug_assert!(
        z.im.abs() <= 1e-9 * z.re.abs().max(1.0),
        "{what} acquired an imaginary part: {z}"
    );
    z.re
}

/// Coefficients of the closed-form observable difference for the experiment,
/// computed from the mode amplitudes of both copies. Supported for the
/// linear observables (ground population, energy) in regions D, B, E and
/// A1/A2; region C has no closed-form table and uses the grid oracle.
pub fn delta_coefficients(
    exp: &QuenchExperiment,
    kind: ObservableKind,
) -> Result<DeltaCoefficients, Error> {
    let spec = crate::spectrum::eigensystem(exp.post);
    delta_coefficients_with(exp, kind, &spec)
}

/// As [`delta_coefficients`], reusing an existing decomposition.
pub fn delta_coefficients_with(
    exp: &QuenchExperiment,
    kind: ObservableKind,
    spec: &SpectralData,
) -> Result<DeltaCoefficients, Error> {
    let w_row = weight_row(kind, exp.post.d_tilde)?;
    let (rho_i, rho_ii) = exp.initial_pair();
    let a_i = mode_coefficients(&rho_i, spec);
    let a_ii = mode_coefficients(&rho_ii, spec);
    let da: [C64; 4] = std::array::from_fn(|k| a_i.a[k] - a_ii.a[k]);
    let w: [C64; 4] = std::array::from_fn(|k| (w_row * spec.right_vectors.column(k))[0]);
    let kind_sign = match kind {
        ObservableKind::GroundPop => 1.0,
        _ => -1.0,
    };

    let values = match spec.region {
        RegionTag::D => {
            let c1 = assert_real(w[3] * da[3], "exponential coefficient");
            let c2 = assert_real(-I * w[1] * da[2], "defect coefficient");
            let c3 = assert_real(w[1] * da[1] + w[2] * da[2], "constant coefficient");
            DeltaValues::SecondOrderEp {
                c1: kind_sign * c1,
                c2: kind_sign * c2,
                c3: kind_sign * c3,
                sign: kind_sign,
                lambda2: spec.lambdas[1].re,
                lambda4: spec.lambdas[3].re,
            }
        }
        RegionTag::B => {
            let (l2, l3, l4) = (spec.lambdas[1].re, spec.lambdas[2].re, spec.lambdas[3].re);
            DeltaValues::EqualGapLine {
                alpha2: assert_real(w[1] * da[1], "slow coefficient"),
                alpha3: assert_real(w[2] * da[2], "middle coefficient"),
                alpha4: assert_real(w[3] * da[3], "fast coefficient"),
                gap_ratio: (l4 - l3) / (l3 - l2),
                lambda2: l2,
                lambda3: l3,
                lambda4: l4,
            }
        }
        RegionTag::E => DeltaValues::ThirdOrderEp {
            gamma0: assert_real(w[1] * da[1] + w[2] * da[2] + w[3] * da[3], "constant coefficient"),
            gamma1: assert_real(-I * (w[1] * da[2] + w[2] * da[3]), "linear coefficient"),
            gamma2: assert_real(-w[1] * da[3] / C64::new(2.0, 0.0), "quadratic coefficient"),
            lambda: spec.lambdas[1].re,
        },
        RegionTag::A1 | RegionTag::A2 => {
            let pair = w[2] * da[2];
            DeltaValues::Oscillatory {
                delta_a2: assert_real(w[1] * da[1], "slow coefficient"),
                delta_a_re: pair.re,
                delta_a_im: pair.im,
                theta: pair.im.atan2(pair.re),
                lambda2: spec.lambdas[1].re,
                lambda_re: spec.lambdas[2].re,
                lambda_im: spec.lambdas[2].im,
            }
        }
        RegionTag::C => {
            return Err(Error::WrongRegion {
                required: "regions D, B, E or A1/A2 (region C has no closed-form table)".into(),
                found: RegionTag::C,
            })
        }
    };
    Ok(DeltaCoefficients { region: spec.region, kind, values })
}

/// Branch-labeled roots of c1 e^{-gap t} + c2 t + c3 = 0 with t > 0: the
/// principal-branch candidate first, the lower-branch candidate second.
/// Degenerate coefficient cases have one root at most, reported in the
/// first slot.
fn exp_linear_branch_roots(c1: f64, c2: f64, c3: f64, gap: f64) -> (Option<f64>, Option<f64>) {
    let scale = c1.abs().max(c2.abs()).max(c3.abs());
    if scale == 0.0 {
        return (None, None);
    }
    let t_min = T_MIN_REL;
    let admit = |t: f64| (t > t_min && t.is_finite()).then_some(t);
    if c2.abs() <= 1e-14 * scale {
        // Pure exponential against a constant.
        if c1.abs() > 1e-14 * scale {
            let ratio = -c3 / c1;
            if ratio > 0.0 {
                return (admit(-ratio.ln() / gap), None);
            }
        }
        return (None, None);
    }
    if c1.abs() <= 1e-14 * scale {
        return (admit(-c3 / c2), None);
    }
    let r1 = c1 / c2;
    let r3 = c3 / c2;
    // W argument x = -gap * r1 * e^{gap * r3}, assembled in log space to
    // survive large exponents.
    let log_mag = gap.ln() + r1.abs().ln() + gap * r3;
    if r1 < 0.0 {
        // Positive argument: only the principal branch.
        let w = if log_mag <= 700.0 {
            lambert_w(WBranch::W0, (log_mag).exp()).expect("positive argument is in-domain")
        } else {
            // Asymptotic form for arguments beyond double range.
            log_mag - log_mag.ln() + log_mag.ln() / log_mag
        };
        (admit(w / gap - r3), None)
    } else if log_mag <= 0.0 {
        // Negative argument; both branches live on [-1/e, 0).
        let x = -log_mag.exp();
        if x < branch_point() {
            return (None, None);
        }
        let t0 = lambert_w(WBranch::W0, x).ok().and_then(|w| admit(w / gap - r3));
        let tm1 = lambert_w(WBranch::Wm1, x).ok().and_then(|w| admit(w / gap - r3));
        // A tangential contact yields the same time on both branches.
        match (t0, tm1) {
            (Some(a), Some(b)) if (a - b).abs() <= 1e-9 * a.abs().max(1.0) => (Some(a), None),
            other => other,
        }
    } else {
        (None, None)
    }
}

/// Admitted branch-labeled crossing times on the slower-pair exceptional
/// line: (principal-branch time, lower-branch time).
pub fn second_order_branch_roots(c: &DeltaCoefficients) -> Result<(Option<f64>, Option<f64>), Error> {
    match c.values {
        DeltaValues::SecondOrderEp { c1, c2, c3, lambda2, lambda4, .. } => {
            let gap = lambda4 - lambda2;
            if gap < 1e-12 {
                return Err(Error::DegenerateGap(format!(
                    "lambda4 - lambda2 = {gap:.3e} is too small for the exponential-plus-linear form"
                )));
            }
            Ok(exp_linear_branch_roots(c1, c2, c3, gap))
        }
        _ => Err(Error::WrongRegion { required: "region D coefficients".into(), found: c.region }),
    }
}

fn exp_linear_roots(c1: f64, c2: f64, c3: f64, gap: f64) -> Vec<f64> {
    let (a, b) = exp_linear_branch_roots(c1, c2, c3, gap);
    let mut out: Vec<f64> = [a, b].into_iter().flatten().collect();
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

/// Closed-form crossing times on the slower-pair exceptional line. Each
/// Lambert branch contributes a candidate; a candidate is admitted iff the
/// argument is in-branch and the time is real and strictly positive.
pub fn crossing_times_region_d(c: &DeltaCoefficients) -> Result<MpembaReport, Error> {
    match c.values {
        DeltaValues::SecondOrderEp { c1, c2, c3, lambda2, lambda4, .. } => {
            let gap = lambda4 - lambda2;
            if gap < 1e-12 {
                return Err(Error::DegenerateGap(format!(
                    "lambda4 - lambda2 = {gap:.3e} is too small for the exponential-plus-linear form"
                )));
            }
            Ok(MpembaReport::from_times(
                exp_linear_roots(c1, c2, c3, gap),
                CrossingMethod::ClosedForm,
            ))
        }
        _ => Err(Error::WrongRegion { required: "region D coefficients".into(), found: c.region }),
    }
}

/// Closed-form crossing times on the equal-gap line: the quadratic
/// alpha4 x^2 + alpha3 x + alpha2 with x = e^{-(l3-l2) t}; a root is
/// admitted iff x lies strictly inside (0, 1).
pub fn crossing_times_region_b(c: &DeltaCoefficients) -> Result<MpembaReport, Error> {
    match c.values {
        DeltaValues::EqualGapLine { alpha2, alpha3, alpha4, lambda2, lambda3, lambda4, .. } => {
            let lower = lambda3 - lambda2;
            let defect = (lambda4 - lambda3) - lower;
            if defect.abs() > 1e-9 * lower.abs().max(1.0) {
                return Err(Error::OffGapLine(format!(
                    "gap defect {defect:.3e}; the quadratic form needs equal gaps"
                )));
            }
            let scale = alpha2.abs().max(alpha3.abs()).max(alpha4.abs());
            let mut xs: Vec<f64> = Vec::new();
            if scale > 0.0 {
                if alpha4.abs() <= 1e-14 * scale {
                    if alpha3.abs() > 1e-14 * scale {
                        xs.push(-alpha2 / alpha3);
                    }
                } else {
                    let disc = alpha3 * alpha3 - 4.0 * alpha4 * alpha2;
                    if disc >= 0.0 {
                        // Stable quadratic: compute the large root first.
                        let q = -(alpha3 + alpha3.signum() * disc.sqrt()) / 2.0;
                        if q != 0.0 {
                            xs.push(q / alpha4);
                            xs.push(alpha2 / q);
                        } else {
                            xs.push(0.0);
                        }
                    }
                }
            }
            let times = xs
                .into_iter()
                .filter(|&x| x > 0.0 && x < 1.0)
                .map(|x| -x.ln() / lower)
                .collect();
            Ok(MpembaReport::from_times(times, CrossingMethod::ClosedForm))
        }
        _ => Err(Error::WrongRegion {
            required: "equal-gap-line coefficients".into(),
            found: c.region,
        }),
    }
}

/// Closed-form crossing times at the third-order point: real positive roots
/// of the quadratic in t.
pub fn crossing_times_region_e(c: &DeltaCoefficients) -> Result<MpembaReport, Error> {
    match c.values {
        DeltaValues::ThirdOrderEp { gamma0, gamma1, gamma2, .. } => {
            let scale = gamma0.abs().max(gamma1.abs()).max(gamma2.abs());
            let mut times: Vec<f64> = Vec::new();
            if scale > 0.0 {
                if gamma2.abs() <= 1e-14 * scale {
                    if gamma1.abs() > 1e-14 * scale {
                        times.push(-gamma0 / gamma1);
                    }
                } else {
                    let disc = gamma1 * gamma1 - 4.0 * gamma2 * gamma0;
                    if disc >= 0.0 {
                        let q = -(gamma1 + gamma1.signum() * disc.sqrt()) / 2.0;
                        if q != 0.0 {
                            times.push(q / gamma2);
                            times.push(gamma0 / q);
                        } else {
                            times.push(0.0);
                        }
                    }
                }
            }
            times.retain(|&t| t > T_MIN_REL && t.is_finite());
            Ok(MpembaReport::from_times(times, CrossingMethod::ClosedForm))
        }
        _ => Err(Error::WrongRegion {
            required: "third-order-point coefficients".into(),
            found: c.region,
        }),
    }
}

/// Admitted branch-labeled crossing times on the equal-gap line, from the
/// quadratic roots x_plus and x_minus.
pub fn equal_gap_branch_roots(c: &DeltaCoefficients) -> Result<(Option<f64>, Option<f64>), Error> {
    match c.values {
        DeltaValues::EqualGapLine { alpha2, alpha3, alpha4, lambda2, lambda3, .. } => {
            let lower = lambda3 - lambda2;
            let scale = alpha2.abs().max(alpha3.abs()).max(alpha4.abs());
            if scale == 0.0 || alpha4.abs() <= 1e-14 * scale {
                let x = (alpha3.abs() > 1e-14 * scale.max(1e-300)).then(|| -alpha2 / alpha3);
                let t = x
                    .filter(|&x| x > 0.0 && x < 1.0)
                    .map(|x| -x.ln() / lower);
                return Ok((t, None));
            }
            let disc = alpha3 * alpha3 - 4.0 * alpha4 * alpha2;
            if disc < 0.0 {
                return Ok((None, None));
            }
            let root = disc.sqrt();
            let admit = |x: f64| (x > 0.0 && x < 1.0).then(|| -x.ln() / lower);
            Ok((
                admit((-alpha3 + root) / (2.0 * alpha4)),
                admit((-alpha3 - root) / (2.0 * alpha4)),
            ))
        }
        _ => Err(Error::WrongRegion {
            required: "equal-gap-line coefficients".into(),
            found: c.region,
        }),
    }
}

/// Admitted branch-labeled crossing times at the third-order point.
pub fn third_order_branch_roots(c: &DeltaCoefficients) -> Result<(Option<f64>, Option<f64>), Error> {
    match c.values {
        DeltaValues::ThirdOrderEp { gamma0, gamma1, gamma2, .. } => {
            let scale = gamma0.abs().max(gamma1.abs()).max(gamma2.abs());
            let admit = |t: f64| (t > T_MIN_REL && t.is_finite()).then_some(t);
            if scale == 0.0 {
                return Ok((None, None));
            }
            if gamma2.abs() <= 1e-14 * scale {
                let t = (gamma1.abs() > 1e-14 * scale).then(|| -gamma0 / gamma1).and_then(admit);
                return Ok((t, None));
            }
            let disc = gamma1 * gamma1 - 4.0 * gamma2 * gamma0;
            if disc < 0.0 {
                return Ok((None, None));
            }
            let root = disc.sqrt();
            Ok((
                admit((-gamma1 + root) / (2.0 * gamma2)),
                admit((-gamma1 - root) / (2.0 * gamma2)),
            ))
        }
        _ => Err(Error::WrongRegion {
            required: "third-order-point coefficients".into(),
            found: c.region,
        }),
    }
}

/// Closed-form dispatcher: picks the regional crossing solver the
/// post-quench point admits.
pub fn crossing_times_closed_form(c: &DeltaCoefficients) -> Result<MpembaReport, Error> {
    match c.values {
        DeltaValues::SecondOrderEp { .. } => crossing_times_region_d(c),
        DeltaValues::EqualGapLine { .. } => crossing_times_region_b(c),
        DeltaValues::ThirdOrderEp { .. } => crossing_times_region_e(c),
        DeltaValues::Oscillatory { .. } => Err(Error::WrongRegion {
            required: "regions D, B or E (oscillatory regions have a criterion, not closed-form times)"
                .into(),
            found: c.region,
        }),
    }
}

/// Necessary-and-sufficient crossing criterion in the oscillatory regions:
/// the normalized slow amplitude must lie strictly between the global
/// minimum and maximum of the damped cosine e^{-(l_re - l2) t} cos(l_im t - theta)
/// over t >= 0. The required opposite-sign relation between the slow
/// amplitude and the cosine factor holds automatically at any admitted
/// crossing because the envelope is positive.
pub fn region_a1_criterion(c: &DeltaCoefficients) -> Result<bool, Error> {
    match c.values {
        DeltaValues::Oscillatory {
            delta_a2,
            delta_a_re,
            delta_a_im,
            theta,
            lambda2,
            lambda_re,
            lambda_im,
        } => {
            let hyp = delta_a_re.hypot(delta_a_im);
            if hyp == 0.0 {
                // Equal pair amplitudes: no oscillatory part to cross with.
                return Ok(false);
            }
            if lambda_im == 0.0 {
                return Err(Error::Domain(
                    "criterion needs a complex pair (lambda_im != 0)".into(),
                ));
            }
            let ratio = delta_a2 / (2.0 * hyp);
            let decay = lambda_re - lambda2;
            let f = |t: f64| (-decay * t).exp() * (lambda_im * t - theta).cos();
            // Sample ten oscillation periods, then polish each bracketed
            // extremum by ternary search.
            let span = 10.0 * 2.0 * std::f64::consts::PI / lambda_im.abs();
            let n = 10_000;
            let h = span / n as f64;
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            let mut samples = Vec::with_capacity(n + 1);
            for i in 0..=n {
                let v = f(i as f64 * h);
                samples.push(v);
                min = min.min(v);
                max = max.max(v);
            }
            let polish = |a: f64, b: f64, maximize: bool| -> f64 {
                let (mut lo, mut hi) = (a, b);
                for _ in 0..100 {
                    let m1 = lo + (hi - lo) / 3.0;
                    let m2 = hi - (hi - lo) / 3.0;
                    let keep_left = if maximize { f(m1) > f(m2) } else { f(m1) < f(m2) };
                    if keep_left {
                        hi = m2;
                    } else {
                        lo = m1;
                    }
                }
                f(0.5 * (lo + hi))
            };
            for i in 1..n {
                if samples[i] < samples[i - 1] && samples[i] < samples[i + 1] {
                    min = min.min(polish((i - 1) as f64 * h, (i + 1) as f64 * h, false));
                }
                if samples[i] > samples[i - 1] && samples[i] > samples[i + 1] {
                    max = max.max(polish((i - 1) as f64 * h, (i + 1) as f64 * h, true));
                }
            }
            Ok(min < ratio && ratio < max)
        }
        _ => Err(Error::WrongRegion {
            required: "oscillatory-region coefficients".into(),
            found: c.region,
        }),
    }
}

/// Evaluates one observable of one copy, `None` when undefined (temperature
/// sentinel, KL support violation, logarithm of a singular state).
fn observable_value(
    kind: ObservableKind,
    rho: &DensityVector,
    post: crate::lindblad::ControlParams,
    ss: &DensityVector,
) -> Option<f64> {
    match kind {
        ObservableKind::GroundPop => Some(rho.rho_gg.re),
        ObservableKind::Energy => Some(energy(rho, post)),
        ObservableKind::Entropy => Some(entropy(rho)),
        ObservableKind::Temperature => temperature(rho, post),
        ObservableKind::KLDivergence => {
            let v = kl_divergence(rho, ss);
            v.is_finite().then_some(v)
        }
        ObservableKind::KLSpeed => kl_speed(rho, post, ss).ok(),
    }
}

/// Grid-plus-bisection crossing finder for any observable.
///
/// Undefined samples partition the grid into validity segments and
/// crossings are sought only inside them. Strict sign changes are refined
/// by bisection to |Delta| <= 1e-12 or a time window of 1e-12 * horizon;
/// tangential contacts are not counted. The grid doubles (up to 2^16
/// points) whenever two crossings land within five grid steps of each
/// other. Temperature crossings in a negative-temperature epoch are
/// reported but flagged.
pub fn find_crossings_grid(
    exp: &QuenchExperiment,
    kind: ObservableKind,
    horizon: f64,
    n: usize,
) -> Result<MpembaReport, Error> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Domain(format!("horizon must be positive and finite, got {horizon}")));
    }
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 grid points, got {n}")));
    }
    let prop = Propagator::new(exp.post);
    let spec = prop.spectral_data();
    let ss = steady_state(exp.post);
    let (rho_i0, rho_ii0) = exp.initial_pair();
    let coeff_i = mode_coefficients(&rho_i0, spec);
    let coeff_ii = mode_coefficients(&rho_ii0, spec);

    let pair = |t: f64| -> (Option<f64>, Option<f64>) {
        let rho_i = prop.evolve_coefficients(&coeff_i, t);
        let rho_ii = prop.evolve_coefficients(&coeff_ii, t);
        (
            observable_value(kind, &rho_i, exp.post, &ss),
            observable_value(kind, &rho_ii, exp.post, &ss),
        )
    };
    let diff = |t: f64| -> Option<f64> {
        let (a, b) = pair(t);
        Some(a? - b?)
    };

    let mut n_grid = n;
    loop {
        let h = horizon / n_grid as f64;
        let mut crossings: Vec<f64> = Vec::new();
        let mut any_distinguishable = false;
        let mut last: Option<(f64, f64)> = None; // (t, nonzero value) inside the current segment
        for i in 0..=n_grid {
            let t = h * i as f64;
            match diff(t) {
                None => last = None, // segment boundary
                Some(v) => {
                    if v.abs() >= DEGENERATE_LEVEL {
                        any_distinguishable = true;
                    }
                    if let Some((t_prev, v_prev)) = last {
                        if v != 0.0 && v.signum() != v_prev.signum() {
                            if let Some(t_star) = bisect(&diff, t_prev, t, v_prev, horizon) {
                                if t_star > T_MIN_REL * horizon.max(1.0) {
                                    crossings.push(t_star);
                                }
                            }
                        }
                    }
                    if v != 0.0 {
                        last = Some((t, v));
                    }
                }
            }
        }
        if !any_distinguishable {
            return Ok(MpembaReport::from_crossings(Vec::new(), CrossingMethod::GridOracle, true));
        }
        let clustered = crossings.windows(2).any(|w| w[1] - w[0] < 5.0 * h);
        if clustered && n_grid < MAX_GRID_POINTS {
            n_grid = (n_grid * 2).min(MAX_GRID_POINTS);
            continue;
        }
        let list = crossings
            .into_iter()
            .map(|time| {
                let flagged = kind == ObservableKind::Temperature && {
                    let (a, b) = pair(time);
                    match (a, b) {
                        (Some(x), Some(y)) => x < 0.0 || y < 0.0,
                        _ => true,
                    }
                };
                Crossing { time, flagged }
            })
            .collect();
        return Ok(MpembaReport::from_crossings(list, CrossingMethod::GridOracle, false));
    }
}

fn bisect(
    diff: &dyn Fn(f64) -> Option<f64>,
    mut a: f64,
    mut b: f64,
    mut fa: f64,
    horizon: f64,
) -> Option<f64> {
    let width_goal = T_MIN_REL * horizon;
    for _ in 0..200 {
        if b - a <= width_goal {
            break;
        }
        let mid = 0.5 * (a + b);
        let fm = match diff(mid) {
            Some(v) => v,
            // Undefined inside the bracket: give up on refinement and
            // report the midpoint of the surviving interval.
            None => break,
        };
        if fm.abs() <= 1e-12 {
            return Some(mid);
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    Some(0.5 * (a + b))
}
