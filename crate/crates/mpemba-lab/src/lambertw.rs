//! Real branches of the Lambert W function, the inverse of w -> w e^w.
//!
//! `W0` covers [-1/e, inf), `Wm1` covers [-1/e, 0). Crossing times of
//! exponential-plus-linear observable differences are expressed through
//! these two branches.

use crate::error::Error;
use serde::{Deserialize, Serialize};

/// The two real branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WBranch {
    /// Principal branch, increasing on [-1/e, inf), W0(-1/e) = -1.
    W0,
    /// Lower branch, decreasing on [-1/e, 0), Wm1(-1/e) = -1.
    Wm1,
}

/// Largest double less than or equal to -1/e; arguments below this are out
/// of both branch domains.
pub fn branch_point() -> f64 {
    -(-1.0_f64).exp()
}

/// Evaluates the requested real branch by Halley iteration from asymptotic
/// initial guesses. Relative accuracy of the defining identity w e^w = x is
/// about 1e-14 away from the branch point, where the square-root singularity
/// limits attainable accuracy.
pub fn lambert_w(branch: WBranch, x: f64) -> Result<f64, Error> {
    if x.is_nan() {
        return Err(Error::Domain("lambert_w: argument is NaN".into()));
    }
    let bp = branch_point();
    if x < bp {
        return Err(Error::Domain(format!(
            "lambert_w: argument {x} below the branch point {bp}"
        )));
    }
    match branch {
        WBranch::W0 => {
            if x == 0.0 {
                return Ok(0.0);
            }
            Ok(halley(x, w0_initial(x)))
        }
        WBranch::Wm1 => {
            if x >= 0.0 {
                return Err(Error::Domain(format!(
                    "lambert_w: Wm1 is only defined on [-1/e, 0), got {x}"
                )));
            }
            Ok(halley(x, wm1_initial(x)))
        }
    }
}

/// Series about the branch point: W = -1 + p - p^2/3 + 11 p^3 / 72 - ...
/// with p = +sqrt(2(e x + 1)) on W0 and p = -sqrt(2(e x + 1)) on Wm1.
fn branch_series(p: f64) -> f64 {
    -1.0 + p * (1.0 + p * (-1.0 / 3.0 + p * (11.0 / 72.0 + p * (-43.0 / 540.0))))
}

fn w0_initial(x: f64) -> f64 {
    if x < -0.25 {
        let p = (2.0 * (std::f64::consts::E * x + 1.0)).max(0.0).sqrt();
        branch_series(p)
    } else if x < 2.0 {
        // ln(1+x) is exact at 0 and a decent contraction on the rest.
        x.ln_1p() * (1.0 - x.ln_1p() / (2.0 + 2.0 * x))
    } else {
        let l1 = x.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    }
}

fn wm1_initial(x: f64) -> f64 {
    if x < -0.25 {
        let p = (2.0 * (std::f64::consts::E * x + 1.0)).max(0.0).sqrt();
        branch_series(-p)
    } else {
        let l1 = (-x).ln(); // large negative
        let l2 = (-l1).ln();
        l1 - l2 + l2 / l1
    }
}

/// Halley iteration on f(w) = w e^w - x. Converges cubically; stops when the
/// step drops below 4 ulp of the iterate or after 50 rounds.
fn halley(x: f64, mut w: f64) -> f64 {
    // Extremely close to the branch point the derivative vanishes and the
    // series guess is already at the attainable sqrt(eps) accuracy.
    if (std::f64::consts::E * x + 1.0).abs() < 1e-12 {
        return w;
    }
    for _ in 0..50 {
        let ew = w.exp();
        let f = w * ew - x;
        let w1 = w + 1.0;
        let denom = ew * w1 - (w + 2.0) * f / (2.0 * w1);
        if denom == 0.0 || !denom.is_finite() {
            break;
        }
        let step = f / denom;
        let next = w - step;
        if !next.is_finite() {
            break;
        }
        let ulp_bound = 4.0 * f64::EPSILON * next.abs().max(f64::MIN_POSITIVE);
        w = next;
        if step.abs() <= ulp_bound {
            break;
        }
    }
    w
}
