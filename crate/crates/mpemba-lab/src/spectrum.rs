//! Liouvillian spectrum: the cubic for the three nonzero eigenvalues, the
//! classification of the control plane into eigenvalue regions, and the
//! eigenvector tables or Jordan chains each region needs for exact
//! propagation.
//!
//! Eigenvalues of the generator L are written -i*lambda_j with lambda_1 = 0.
//! The lambda_j of the nonzero modes solve the real cubic
//!
//!   lambda^3 - 2 G lambda^2 + (1 + d^2 + 5 G^2 / 4) lambda
//!     - G (1 + d^2 / 2 + G^2 / 4) = 0,
//!
//! which depends on the drive only through d^2. Degeneracies of this cubic
//! are exceptional points of L: the eigenvectors coalesce there and the
//! propagator picks up polynomial-in-time factors.

use nalgebra::Matrix4;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::lindblad::{build_lindbladian, CMatrix4, CVector4, ControlParams};

/// Default relative tolerance for eigenvalue-gap based region tests.
pub const DEFAULT_EP_TOL: f64 = 1e-9;

/// Relative gap below which a root pair is snapped to an exact double root.
/// Rounding the control parameters to doubles perturbs a true double root
/// by O(sqrt(eps)), so the snap window must sit well above that.
const SNAP_DOUBLE_REL: f64 = 1e-6;

/// Relative spread below which all three roots are snapped to a triple root
/// (rounding perturbs a triple root by O(eps^(1/3))).
const SNAP_TRIPLE_REL: f64 = 1e-4;

/// Maximum allowed ‖L R - R J‖_inf for an eigensystem we hand out.
const JORDAN_RESIDUAL_TOL: f64 = 1e-8;

/// Eigenvalue regions of the control plane. A1/A2 carry a complex pair,
/// B has three distinct real decay rates, D and C are lines of second-order
/// exceptional points (degenerate pair slower resp. faster), and E is the
/// single third-order exceptional point where the lines meet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionTag {
    A1,
    A2,
    B,
    C,
    D,
    E,
}

/// Spectral decomposition of the generator at one parameter point: the four
/// lambda values (lambda_1 = 0 first), the region tag, right (generalized)
/// eigenvectors as columns, biorthonormal left vectors as rows, and the
/// Jordan form (diagonal away from exceptional points).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralData {
    pub params: ControlParams,
    pub region: RegionTag,
    pub lambdas: [C64; 4],
    pub right_vectors: CMatrix4,
    pub left_vectors: CMatrix4,
    pub jordan_form: CMatrix4,
}

impl SpectralData {
    /// Smallest nonzero decay rate; sets the asymptotic approach to the
    /// steady state and the default time horizons.
    pub fn lambda_slow(&self) -> f64 {
        self.lambdas[1..]
            .iter()
            .map(|l| l.re)
            .fold(f64::INFINITY, f64::min)
    }

    /// Gap ratio (lambda4 - lambda3) / (lambda3 - lambda2) for real spectra.
    pub fn gap_ratio(&self) -> Option<f64> {
        if self.lambdas.iter().any(|l| l.im != 0.0) {
            return None;
        }
        let (l2, l3, l4) = (self.lambdas[1].re, self.lambdas[2].re, self.lambdas[3].re);
        let lower = l3 - l2;
        (lower.abs() > 0.0).then(|| (l4 - l3) / lower)
    }

    /// ‖L R - R J‖_inf, the defining residual of the decomposition.
    pub fn jordan_residual(&self) -> f64 {
        let l = build_lindbladian(self.params);
        (l * self.right_vectors - self.right_vectors * self.jordan_form).amax()
    }

    /// ‖left * right - I‖_inf.
    pub fn biorthogonality_residual(&self) -> f64 {
        (self.left_vectors * self.right_vectors - CMatrix4::identity()).amax()
    }
}

/// Coefficients of the monic cubic for the nonzero lambda.
fn char_cubic(p: ControlParams) -> (f64, f64, f64) {
    let d2 = p.d_tilde * p.d_tilde;
    let g = p.gamma_tilde;
    (
        -2.0 * g,
        1.0 + d2 + 1.25 * g * g,
        -g * (1.0 + 0.5 * d2 + 0.25 * g * g),
    )
}

#[derive(Debug, Clone, Copy)]
enum CubicRoots {
    /// Ascending order.
    ThreeReal([f64; 3]),
    /// One real root plus a conjugate pair with im > 0.
    OnePair { real: f64, re: f64, im: f64 },
}

/// Solves x^3 + a2 x^2 + a1 x + a0 with real coefficients by the
/// trigonometric / Cardano method on the depressed cubic, with a Newton
/// polish of simple real roots.
fn solve_cubic(a2: f64, a1: f64, a0: f64) -> CubicRoots {
    let shift = a2 / 3.0;
    let p = a1 - a2 * a2 / 3.0;
    let q = 2.0 * a2.powi(3) / 27.0 - a2 * a1 / 3.0 + a0;
    let disc = -4.0 * p.powi(3) - 27.0 * q * q;

    let polish = |x: f64| -> f64 {
        let mut x = x;
        for _ in 0..2 {
            let f = ((x + a2) * x + a1) * x + a0;
            let df = (3.0 * x + 2.0 * a2) * x + a1;
            if df.abs() < 1e-8 * (1.0 + x * x) {
                break;
            }
            let step = f / df;
            if !step.is_finite() {
                break;
            }
            x -= step;
        }
        x
    };

    if disc >= 0.0 {
        // Three real roots.
        if p >= 0.0 {
            // Only reachable with p ~ q ~ 0: a (near-)triple root.
            let r = -shift;
            return CubicRoots::ThreeReal([r, r, r]);
        }
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        let mut roots = [
            m * phi.cos() - shift,
            m * (phi - 2.0 * std::f64::consts::FRAC_PI_3 * 2.0).cos() - shift,
            m * (phi + 2.0 * std::f64::consts::FRAC_PI_3 * 2.0).cos() - shift,
        ];
        for r in roots.iter_mut() {
            *r = polish(*r);
        }
        roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        CubicRoots::ThreeReal(roots)
    } else {
        // One real root; evaluate the dominant cube root first to avoid
        // cancellation.
        let s = (q * q / 4.0 + p.powi(3) / 27.0).sqrt();
        let u_arg = if q >= 0.0 { -q / 2.0 - s } else { -q / 2.0 + s };
        let u = u_arg.cbrt();
        let v = if u != 0.0 { -p / (3.0 * u) } else { 0.0 };
        let t_real = u + v;
        let real = polish(t_real - shift);
        // Deflate to the quadratic factor x^2 + b1 x + b0.
        let b1 = a2 + real;
        let b0 = a1 + real * b1;
        let half = -b1 / 2.0;
        let im2 = b0 - half * half;
        let im = im2.max(0.0).sqrt();
        CubicRoots::OnePair { real, re: half, im }
    }
}

/// The three nonzero lambda values, ordered by ascending real part with the
/// +im member of a conjugate pair first. Near-degenerate roots are snapped
/// to the exact double/triple closed forms of the zero-discriminant cubic,
/// so snapped exceptional-point inputs yield exactly coincident eigenvalues.
pub fn nonzero_eigenvalues(p: ControlParams) -> [C64; 3] {
    let (a2, a1, a0) = char_cubic(p);
    let roots = solve_cubic(a2, a1, a0);
    let as_complex: [C64; 3] = match roots {
        CubicRoots::ThreeReal([x, y, z]) => {
            [C64::new(x, 0.0), C64::new(y, 0.0), C64::new(z, 0.0)]
        }
        CubicRoots::OnePair { real, re, im } => {
            [C64::new(real, 0.0), C64::new(re, im), C64::new(re, -im)]
        }
    };
    let scale = as_complex
        .iter()
        .map(|l| l.norm())
        .fold(1.0_f64, f64::max);
    let spread = |a: C64, b: C64| (a - b).norm();
    let max_spread = spread(as_complex[0], as_complex[1])
        .max(spread(as_complex[0], as_complex[2]))
        .max(spread(as_complex[1], as_complex[2]));
    let min_spread = spread(as_complex[0], as_complex[1])
        .min(spread(as_complex[0], as_complex[2]))
        .min(spread(as_complex[1], as_complex[2]));

    if max_spread <= SNAP_TRIPLE_REL * scale {
        let r = C64::new(-a2 / 3.0, 0.0);
        return [r, r, r];
    }
    if min_spread <= SNAP_DOUBLE_REL * scale {
        // Double root of the zero-discriminant cubic: in depressed form
        // t^3 + p t + q = (t - t_d)^2 (t - t_s) with t_d = -3q/(2p),
        // t_s = 3q/p. The shift back preserves the exact trace.
        let shift = a2 / 3.0;
        let pd = a1 - a2 * a2 / 3.0;
        let qd = 2.0 * a2.powi(3) / 27.0 - a2 * a1 / 3.0 + a0;
        let t_d = -3.0 * qd / (2.0 * pd);
        let t_s = 3.0 * qd / pd;
        let l_d = t_d - shift;
        let l_s = t_s - shift;
        return if l_d <= l_s {
            [C64::new(l_d, 0.0), C64::new(l_d, 0.0), C64::new(l_s, 0.0)]
        } else {
            [C64::new(l_s, 0.0), C64::new(l_d, 0.0), C64::new(l_d, 0.0)]
        };
    }

    let mut sorted = as_complex;
    sorted.sort_by(|a, b| {
        a.re.partial_cmp(&b.re)
            .unwrap()
            .then(b.im.partial_cmp(&a.im).unwrap())
    });
    sorted
}

fn classify_roots(lams: &[C64; 3], ep_tol: f64) -> RegionTag {
    let scale = lams.iter().map(|l| l.norm()).fold(1.0_f64, f64::max);
    let tol = ep_tol * scale;
    let d01 = (lams[0] - lams[1]).norm();
    let d02 = (lams[0] - lams[2]).norm();
    let d12 = (lams[1] - lams[2]).norm();
    if d01 <= tol && d02 <= tol && d12 <= tol {
        return RegionTag::E;
    }
    if let Some(pair) = lams.iter().find(|l| l.im > tol) {
        // Complex pair present; the remaining real root is the paper's
        // lambda2. Ties between the decay rates go to A2.
        let real = lams
            .iter()
            .find(|l| l.im.abs() <= tol)
            .copied()
            .unwrap_or(lams[0]);
        if 2.0 * pair.im.abs() <= tol {
            // A conjugate pair this tight is a defective double root.
            return if pair.re < real.re { RegionTag::D } else { RegionTag::C };
        }
        return if real.re < pair.re { RegionTag::A1 } else { RegionTag::A2 };
    }
    // All real, ascending.
    if d01 <= tol {
        RegionTag::D
    } else if d12 <= tol {
        RegionTag::C
    } else {
        RegionTag::B
    }
}

/// Region of the control-plane point, decided by the eigenvalue structure.
/// Exceptional-point tags are only reachable through snapped inputs (see
/// [`region_d_gamma`], [`region_c_gamma`], [`e_point`]); generic floating
/// point inputs classify as A1, A2 or B.
pub fn classify_region(p: ControlParams, ep_tol: f64) -> RegionTag {
    classify_roots(&nonzero_eigenvalues(p), ep_tol)
}

/// Dissipation placing (d_tilde, result) on the line of second-order
/// exceptional points with the *slower* pair degenerate:
/// Gamma = sqrt(d^4/2 + 10 d^2 - 4 + (|d|/2)(d^2 - 8)^(3/2)).
/// Defined for d^2 >= 8; uses |d| so the mirror symmetry d -> -d of the
/// spectrum keeps the tag at D.
pub fn region_d_gamma(d_tilde: f64) -> Result<f64, Error> {
    ep_line_gamma(d_tilde, 1.0)
}

/// Dissipation placing (d_tilde, result) on the other branch of the
/// discriminant zero set, where the *faster* pair is degenerate:
/// Gamma = sqrt(d^4/2 + 10 d^2 - 4 - (|d|/2)(d^2 - 8)^(3/2)), d^2 >= 8.
pub fn region_c_gamma(d_tilde: f64) -> Result<f64, Error> {
    ep_line_gamma(d_tilde, -1.0)
}

fn ep_line_gamma(d_tilde: f64, sign: f64) -> Result<f64, Error> {
    let d2 = d_tilde * d_tilde;
    if d2 < 8.0 {
        return Err(Error::Domain(format!(
            "exceptional-point line requires d_tilde^2 >= 8, got d_tilde = {d_tilde}"
        )));
    }
    let radicand = 0.5 * d2 * d2 + 10.0 * d2 - 4.0 + sign * 0.5 * d_tilde.abs() * (d2 - 8.0).powf(1.5);
    Ok(radicand.sqrt())
}

/// Dissipation placing (d_tilde, result) on the equal-gap line
/// Gamma = 3 sqrt(2) sqrt(d^2 - 2), where lambda4 - lambda3 = lambda3 - lambda2.
pub fn region_b_m2_gamma(d_tilde: f64) -> Result<f64, Error> {
    let d2 = d_tilde * d_tilde;
    if d2 < 2.0 {
        return Err(Error::Domain(format!(
            "equal-gap line requires d_tilde^2 >= 2, got d_tilde = {d_tilde}"
        )));
    }
    Ok(3.0 * 2.0_f64.sqrt() * (d2 - 2.0).sqrt())
}

/// The third-order exceptional point (2 sqrt 2, 6 sqrt 3), where the two
/// second-order lines meet and the nonzero eigenvalue 4 sqrt 3 is triple.
pub fn e_point() -> ControlParams {
    ControlParams {
        d_tilde: 2.0 * 2.0_f64.sqrt(),
        gamma_tilde: 6.0 * 3.0_f64.sqrt(),
    }
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

const I: C64 = C64::new(0.0, 1.0);

/// Steady right eigenvector, normalized so the last component is 1.
fn steady_right(p: ControlParams) -> CVector4 {
    let d = p.d_tilde;
    let g = p.gamma_tilde;
    let den = 4.0 + d * d + g * g;
    CVector4::new(
        -d * c(2.0, g) / den,
        -d * c(2.0, -g) / den,
        c(d * d / den, 0.0),
        c(1.0, 0.0),
    )
}

/// Steady left eigenvector, normalized against [`steady_right`].
fn steady_left(p: ControlParams) -> CVector4 {
    let d = p.d_tilde;
    let g = p.gamma_tilde;
    let w = (4.0 + d * d + g * g) / (4.0 + 2.0 * d * d + g * g);
    CVector4::new(c(0.0, 0.0), c(0.0, 0.0), c(w, 0.0), c(w, 0.0))
}

/// Right eigenvector of a decaying mode with eigenvalue -i*lambda, in the
/// normalization with last component 1. Valid whenever the mode has weight
/// on the populations (all decaying modes at d != 0, including coalesced
/// ones at the exceptional lines).
fn mode_right(p: ControlParams, lambda: C64) -> CVector4 {
    let d = p.d_tilde;
    let q = c(p.gamma_tilde / 2.0, 0.0) - lambda;
    CVector4::new(
        -d / (c(1.0, 0.0) - I * q),
        -d / (c(1.0, 0.0) + I * q),
        c(-1.0, 0.0),
        c(1.0, 0.0),
    )
}

/// Left eigenvector row for a simple decaying mode, from the closed-form
/// cofactor expressions. `lambda` is the mode, `others` the remaining two
/// nonzero eigenvalues. Exactly biorthonormal against the [`mode_right`]
/// normalization.
fn mode_left(p: ControlParams, lambda: C64, others: [C64; 2]) -> CVector4 {
    let d = p.d_tilde;
    let g = p.gamma_tilde;
    let den_ss = 4.0 + 2.0 * d * d + g * g;
    let two = c(2.0, 0.0);
    let quad = c(4.0, 0.0) + (c(g, 0.0) - two * lambda) * (c(g, 0.0) - two * lambda);
    let prod_gl = (c(g, 0.0) - two * others[0]) * (c(g, 0.0) - two * others[1]);
    let prod_dl = (lambda - others[0]) * (lambda - others[1]);
    let prod_l = others[0] * others[1];
    let sum_l = others[0] + others[1];
    let re1 = -quad * (prod_gl - c(4.0, 0.0)) / (c(32.0 * d, 0.0) * prod_dl);
    let im1 = -quad * (c(g, 0.0) - sum_l) / (c(8.0 * d, 0.0) * prod_dl);
    let l3 = -quad * (c(den_ss, 0.0) + c(4.0, 0.0) * prod_l) / (c(8.0 * den_ss, 0.0) * prod_dl);
    let l4 = quad * (c(den_ss, 0.0) - c(4.0, 0.0) * prod_l) / (c(8.0 * den_ss, 0.0) * prod_dl);
    CVector4::new(re1 + I * im1, re1 - I * im1, l3, l4)
}

fn matrix_from_columns(cols: [CVector4; 4]) -> CMatrix4 {
    CMatrix4::from_columns(&cols)
}

fn matrix_from_rows(rows: [CVector4; 4]) -> CMatrix4 {
    let mut m = CMatrix4::zeros();
    for (i, row) in rows.iter().enumerate() {
        for j in 0..4 {
            m[(i, j)] = row[j];
        }
    }
    m
}

fn diagonal_jordan(lambdas: &[C64; 4]) -> CMatrix4 {
    CMatrix4::from_diagonal(&CVector4::new(
        -I * lambdas[0],
        -I * lambdas[1],
        -I * lambdas[2],
        -I * lambdas[3],
    ))
}

/// Rescales each left row so that left * right = I exactly (the closed
/// forms already satisfy this to rounding; the pass protects corner cases).
fn normalize_lefts(lefts: &mut CMatrix4, rights: &CMatrix4) {
    for k in 0..4 {
        let mut dot = c(0.0, 0.0);
        for j in 0..4 {
            dot += lefts[(k, j)] * rights[(j, k)];
        }
        if dot.norm() > 1e-300 {
            for j in 0..4 {
                lefts[(k, j)] /= dot;
            }
        }
    }
}

/// Diagonalizable decomposition from the generic closed-form tables
/// (regions A1, A2 and B).
fn generic_eigensystem(p: ControlParams, region: RegionTag, lams: [C64; 3]) -> SpectralData {
    // Order: the real root is lambda2; a conjugate pair fills slots 3, 4
    // with the +im member first. In region B the sorted order already is
    // all-real ascending.
    let ordered: [C64; 3] = if lams.iter().any(|l| l.im != 0.0) {
        let real = *lams.iter().find(|l| l.im == 0.0).expect("one real root");
        let plus = *lams.iter().find(|l| l.im > 0.0).expect("conjugate pair");
        [real, plus, plus.conj()]
    } else {
        lams
    };
    let lambdas = [c(0.0, 0.0), ordered[0], ordered[1], ordered[2]];
    let rights;
    let mut lefts;
    if p.d_tilde == 0.0 {
        // The drive decouples coherences from populations; the generic
        // tables degenerate and the modes are basis vectors. lambda2 = G is
        // the population decay, the pair G/2 +- i lives on the coherences.
        rights = matrix_from_columns([
            CVector4::new(c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)),
            CVector4::new(c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0)),
            CVector4::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)),
            CVector4::new(c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)),
        ]);
        lefts = matrix_from_rows([
            CVector4::new(c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)),
            CVector4::new(c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0), c(0.0, 0.0)),
            CVector4::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)),
            CVector4::new(c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)),
        ]);
    } else {
        rights = matrix_from_columns([
            steady_right(p),
            mode_right(p, ordered[0]),
            mode_right(p, ordered[1]),
            mode_right(p, ordered[2]),
        ]);
        lefts = matrix_from_rows([
            steady_left(p),
            mode_left(p, ordered[0], [ordered[1], ordered[2]]),
            mode_left(p, ordered[1], [ordered[0], ordered[2]]),
            mode_left(p, ordered[2], [ordered[0], ordered[1]]),
        ]);
    }
    normalize_lefts(&mut lefts, &rights);
    SpectralData {
        params: p,
        region,
        lambdas,
        right_vectors: rights,
        left_vectors: lefts,
        jordan_form: diagonal_jordan(&lambdas),
    }
}

/// Decomposition on the slower-pair exceptional line: Jordan chain for the
/// degenerate lambda2 with the closed-form left table.
fn region_d_eigensystem(p: ControlParams, l2: f64, l4: f64) -> SpectralData {
    let d = p.d_tilde;
    let g = p.gamma_tilde;
    let lambdas = [c(0.0, 0.0), c(l2, 0.0), c(l2, 0.0), c(l4, 0.0)];
    // Generalized vector: (L + i lambda2) r3 = r2 in this normalization.
    let chain = CVector4::new(
        (c(1.0, 0.0) - I * c(g / 2.0 - l4, 0.0)) / c(d, 0.0),
        (c(-1.0, 0.0) - I * c(g / 2.0 - l4, 0.0)) / c(d, 0.0),
        c(0.0, 0.0),
        c(0.0, 0.0),
    );
    let rights = matrix_from_columns([
        steady_right(p),
        mode_right(p, c(l2, 0.0)),
        chain,
        mode_right(p, c(l4, 0.0)),
    ]);

    // Closed-form left table for the defective block.
    let den_ss = 4.0 + 2.0 * d * d + g * g;
    let eta = g.powi(3) - 2.0 * g * g * (l2 + 2.0 * l4) + 4.0 * g * (-3.0 + 2.0 * l2 * l4 + l4 * l4)
        + 8.0 * (l2 + 2.0 * l4 - l2 * l4 * l4);
    let del1 = -16.0 + g.powi(4) + 2.0 * d * d * ((g - 2.0 * l4).powi(2) - 4.0);
    let del2 = -16.0 + g.powi(4) - 8.0 * g * l4 - 2.0 * g.powi(3) * l4
        + 2.0 * d * d * ((g - 2.0 * l2) * (g - 2.0 * l4) - 4.0);
    let del3 = 4.0 * l2 * l2 * (g * g - 2.0 * g * l4 - 4.0);
    let quad2 = 4.0 + (g - 2.0 * l2).powi(2);
    let quad4 = 4.0 + (g - 2.0 * l4).powi(2);
    let gap = l2 - l4;

    let re21 = -quad2 * quad4 / (4.0 * d * gap * eta);
    let im21 = -quad2 * (g - 2.0 * l4) * quad4 / (8.0 * d * gap * eta);
    let l23 = quad2 * (del1 - 2.0 * g * l4 * (20.0 + g * g - 4.0 * l4 * l4) - 4.0 * l4 * l4 * (g * g - 12.0))
        / (4.0 * den_ss * gap * eta);
    let l24 = -quad2 * (del1 + 2.0 * g * l4 * (4.0 - 3.0 * g * g - 4.0 * l4 * l4) - 4.0 * l4 * l4 * (4.0 - 3.0 * g * g))
        / (4.0 * den_ss * gap * eta);
    let re31 = 4.0 * d * (l2 + l4 - g) / eta;
    let im31 = d * ((g - 2.0 * l2) * (g - 2.0 * l4) - 4.0) / eta;
    let l33 = 4.0 * I * c(d * d, 0.0) * c(den_ss + 4.0 * l2 * l4, 0.0) / c(den_ss * eta, 0.0);
    let l34 = -4.0 * I * c(d * d, 0.0) * c(den_ss - 4.0 * l2 * l4, 0.0) / c(den_ss * eta, 0.0);
    let l43 = -quad4 * (del2 - del3 - 32.0 * l2 * (g - l4)) / (4.0 * gap * den_ss * eta);
    let l44 = quad4 * (del2 + del3 + 4.0 * g * l2 * (4.0 - g * g + 2.0 * g * l4)) / (4.0 * gap * den_ss * eta);

    let mut lefts = matrix_from_rows([
        steady_left(p),
        CVector4::new(c(-re21, -im21), c(-re21, im21), c(l23, 0.0), c(l24, 0.0)),
        CVector4::new(c(re31, im31), c(-re31, im31), l33, l34),
        CVector4::new(c(re21, im21), c(re21, -im21), c(l43, 0.0), c(l44, 0.0)),
    ]);
    // Row 3 is the genuine left eigenvector of the degenerate pair; its
    // pairing is with the chain column, which the closed form already
    // satisfies, so only a residual-scale rescaling happens here.
    normalize_lefts(&mut lefts, &rights);

    let mut jordan = diagonal_jordan(&lambdas);
    jordan[(1, 2)] = c(1.0, 0.0);
    SpectralData {
        params: p,
        region: RegionTag::D,
        lambdas,
        right_vectors: rights,
        left_vectors: lefts,
        jordan_form: jordan,
    }
}

/// Decomposition on the faster-pair exceptional line. The coalesced
/// eigenvector keeps the closed form; the generalized vector is constructed
/// numerically from the rank-deficient chain equation and the left rows are
/// the numeric inverse.
fn region_c_eigensystem(p: ControlParams, l2: f64, ldeg: f64) -> SpectralData {
    let lambdas = [c(0.0, 0.0), c(l2, 0.0), c(ldeg, 0.0), c(ldeg, 0.0)];
    let eigvec = mode_right(p, c(ldeg, 0.0));
    let a = build_lindbladian(p) + CMatrix4::identity() * (I * c(ldeg, 0.0));
    let chain = solve_rank_deficient(&a, &eigvec);
    let rights = matrix_from_columns([
        steady_right(p),
        mode_right(p, c(l2, 0.0)),
        eigvec,
        chain,
    ]);
    let lefts = rights
        .try_inverse()
        .expect("right-vector matrix of a second-order exceptional point must be invertible");
    let mut jordan = diagonal_jordan(&lambdas);
    jordan[(2, 3)] = c(1.0, 0.0);
    SpectralData {
        params: p,
        region: RegionTag::C,
        lambdas,
        right_vectors: rights,
        left_vectors: lefts,
        jordan_form: jordan,
    }
}

/// Fixed tables at the third-order exceptional point. The chain satisfies
/// (L + i lambda) r3 = r2, (L + i lambda) r4 = r3 with lambda = 4 sqrt 3.
fn region_e_eigensystem(p: ControlParams) -> SpectralData {
    let s2 = 2.0_f64.sqrt();
    let s3 = 3.0_f64.sqrt();
    let s6 = 6.0_f64.sqrt();
    let lam = 4.0 * s3;
    let lambdas = [c(0.0, 0.0), c(lam, 0.0), c(lam, 0.0), c(lam, 0.0)];
    let rights = matrix_from_columns([
        CVector4::new(
            c(-1.0 / (15.0 * s2), -3.0 * s3 / (15.0 * s2)),
            c(-1.0 / (15.0 * s2), 3.0 * s3 / (15.0 * s2)),
            c(1.0 / 15.0, 0.0),
            c(1.0, 0.0),
        ),
        CVector4::new(
            c(-1.0 / s2, s3 / s2),
            c(-1.0 / s2, -s3 / s2),
            c(-1.0, 0.0),
            c(1.0, 0.0),
        ),
        CVector4::new(
            c(1.0 / (2.0 * s2), s3 / (2.0 * s2)),
            c(-1.0 / (2.0 * s2), s3 / (2.0 * s2)),
            c(0.0, 0.0),
            c(0.0, 0.0),
        ),
        CVector4::new(c(1.0 / (2.0 * s2), 0.0), c(1.0 / (2.0 * s2), 0.0), c(0.0, 0.0), c(0.0, 0.0)),
    ]);
    let mut lefts = matrix_from_rows([
        CVector4::new(c(0.0, 0.0), c(0.0, 0.0), c(15.0 / 16.0, 0.0), c(15.0 / 16.0, 0.0)),
        CVector4::new(c(0.0, 0.0), c(0.0, 0.0), c(-15.0 / 16.0, 0.0), c(1.0 / 16.0, 0.0)),
        CVector4::new(c(s2, 0.0), c(-s2, 0.0), c(0.0, 9.0 * s3 / 4.0), c(0.0, s3 / 4.0)),
        CVector4::new(c(s2, -s6), c(s2, s6), c(5.0, 0.0), c(1.0, 0.0)),
    ]);
    normalize_lefts(&mut lefts, &rights);
    let mut jordan = diagonal_jordan(&lambdas);
    jordan[(1, 2)] = c(1.0, 0.0);
    jordan[(2, 3)] = c(1.0, 0.0);
    SpectralData {
        params: p,
        region: RegionTag::E,
        lambdas,
        right_vectors: rights,
        left_vectors: lefts,
        jordan_form: jordan,
    }
}

/// Solves A x = b for a consistent system with numerically rank-deficient A
/// by full-pivot Gaussian elimination, fixing free variables to zero.
fn solve_rank_deficient(a: &CMatrix4, b: &CVector4) -> CVector4 {
    let mut aug = [[c(0.0, 0.0); 5]; 4];
    for i in 0..4 {
        for j in 0..4 {
            aug[i][j] = a[(i, j)];
        }
        aug[i][4] = b[i];
    }
    let scale = a.amax().max(1e-300);
    let tol = 1e-10 * scale;
    let mut col_perm = [0usize, 1, 2, 3];
    let mut rank = 4;
    for k in 0..4 {
        // Full pivot over the remaining block.
        let (mut pi, mut pj, mut pmax) = (k, k, 0.0_f64);
        for i in k..4 {
            for j in k..4 {
                let m = aug[i][j].norm();
                if m > pmax {
                    pmax = m;
                    pi = i;
                    pj = j;
                }
            }
        }
        if pmax <= tol {
            rank = k;
            break;
        }
        aug.swap(k, pi);
        if pj != k {
            for row in aug.iter_mut() {
                row.swap(k, pj);
            }
            col_perm.swap(k, pj);
        }
        for i in (k + 1)..4 {
            let f = aug[i][k] / aug[k][k];
            for j in k..5 {
                let sub = f * aug[k][j];
                aug[i][j] -= sub;
            }
        }
    }
    let mut x = [c(0.0, 0.0); 4];
    for k in (0..rank).rev() {
        let mut acc = aug[k][4];
        for j in (k + 1)..4 {
            acc -= aug[k][j] * x[j];
        }
        x[k] = acc / aug[k][k];
    }
    let mut out = CVector4::zeros();
    for j in 0..4 {
        out[col_perm[j]] = x[j];
    }
    out
}

/// Spectral decomposition at `p`, dispatching on the region: biorthonormal
/// eigenvector tables away from the exceptional sets, Jordan chains on them.
/// Panics if the assembled decomposition fails its residual bound, which
/// would indicate a table transcription error rather than a user error.
pub fn eigensystem(p: ControlParams) -> SpectralData {
    let data = eigensystem_unchecked(p);
    let res = data.jordan_residual();
    assert!(
        res <= JORDAN_RESIDUAL_TOL,
        "Jordan residual {res:.3e} exceeds {JORDAN_RESIDUAL_TOL:.1e} at {p:?}"
    );
    data
}

fn eigensystem_unchecked(p: ControlParams) -> SpectralData {
    if p.d_tilde < 0.0 {
        // The generator obeys L(-d) = S L(d) S with S = diag(-1,-1,1,1),
        // so the decomposition mirrors through S.
        let mirrored = ControlParams { d_tilde: -p.d_tilde, gamma_tilde: p.gamma_tilde };
        let mut data = eigensystem_unchecked(mirrored);
        let s = CMatrix4::from_diagonal(&CVector4::new(
            c(-1.0, 0.0),
            c(-1.0, 0.0),
            c(1.0, 0.0),
            c(1.0, 0.0),
        ));
        data.params = p;
        data.right_vectors = s * data.right_vectors;
        data.left_vectors = data.left_vectors * s;
        return data;
    }
    let lams = nonzero_eigenvalues(p);
    let region = classify_roots(&lams, DEFAULT_EP_TOL);
    match region {
        RegionTag::A1 | RegionTag::A2 | RegionTag::B => generic_eigensystem(p, region, lams),
        RegionTag::D => region_d_eigensystem(p, lams[0].re, lams[2].re),
        RegionTag::C => region_c_eigensystem(p, lams[0].re, lams[2].re),
        RegionTag::E => region_e_eigensystem(p),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params(d: f64, g: f64) -> ControlParams {
        ControlParams::new(d, g).unwrap()
    }

    #[test]
    fn triple_eigenvalue_at_the_third_order_point() {
        let lams = nonzero_eigenvalues(e_point());
        let expected = 4.0 * 3.0_f64.sqrt();
        for l in lams {
            assert_abs_diff_eq!(l.re, expected, epsilon = 1e-12);
            assert_eq!(l.im, 0.0);
        }
    }

    #[test]
    fn degenerate_pair_on_the_d_line() {
        // Frozen from the zero-discriminant closed form evaluated in
        // extended precision at d = 4.
        let g = region_d_gamma(4.0).unwrap();
        assert_abs_diff_eq!(g, (284.0 + 32.0 * 2.0_f64.sqrt()).sqrt(), epsilon = 1e-15);
        let lams = nonzero_eigenvalues(params(4.0, g));
        assert_eq!(lams[0], lams[1], "snapped pair must coincide exactly");
        assert_abs_diff_eq!(lams[0].re, 10.23163190801033653, epsilon = 1e-11);
        assert_abs_diff_eq!(lams[2].re, 15.827497211873963338, epsilon = 1e-11);
    }

    #[test]
    fn closed_form_pair_matches_the_printed_cosine_form() {
        // On the slower-pair line the double and simple roots obey
        // l = 2G/3 + 2 cos(2 pi/3) u and 2G/3 + 2u with
        // u = (G/6 (1 - d^2/2 + G^2/36))^(1/3).
        for d in [3.0, 4.0, 6.0, 10.0] {
            let g = region_d_gamma(d).unwrap();
            let u = (g / 6.0 * (1.0 - d * d / 2.0 + g * g / 36.0)).cbrt();
            let lams = nonzero_eigenvalues(params(d, g));
            assert_abs_diff_eq!(lams[0].re, 2.0 * g / 3.0 - u, epsilon = 1e-9 * g);
            assert_abs_diff_eq!(lams[2].re, 2.0 * g / 3.0 + 2.0 * u, epsilon = 1e-9 * g);
        }
    }

    #[test]
    fn complex_pair_matches_the_cube_root_closed_form() {
        // Independent route to the complex-pair eigenvalues through the
        // principal cube root of
        // chi = i G (36 - 18 d^2 + G^2) + 6 sqrt(3 G^2 (d^4 + 20 d^2 - 8)
        //       - 48 (1 + d^2)^3 - 3 G^4).
        for (d, g) in [(2.5, 0.5), (3.0, 1.0), (1.5, 0.25)] {
            let radicand = 3.0 * g * g * (d.powi(4) + 20.0 * d * d - 8.0)
                - 48.0 * (1.0 + d * d).powi(3)
                - 3.0 * g.powi(4);
            assert!(radicand < 0.0, "these points carry a complex pair");
            let chi = C64::new(0.0, g * (36.0 - 18.0 * d * d + g * g))
                + 6.0 * C64::new(radicand, 0.0).sqrt();
            let c13 = chi.powf(1.0 / 3.0);
            let s3 = 3.0_f64.sqrt();
            let mi = C64::new(0.0, -1.0);
            let pi_ = C64::new(0.0, 1.0);
            let l2 = ((mi + s3.into()) * c13 + C64::new(8.0 * g, 0.0)
                - (pi_ + s3.into()) * C64::new(12.0 + 12.0 * d * d - g * g, 0.0) / c13)
                / 12.0.into();
            let lre = (C64::new(12.0 * d * d, 0.0) * (pi_ + s3.into())
                + (pi_ - s3.into()) * c13 * c13
                + C64::new(16.0 * g, 0.0) * c13
                - (pi_ + s3.into()) * C64::new(g * g - 12.0, 0.0))
                / (24.0.into() * c13);
            let lim = (C64::new(12.0 * s3 * d * d, 0.0) * (pi_ + s3.into())
                - s3 * ((pi_ - s3.into()) * c13 * c13)
                - s3 * ((pi_ + s3.into()) * C64::new(g * g - 12.0, 0.0)))
                / (24.0.into() * c13);
            let lams = nonzero_eigenvalues(params(d, g));
            assert_abs_diff_eq!(lams[0].re, l2.re, epsilon = 1e-11);
            assert_abs_diff_eq!(lams[1].re, lre.re, epsilon = 1e-11);
            assert_abs_diff_eq!(lams[1].im, lim.re, epsilon = 1e-11);
        }
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify_region(params(2.5, 0.5), DEFAULT_EP_TOL), RegionTag::A1);
        assert_eq!(
            classify_region(params(6.0, 6.0 * 17.0_f64.sqrt()), DEFAULT_EP_TOL),
            RegionTag::B
        );
        assert_eq!(classify_region(e_point(), DEFAULT_EP_TOL), RegionTag::E);
        assert_eq!(classify_region(params(1.0, 10.0), DEFAULT_EP_TOL), RegionTag::A2);
        let d = 4.0;
        assert_eq!(
            classify_region(params(d, region_d_gamma(d).unwrap()), DEFAULT_EP_TOL),
            RegionTag::D
        );
        assert_eq!(
            classify_region(params(d, region_c_gamma(d).unwrap()), DEFAULT_EP_TOL),
            RegionTag::C
        );
    }

    #[test]
    fn classification_is_locally_constant() {
        for (d, g) in [(2.5, 0.5), (1.0, 10.0), (6.0, 24.0), (4.0, 10.0)] {
            let base = classify_region(params(d, g), DEFAULT_EP_TOL);
            for (dd, dg) in [(1e-12, 0.0), (-1e-12, 0.0), (0.0, 1e-12), (0.0, -1e-12)] {
                assert_eq!(classify_region(params(d + dd, g + dg), DEFAULT_EP_TOL), base);
            }
        }
    }

    #[test]
    fn ep_line_domains() {
        assert!(region_d_gamma(2.0).is_err());
        assert!(region_c_gamma(2.0).is_err());
        assert!(region_b_m2_gamma(1.0).is_err());
        assert_abs_diff_eq!(region_b_m2_gamma(2.0_f64.sqrt()).unwrap(), 0.0, epsilon = 1e-12);
        // The two exceptional lines meet at the third-order point.
        let d = 2.0 * 2.0_f64.sqrt();
        let g = 6.0 * 3.0_f64.sqrt();
        assert_abs_diff_eq!(region_d_gamma(d).unwrap(), g, epsilon = 1e-12);
        assert_abs_diff_eq!(region_c_gamma(d).unwrap(), g, epsilon = 1e-12);
    }

    #[test]
    fn equal_gap_line_at_reference_drive() {
        let g = region_b_m2_gamma(6.0).unwrap();
        assert_abs_diff_eq!(g, 6.0 * 17.0_f64.sqrt(), epsilon = 1e-12);
        let lams = nonzero_eigenvalues(params(6.0, g));
        let gap_defect = (lams[2].re - lams[1].re) - (lams[1].re - lams[0].re);
        assert!(gap_defect.abs() <= 1e-9, "gap defect {gap_defect}");
    }

    #[test]
    fn d_line_has_one_degeneracy_among_the_smaller_pair() {
        for d in [2.9, 3.5, 4.0, 5.0, 8.0, 12.0] {
            let g = region_d_gamma(d).unwrap();
            let lams = nonzero_eigenvalues(params(d, g));
            assert_eq!(lams[0], lams[1]);
            assert!(lams[2].re > lams[0].re, "simple root must be the faster one");
        }
    }

    #[test]
    fn eigensystem_residuals_across_regions() {
        let points = [
            params(2.5, 0.5),                                  // A1
            params(1.0, 10.0),                                 // A2
            params(6.0, 6.0 * 17.0_f64.sqrt()),                // B
            params(4.0, region_d_gamma(4.0).unwrap()),         // D
            params(4.0, region_c_gamma(4.0).unwrap()),         // C
            e_point(),                                         // E
            params(0.0, 3.0),                                  // decoupled drive
            params(2.0, 0.0),                                  // closed system
            params(-4.0, region_d_gamma(-4.0).unwrap()),       // mirrored drive
        ];
        for p in points {
            let data = eigensystem(p);
            assert!(
                data.jordan_residual() <= 1e-8,
                "Jordan residual too large at {p:?}: {}",
                data.jordan_residual()
            );
            assert!(
                data.biorthogonality_residual() <= 1e-9,
                "biorthogonality broken at {p:?}: {}",
                data.biorthogonality_residual()
            );
        }
    }

    #[test]
    fn e_point_tables_are_the_printed_ones() {
        let data = eigensystem(e_point());
        let s2 = 2.0_f64.sqrt();
        // Fastest chain vector (1/(2 sqrt 2), 1/(2 sqrt 2), 0, 0).
        assert_abs_diff_eq!(data.right_vectors[(0, 3)].re, 1.0 / (2.0 * s2), epsilon = 1e-15);
        assert_abs_diff_eq!(data.right_vectors[(1, 3)].re, 1.0 / (2.0 * s2), epsilon = 1e-15);
        assert_eq!(data.right_vectors[(2, 3)], C64::new(0.0, 0.0));
        assert_eq!(data.right_vectors[(3, 3)], C64::new(0.0, 0.0));
        // Two unit defects above the degenerate diagonal.
        assert_eq!(data.jordan_form[(1, 2)], C64::new(1.0, 0.0));
        assert_eq!(data.jordan_form[(2, 3)], C64::new(1.0, 0.0));
        assert!(data.jordan_residual() <= 1e-10);
    }

    #[test]
    fn left_tables_match_numeric_inversion() {
        for p in [
            params(2.5, 0.5),
            params(6.0, 6.0 * 17.0_f64.sqrt()),
            params(4.0, region_d_gamma(4.0).unwrap()),
            e_point(),
        ] {
            let data = eigensystem(p);
            let inv = data.right_vectors.try_inverse().unwrap();
            assert!(
                (data.left_vectors - inv).amax() <= 1e-8,
                "left rows deviate from inverse at {p:?}"
            );
        }
    }

    #[test]
    fn lambda_slow_and_gap_ratio() {
        let data = eigensystem(params(6.0, 6.0 * 17.0_f64.sqrt()));
        assert!(data.gap_ratio().is_some());
        assert_abs_diff_eq!(data.gap_ratio().unwrap(), 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(data.lambda_slow(), data.lambdas[1].re, epsilon = 1e-14);
        let osc = eigensystem(params(2.5, 0.5));
        assert_eq!(osc.gap_ratio(), None);
        assert_abs_diff_eq!(osc.lambda_slow(), 0.28451817206946939, epsilon = 1e-10);
    }
}
