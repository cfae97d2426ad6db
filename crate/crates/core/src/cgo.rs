//! Warped-product Laplacian, hemisphere quasimodes, CGO candidates and the
//! conductivity to Schrödinger reduction. Grid numerics are three dimensional.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{adaptive, simpson_weights};

/// Ambient dimension used by the grid numerics.
pub const DIM: usize = 3;

/// Minimum nodes per wavelength accepted by [`cgo_residual`].
pub const MIN_NODES_PER_WAVELENGTH: f64 = 8.0;

/// Default tolerance of the direct/conjugated consistency check.
pub const WARPED_TOL: f64 = 1e-4;

/// (n−2)²/4, the shift in Δ̂ = Δ_{S^{n−1}} − (n−2)²/4.
pub fn sphere_shift(n: usize) -> f64 {
    let m = n as f64 - 2.0;
    m * m / 4.0
}

/// (n−2)(n−4)/4, the shift in Δ̃ = Δ_{S^{n−2}} − (n−2)(n−4)/4.
pub fn fiber_shift(n: usize) -> f64 {
    (n as f64 - 2.0) * (n as f64 - 4.0) / 4.0
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

// ---------------------------------------------------------------------------
// Warped-product Laplacian on a (t, θ, ψ) grid

/// Uniform axis: `n` nodes starting at `start` with spacing `step`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub start: f64,
    pub step: f64,
    pub n: usize,
}

impl Axis {
    pub fn span(a: f64, b: f64, n: usize) -> Self {
        Axis {
            start: a,
            step: (b - a) / (n as f64 - 1.0),
            n,
        }
    }

    pub fn at(&self, k: usize) -> f64 {
        self.start + k as f64 * self.step
    }

    fn interior(&self) -> Axis {
        Axis {
            start: self.start + self.step,
            step: self.step,
            n: self.n - 2,
        }
    }
}

/// Samples on a log-polar grid t = log|x|, ω = cos θ e₁ + sin θ (cos ψ e₂ + sin ψ e₃).
#[derive(Clone, Debug)]
pub struct WarpedField {
    pub t: Axis,
    pub theta: Axis,
    pub psi: Axis,
    pub values: Vec<Complex64>,
}

impl WarpedField {
    pub fn sample<F: Fn(f64, f64, f64) -> Complex64 + Sync>(
        t: Axis,
        theta: Axis,
        psi: Axis,
        f: F,
    ) -> Self {
        let values = (0..t.n * theta.n * psi.n)
            .into_par_iter()
            .map(|idx| {
                let k = idx % psi.n;
                let j = (idx / psi.n) % theta.n;
                let i = idx / (psi.n * theta.n);
                f(t.at(i), theta.at(j), psi.at(k))
            })
            .collect();
        WarpedField {
            t,
            theta,
            psi,
            values,
        }
    }

    fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.theta.n + j) * self.psi.n + k
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> Complex64 {
        self.values[self.idx(i, j, k)]
    }

    pub fn l2(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Both discretizations of the Laplacian on the interior nodes.
#[derive(Clone, Debug)]
pub struct WarpedLaplacian {
    pub direct: WarpedField,
    pub conjugated: WarpedField,
    pub relative_difference: f64,
}

fn sphere_laplacian(g: &[Complex64], f: &WarpedField, i: usize, j: usize, k: usize) -> Complex64 {
    let at = |j: usize, k: usize| g[f.idx(i, j, k)];
    let (dth, dps) = (f.theta.step, f.psi.step);
    let th = f.theta.at(j);
    let c = at(j, k);
    let tt = (at(j + 1, k) - 2.0 * c + at(j - 1, k)) / (dth * dth);
    let t1 = (at(j + 1, k) - at(j - 1, k)) / (2.0 * dth);
    let pp = (at(j, k + 1) - 2.0 * c + at(j, k - 1)) / (dps * dps);
    let s = th.sin();
    tt + t1 * (th.cos() / s) + pp / (s * s)
}

/// Δu computed as e^{−2t}(∂_t² + (n−2)∂_t + Δ_S)u and as
/// e^{−(n+2)t/2}(∂_t² + Δ̂)e^{(n−2)t/2}u with second-order stencils.
pub fn warped_laplacian(u: &WarpedField, tol: f64) -> Result<WarpedLaplacian> {
    if u.t.n < 3 || u.theta.n < 3 || u.psi.n < 3 {
        return Err(Error::invalid(
            "warped grid needs at least 3 nodes per axis",
        ));
    }
    if u.values.len() != u.t.n * u.theta.n * u.psi.n {
        return Err(Error::invalid("warped field size does not match its axes"));
    }
    let (th0, th1) = (u.theta.at(0), u.theta.at(u.theta.n - 1));
    if th0 <= 0.0 || th1 >= PI {
        return Err(Error::invalid("θ axis must stay inside (0, π)"));
    }
    let n = DIM as f64;
    let half = (n - 2.0) / 2.0;
    let w: Vec<Complex64> = u
        .values
        .iter()
        .enumerate()
        .map(|(idx, v)| {
            let i = idx / (u.theta.n * u.psi.n);
            v * (half * u.t.at(i)).exp()
        })
        .collect();
    let (ti, hi, pi) = (u.t.interior(), u.theta.interior(), u.psi.interior());
    let dt = u.t.step;
    let shift = sphere_shift(DIM);
    let total = ti.n * hi.n * pi.n;
    let pairs: Vec<(Complex64, Complex64)> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let k = idx % pi.n + 1;
            let j = (idx / pi.n) % hi.n + 1;
            let i = idx / (pi.n * hi.n) + 1;
            let t = u.t.at(i);
            let c = u.get(i, j, k);
            let utt = (u.get(i + 1, j, k) - 2.0 * c + u.get(i - 1, j, k)) / (dt * dt);
            let ut = (u.get(i + 1, j, k) - u.get(i - 1, j, k)) / (2.0 * dt);
            let direct =
                (utt + ut * (n - 2.0) + sphere_laplacian(&u.values, u, i, j, k)) * (-2.0 * t).exp();
            let wc = w[u.idx(i, j, k)];
            let wtt = (w[u.idx(i + 1, j, k)] - 2.0 * wc + w[u.idx(i - 1, j, k)]) / (dt * dt);
            let conj = (wtt + sphere_laplacian(&w, u, i, j, k) - wc * shift)
                * (-(n + 2.0) / 2.0 * t).exp();
            (direct, conj)
        })
        .collect();
    let direct = WarpedField {
        t: ti,
        theta: hi,
        psi: pi,
        values: pairs.iter().map(|p| p.0).collect(),
    };
    let conjugated = WarpedField {
        t: ti,
        theta: hi,
        psi: pi,
        values: pairs.iter().map(|p| p.1).collect(),
    };
    let diff: f64 = pairs
        .iter()
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt();
    // scale of e^{−2t}u, so harmonic inputs are not divided by zero
    let scale: f64 = (0..total)
        .map(|idx| {
            let k = idx % pi.n + 1;
            let j = (idx / pi.n) % hi.n + 1;
            let i = idx / (pi.n * hi.n) + 1;
            (u.get(i, j, k) * (-2.0 * u.t.at(i)).exp()).norm_sqr()
        })
        .sum::<f64>()
        .sqrt();
    let denom = direct.l2().max(scale);
    let rel = if denom > 0.0 { diff / denom } else { 0.0 };
    if rel > tol {
        return Err(Error::Consistency {
            difference: rel,
            tolerance: tol,
        });
    }
    Ok(WarpedLaplacian {
        direct,
        conjugated,
        relative_difference: rel,
    })
}

// ---------------------------------------------------------------------------
// Fiber profiles and quasimodes

/// Profile b on the fiber half-circle, parametrized by ψ ∈ [0, π].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FiberProfile {
    Constant {
        value: f64,
    },
    Bump {
        center: f64,
        half_width: f64,
        amplitude: f64,
    },
    Sine {
        k: f64,
        amplitude: f64,
    },
}

impl FiberProfile {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FiberProfile::Constant { value } if value.is_finite() => Ok(()),
            FiberProfile::Bump {
                center,
                half_width,
                amplitude,
            } if amplitude.is_finite()
                && half_width > 0.0
                && center - half_width >= 0.0
                && center + half_width <= PI =>
            {
                Ok(())
            }
            FiberProfile::Sine { k, amplitude } if k.is_finite() && amplitude.is_finite() => Ok(()),
            _ => Err(Error::invalid(format!("invalid fiber profile {self:?}"))),
        }
    }

    /// Distance from the support to the fiber endpoints {0, π}.
    pub fn endpoint_margin(&self) -> f64 {
        match *self {
            FiberProfile::Bump {
                center, half_width, ..
            } => (center - half_width).min(PI - center - half_width),
            _ => 0.0,
        }
    }

    pub fn value(&self, psi: f64) -> f64 {
        match *self {
            FiberProfile::Constant { value } => value,
            FiberProfile::Bump {
                center,
                half_width,
                amplitude,
            } => {
                let u = (psi - center) / half_width;
                if u.abs() >= 1.0 {
                    0.0
                } else {
                    amplitude * (-1.0 / (1.0 - u * u)).exp()
                }
            }
            FiberProfile::Sine { k, amplitude } => amplitude * (k * psi).sin(),
        }
    }

    pub fn second_derivative(&self, psi: f64) -> f64 {
        match *self {
            FiberProfile::Constant { .. } => 0.0,
            FiberProfile::Bump {
                center,
                half_width,
                amplitude,
            } => {
                let u = (psi - center) / half_width;
                if u.abs() >= 1.0 {
                    0.0
                } else {
                    let d = 1.0 - u * u;
                    let g = (-1.0 / d).exp();
                    amplitude * g * (6.0 * u.powi(4) - 2.0) / d.powi(4) / (half_width * half_width)
                }
            }
            FiberProfile::Sine { k, amplitude } => -k * k * amplitude * (k * psi).sin(),
        }
    }

    /// Δ̃b = b'' − (n−2)(n−4)/4 · b on the fiber circle.
    pub fn shifted_laplacian(&self, psi: f64) -> f64 {
        self.second_derivative(psi) - fiber_shift(DIM) * self.value(psi)
    }

    fn support(&self) -> (f64, f64) {
        match *self {
            FiberProfile::Bump {
                center, half_width, ..
            } => (center - half_width, center + half_width),
            _ => (0.0, PI),
        }
    }

    /// ∥b∥² on the half-circle.
    pub fn norm_sqr(&self) -> f64 {
        let (a, b) = self.support();
        adaptive(|p| self.value(p).powi(2), a, b, 1e-14).0
    }

    /// ∥Δ̃b∥² on the half-circle.
    pub fn shifted_norm_sqr(&self) -> f64 {
        let (a, b) = self.support();
        adaptive(|p| self.shifted_laplacian(p).powi(2), a, b, 1e-14).0
    }
}

/// Orthonormal frame (y, e, ω₀) with y on the equator of the hemisphere ⟨ω, ω₀⟩ > 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FiberFrame {
    pub y: [f64; 3],
    pub e: [f64; 3],
    pub omega0: [f64; 3],
}

impl FiberFrame {
    pub fn new(y: [f64; 3], omega0: [f64; 3]) -> Result<Self> {
        if (norm3(y) - 1.0).abs() > 1e-12 || (norm3(omega0) - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("frame vectors must be unit"));
        }
        if dot3(y, omega0).abs() > 1e-12 {
            return Err(Error::invalid("base point y must lie on the equator"));
        }
        Ok(FiberFrame {
            y,
            e: cross3(omega0, y),
            omega0,
        })
    }

    /// ω = cos θ y + sin θ (cos ψ e + sin ψ ω₀).
    pub fn point(&self, theta: f64, psi: f64) -> [f64; 3] {
        let (ct, st) = (theta.cos(), theta.sin());
        let (cp, sp) = (psi.cos(), psi.sin());
        std::array::from_fn(|i| ct * self.y[i] + st * (cp * self.e[i] + sp * self.omega0[i]))
    }

    /// (θ, sin θ, ψ) of a direction; ψ is taken in (−π/2, 3π/2].
    pub fn chart(&self, w: [f64; 3]) -> (f64, f64, f64) {
        let a = dot3(w, self.e);
        let c = dot3(w, self.omega0);
        let st = a.hypot(c);
        let theta = st.atan2(dot3(w, self.y));
        let mut psi = c.atan2(a);
        if psi <= -PI / 2.0 {
            psi += TAU;
        }
        (theta, st, psi)
    }
}

/// v_s(ω) = (sin θ)^{−(n−2)/2} e^{isθ} b(η) on the hemisphere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quasimode {
    pub s: Complex64,
    pub frame: FiberFrame,
    pub b: FiberProfile,
}

impl Quasimode {
    pub fn new(s: Complex64, frame: FiberFrame, b: FiberProfile) -> Result<Self> {
        if !(s.im > 0.0) || !s.re.is_finite() || !s.im.is_finite() {
            return Err(Error::OutOfRange {
                name: "Im s",
                value: s.im,
                expected: "> 0",
            });
        }
        b.validate()?;
        Ok(Quasimode { s, frame, b })
    }

    fn power(&self) -> f64 {
        -(DIM as f64 - 2.0) / 2.0
    }

    pub fn eval_chart(&self, theta: f64, st: f64, psi: f64) -> Complex64 {
        let phase = (Complex64::i() * self.s * theta).exp();
        phase * st.powf(self.power()) * self.b.value(psi)
    }

    /// Evaluation at a unit direction.
    pub fn eval(&self, w: [f64; 3]) -> Complex64 {
        let (theta, st, psi) = self.frame.chart(w);
        self.eval_chart(theta, st, psi)
    }

    /// (Δ̂ + s²)v_s through the warped factorization:
    /// (sin θ)^{−(n−2)/2−2} e^{isθ} Δ̃b(η).
    pub fn shifted_operator(&self, w: [f64; 3]) -> Complex64 {
        let (theta, st, psi) = self.frame.chart(w);
        let phase = (Complex64::i() * self.s * theta).exp();
        phase * st.powf(self.power() - 2.0) * self.b.shifted_laplacian(psi)
    }

    /// (Δ̂ + s²)v_s with Δ_S taken from the ambient Laplacian of the degree-0
    /// extension v(x/|x|), fourth-order stencil of width `delta`.
    pub fn shifted_operator_ambient(&self, w: [f64; 3], delta: f64) -> Complex64 {
        let f = |x: [f64; 3]| {
            let r = norm3(x);
            self.eval([x[0] / r, x[1] / r, x[2] / r])
        };
        let c = f(w);
        let mut lap = Complex64::new(0.0, 0.0);
        for axis in 0..3 {
            let shifted = |m: f64| {
                let mut x = w;
                x[axis] += m * delta;
                f(x)
            };
            lap += (-shifted(2.0) + 16.0 * shifted(1.0) - 30.0 * c + 16.0 * shifted(-1.0)
                - shifted(-2.0))
                / (12.0 * delta * delta);
        }
        lap + (self.s * self.s - sphere_shift(DIM)) * c
    }
}

/// Quadrature grid of the quasimode residual.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberGrid {
    pub n_theta: usize,
    pub n_psi: usize,
    pub theta_window: (f64, f64),
    pub stencil: f64,
}

impl Default for FiberGrid {
    fn default() -> Self {
        FiberGrid {
            n_theta: 200,
            n_psi: 200,
            theta_window: (PI / 6.0, 5.0 * PI / 6.0),
            stencil: 1e-3,
        }
    }
}

/// ∥(Δ̂+s²)v_s∥ over the window, its closed form, and the full-hemisphere
/// expression ((1−e^{−Im s π})/Im s)^{1/2}∥Δ̃b∥.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct QuasimodeResidual {
    pub numeric: f64,
    pub window_closed_form: f64,
    pub stated: f64,
    pub theta_window: (f64, f64),
}

impl QuasimodeResidual {
    pub fn relative_gap(&self) -> f64 {
        (self.numeric - self.window_closed_form).abs() / self.window_closed_form
    }
}

/// ((1−e^{−xπ})/x)^{1/2}, with the x → 0 limit √π.
pub fn stated_residual_factor(im_s: f64) -> f64 {
    if im_s.abs() < 1e-12 {
        PI.sqrt()
    } else {
        (-(-im_s * PI).exp_m1() / im_s).sqrt()
    }
}

/// ∫₀^π e^{−2 Im s θ} dθ = (1−e^{−2 Im s π})/(2 Im s).
pub fn exact_norm_factor(im_s: f64) -> f64 {
    if im_s.abs() < 1e-12 {
        PI
    } else {
        -(-2.0 * im_s * PI).exp_m1() / (2.0 * im_s)
    }
}

/// L² norm of (Δ̂+s²)v_s over {θ ∈ window} of the hemisphere, by quadrature of
/// the ambient-stencil operator in the (θ, η) chart.
pub fn quasimode_residual(q: &Quasimode, grid: &FiberGrid) -> Result<QuasimodeResidual> {
    if !(q.s.im > 0.0) {
        return Err(Error::OutOfRange {
            name: "Im s",
            value: q.s.im,
            expected: "> 0",
        });
    }
    let (ta, tb) = grid.theta_window;
    if !(0.0 < ta && ta < tb && tb < PI) {
        return Err(Error::invalid("θ window must satisfy 0 < a < b < π"));
    }
    if grid.n_theta % 2 != 0 || grid.n_psi % 2 != 0 {
        return Err(Error::invalid("fiber grid needs even interval counts"));
    }
    let dpsi = PI / grid.n_psi as f64;
    if matches!(q.b, FiberProfile::Bump { .. }) && q.b.endpoint_margin() < 5.0 * dpsi {
        return Err(Error::Support(format!(
            "profile support margin {:.3e} is below 5 fiber nodes ({:.3e})",
            q.b.endpoint_margin(),
            5.0 * dpsi
        )));
    }
    let dth = (tb - ta) / grid.n_theta as f64;
    let wt = simpson_weights(grid.n_theta, dth)?;
    let wp = simpson_weights(grid.n_psi, dpsi)?;
    let total: f64 = (0..=grid.n_theta)
        .into_par_iter()
        .map(|i| {
            let th = ta + i as f64 * dth;
            let row: f64 = (0..=grid.n_psi)
                .map(|k| {
                    let w = q.frame.point(th, k as f64 * dpsi);
                    wp[k] * q.shifted_operator_ambient(w, grid.stencil).norm_sqr()
                })
                .sum();
            wt[i] * th.sin() * row
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    let k2 = 2.0 * q.s.im;
    let radial = adaptive(
        |th: f64| th.sin().powf(2.0 * (q.power() - 2.0) + 1.0) * (-k2 * th).exp(),
        ta,
        tb,
        1e-14,
    )
    .0;
    let bn = q.b.shifted_norm_sqr();
    Ok(QuasimodeResidual {
        numeric: total.sqrt(),
        window_closed_form: (radial * bn).sqrt(),
        stated: stated_residual_factor(q.s.im) * bn.sqrt(),
        theta_window: grid.theta_window,
    })
}

/// ∥v_s∥² on the hemisphere by quadrature in the (θ, η) chart, with the
/// exact value (1−e^{−2 Im s π})/(2 Im s)∥b∥² and the stated
/// ((1−e^{−Im s π})/Im s)∥b∥².
#[derive(Clone, Copy, Debug, Serialize)]
pub struct QuasimodeNorm {
    pub numeric: f64,
    pub exact: f64,
    pub stated: f64,
}

pub fn quasimode_norm(q: &Quasimode) -> QuasimodeNorm {
    let (pa, pb) = q.b.support();
    let numeric = adaptive(
        |th: f64| {
            let inner = adaptive(
                |psi: f64| q.eval(q.frame.point(th, psi)).norm_sqr(),
                pa,
                pb,
                1e-13,
            )
            .0;
            inner * th.sin()
        },
        0.0,
        PI,
        1e-12,
    )
    .0;
    let b2 = q.b.norm_sqr();
    QuasimodeNorm {
        numeric,
        exact: exact_norm_factor(q.s.im) * b2,
        stated: stated_residual_factor(q.s.im).powi(2) * b2,
    }
}

// ---------------------------------------------------------------------------
// CGO candidates

/// Ball domain Ω.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: [f64; 3],
    pub radius: f64,
}

impl Default for Ball {
    fn default() -> Self {
        Ball {
            center: [0.0, 0.0, 6.0],
            radius: 0.5,
        }
    }
}

/// u_s(x) = |x−x₀|^{−s−(n−2)/2} v_s((x−x₀)/|x−x₀|).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgoCandidate {
    pub x0: [f64; 3],
    pub mode: Quasimode,
    pub eps: f64,
    pub rho0: f64,
}

impl CgoCandidate {
    pub fn new(x0: [f64; 3], mode: Quasimode, eps: f64, rho0: f64) -> Result<Self> {
        if !(eps > 0.0 && rho0 > eps) {
            return Err(Error::invalid("need 0 < ε < ρ₀"));
        }
        Ok(CgoCandidate {
            x0,
            mode,
            eps,
            rho0,
        })
    }

    /// Candidate for x₀ = 0, y = e₁, ω₀ = e₃ with the radial range of `omega`.
    pub fn standard(s: Complex64, b: FiberProfile, omega: &Ball) -> Result<Self> {
        let frame = FiberFrame::new([1.0, 0.0, 0.0], [0.0, 0.0, 1.0])?;
        let mode = Quasimode::new(s, frame, b)?;
        let d = norm3(omega.center);
        Self::new(
            [0.0; 3],
            mode,
            d - 2.0 * omega.radius,
            d + 2.0 * omega.radius,
        )
    }

    pub fn with_re_s(&self, tau: f64) -> Self {
        let mut c = *self;
        c.mode.s = Complex64::new(tau, self.mode.s.im);
        c
    }

    pub fn eval(&self, x: [f64; 3]) -> Complex64 {
        let d = sub3(x, self.x0);
        let r = norm3(d);
        let w = [d[0] / r, d[1] / r, d[2] / r];
        let p = -(self.mode.s + (DIM as f64 - 2.0) / 2.0);
        (p * r.ln()).exp() * self.mode.eval(w)
    }

    /// |x−x₀|^{Re s}(−Δ+q)u through the warped factorization
    /// Δu = |x−x₀|^{−s−(n+2)/2}(Δ̂+s²)v_s.
    pub fn weighted_residual_warped(&self, x: [f64; 3], q: f64) -> Complex64 {
        let d = sub3(x, self.x0);
        let r = norm3(d);
        let w = [d[0] / r, d[1] / r, d[2] / r];
        let n = DIM as f64;
        let s = self.mode.s;
        let lap = (-(s + (n + 2.0) / 2.0) * r.ln()).exp() * self.mode.shifted_operator(w);
        let u = (-(s + (n - 2.0) / 2.0) * r.ln()).exp() * self.mode.eval(w);
        (-lap + q * u) * r.powf(s.re)
    }
}

/// Weighted residual ∥|x−x₀|^{Re s}(−Δ+q)u∥_{L²(Ω)} computed two ways.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CgoResidual {
    pub tau: f64,
    pub ambient: f64,
    pub warped: f64,
    pub step: f64,
    pub nodes: usize,
    pub nodes_per_wavelength: f64,
    /// |s|⁴h²/r_min², a leading-order estimate of the 7-point stencil error.
    pub predicted_error: f64,
}

impl CgoResidual {
    pub fn relative_gap(&self) -> f64 {
        (self.ambient - self.warped).abs() / self.warped.max(f64::MIN_POSITIVE)
    }
}

/// Samples u on a cube of `n` nodes across Ω's diameter (plus one guard layer)
/// and applies the 7-point Laplacian at the nodes inside Ω.
pub fn cgo_residual<Q>(
    c: &CgoCandidate,
    q: Q,
    tau: f64,
    omega: &Ball,
    n: usize,
) -> Result<CgoResidual>
where
    Q: Fn([f64; 3]) -> f64 + Sync,
{
    if n < 3 {
        return Err(Error::invalid("CGO grid needs at least 3 nodes across Ω"));
    }
    if !(omega.radius > 0.0) {
        return Err(Error::invalid("Ω radius must be positive"));
    }
    let c = c.with_re_s(tau);
    let h = 2.0 * omega.radius / (n as f64 - 1.0);
    let dc = sub3(omega.center, c.x0);
    let dist = norm3(dc);
    let (r_min, r_max) = (dist - omega.radius - 2.0 * h, dist + omega.radius + 2.0 * h);
    if r_min < c.eps || r_max > c.rho0 {
        return Err(Error::invalid(format!(
            "|x−x₀| ranges over [{r_min:.3}, {r_max:.3}], outside [ε, ρ₀] = [{}, {}]",
            c.eps, c.rho0
        )));
    }
    if dot3(dc, c.mode.frame.omega0) - omega.radius - 2.0 * h <= 0.0 {
        return Err(Error::invalid(
            "Ω must lie in the open half-space ⟨x−x₀, ω₀⟩ > 0",
        ));
    }
    let s_abs = c.mode.s.norm();
    let ppw = TAU * r_min / (s_abs * h);
    if ppw < MIN_NODES_PER_WAVELENGTH {
        return Err(Error::UnderResolved {
            nodes_per_wavelength: ppw,
            required_step: TAU * r_min / (s_abs * MIN_NODES_PER_WAVELENGTH),
        });
    }
    let m = n + 2;
    let origin: [f64; 3] = std::array::from_fn(|i| omega.center[i] - omega.radius - h);
    let node = |i: usize, j: usize, k: usize| {
        [
            origin[0] + i as f64 * h,
            origin[1] + j as f64 * h,
            origin[2] + k as f64 * h,
        ]
    };
    let u: Vec<Complex64> = (0..m * m * m)
        .into_par_iter()
        .map(|idx| node(idx / (m * m), (idx / m) % m, idx % m))
        .map(|x| c.eval(x))
        .collect();
    let id = |i: usize, j: usize, k: usize| (i * m + j) * m + k;
    let (amb, warp, count) = (1..m - 1)
        .into_par_iter()
        .map(|i| {
            let mut acc = (0.0, 0.0, 0usize);
            for j in 1..m - 1 {
                for k in 1..m - 1 {
                    let x = node(i, j, k);
                    if norm3(sub3(x, omega.center)) > omega.radius + 1e-12 {
                        continue;
                    }
                    let uc = u[id(i, j, k)];
                    let lap = (u[id(i + 1, j, k)]
                        + u[id(i - 1, j, k)]
                        + u[id(i, j + 1, k)]
                        + u[id(i, j - 1, k)]
                        + u[id(i, j, k + 1)]
                        + u[id(i, j, k - 1)]
                        - 6.0 * uc)
                        / (h * h);
                    let qx = q(x);
                    let r = norm3(sub3(x, c.x0));
                    let a = (-lap + qx * uc) * r.powf(tau);
                    acc.0 += a.norm_sqr();
                    acc.1 += c.weighted_residual_warped(x, qx).norm_sqr();
                    acc.2 += 1;
                }
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let vol = h * h * h;
    Ok(CgoResidual {
        tau,
        ambient: (amb * vol).sqrt(),
        warped: (warp * vol).sqrt(),
        step: h,
        nodes: count,
        nodes_per_wavelength: ppw,
        predicted_error: s_abs.powi(4) * h * h / (r_min * r_min),
    })
}

/// ∫_Ω |x−x₀|^{2 Re s}|u_s|² dx on a node grid, with the stated bound
/// ((e^{2ρ₀}−e^{2ε})/2)∥b∥² and the shell value ((ρ₀²−ε²)/2)∥v_s∥².
#[derive(Clone, Copy, Debug, Serialize)]
pub struct WeightedBound {
    pub integral: f64,
    pub stated_bound: f64,
    pub shell_value: f64,
}

pub fn weighted_candidate_bound(c: &CgoCandidate, omega: &Ball, n: usize) -> Result<WeightedBound> {
    if n < 2 {
        return Err(Error::invalid("grid needs at least 2 nodes"));
    }
    let h = 2.0 * omega.radius / n as f64;
    let tau = c.mode.s.re;
    let sum: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            for j in 0..n {
                for k in 0..n {
                    let x: [f64; 3] = std::array::from_fn(|a| {
                        let idx = [i, j, k][a];
                        omega.center[a] - omega.radius + (idx as f64 + 0.5) * h
                    });
                    if norm3(sub3(x, omega.center)) > omega.radius {
                        continue;
                    }
                    let r = norm3(sub3(x, c.x0));
                    acc += r.powf(2.0 * tau) * c.eval(x).norm_sqr();
                }
            }
            acc
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    let b2 = c.mode.b.norm_sqr();
    Ok(WeightedBound {
        integral: sum * h * h * h,
        stated_bound: ((2.0 * c.rho0).exp() - (2.0 * c.eps).exp()) / 2.0 * b2,
        shell_value: (c.rho0 * c.rho0 - c.eps * c.eps) / 2.0 * exact_norm_factor(c.mode.s.im) * b2,
    })
}

/// ∫ f dx over the box around the shell a ≤ |x−x₀| ≤ b in Cartesian nodes, and
/// ∫∫ f e^{nt} dt dω in log-polar coordinates. `f` should vanish outside the shell.
pub fn measure_identity<F>(f: F, x0: [f64; 3], a: f64, b: f64, n: usize) -> Result<(f64, f64)>
where
    F: Fn([f64; 3]) -> f64 + Sync,
{
    if !(0.0 < a && a < b) || n < 4 {
        return Err(Error::invalid("need 0 < a < b and n ≥ 4"));
    }
    let h = 2.0 * b / n as f64;
    let cart: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            for j in 0..n {
                for k in 0..n {
                    let x: [f64; 3] = std::array::from_fn(|ax| {
                        let idx = [i, j, k][ax];
                        x0[ax] - b + (idx as f64 + 0.5) * h
                    });
                    acc += f(x);
                }
            }
            acc
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum::<f64>()
        * h
        * h
        * h;
    let nt = 2 * n;
    let (ta, tb) = (a.ln(), b.ln());
    let wt = simpson_weights(nt, (tb - ta) / nt as f64)?;
    let wm = simpson_weights(nt, 2.0 / nt as f64)?;
    let na = 2 * n;
    let polar: f64 = (0..=nt)
        .into_par_iter()
        .map(|i| {
            let t = ta + i as f64 * (tb - ta) / nt as f64;
            let r = t.exp();
            let mut acc = 0.0;
            for (jm, wmj) in wm.iter().enumerate() {
                let mu = -1.0 + jm as f64 * 2.0 / nt as f64;
                let sm = (1.0 - mu * mu).max(0.0).sqrt();
                for ka in 0..na {
                    let al = ka as f64 * TAU / na as f64;
                    let x = [
                        x0[0] + r * sm * al.cos(),
                        x0[1] + r * sm * al.sin(),
                        x0[2] + r * mu,
                    ];
                    acc += wmj * f(x);
                }
            }
            wt[i] * (DIM as f64 * t).exp() * acc * TAU / na as f64
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    Ok((cart, polar))
}

// ---------------------------------------------------------------------------
// Conductivity fields

/// Row-major 3-D field, x slowest, on the closed box `bounds`.
#[derive(Clone, Debug, PartialEq)]
pub struct Field3 {
    pub dims: [usize; 3],
    pub bounds: [[f64; 2]; 3],
    pub values: Vec<f64>,
}

/// Sidecar descriptor of a binary field file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldDescriptor {
    pub dims: [usize; 3],
    #[serde(rename = "box")]
    pub bounds: [[f64; 2]; 3],
    pub dtype: String,
}

const FIELD_DTYPE: &str = "float64-le";

impl Field3 {
    pub fn sample<F: Fn([f64; 3]) -> f64 + Sync>(
        dims: [usize; 3],
        bounds: [[f64; 2]; 3],
        f: F,
    ) -> Result<Self> {
        let field = Field3 {
            dims,
            bounds,
            values: Vec::new(),
        };
        field.check_geometry()?;
        let values = (0..dims[0] * dims[1] * dims[2])
            .into_par_iter()
            .map(|idx| f(field.point_of(idx)))
            .collect();
        Ok(Field3 { values, ..field })
    }

    fn check_geometry(&self) -> Result<()> {
        for a in 0..3 {
            if self.dims[a] < 4 {
                return Err(Error::invalid("fields need at least 4 nodes per axis"));
            }
            if !(self.bounds[a][1] > self.bounds[a][0]) {
                return Err(Error::invalid("field box must have positive extent"));
            }
        }
        Ok(())
    }

    pub fn step(&self, axis: usize) -> f64 {
        (self.bounds[axis][1] - self.bounds[axis][0]) / (self.dims[axis] as f64 - 1.0)
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    fn split(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.dims[2];
        let j = (idx / self.dims[2]) % self.dims[1];
        [idx / (self.dims[1] * self.dims[2]), j, k]
    }

    fn point_of(&self, idx: usize) -> [f64; 3] {
        let ijk = self.split(idx);
        std::array::from_fn(|a| self.bounds[a][0] + ijk[a] as f64 * self.step(a))
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        self.point_of(self.index(i, j, k))
    }

    fn same_grid(&self, other: &Field3) -> bool {
        self.dims == other.dims && self.bounds == other.bounds
    }

    fn second_derivative(&self, idx: usize, axis: usize) -> f64 {
        let ijk = self.split(idx);
        let n = self.dims[axis];
        let h = self.step(axis);
        let at = |m: usize| {
            let mut p = ijk;
            p[axis] = m;
            self.values[self.index(p[0], p[1], p[2])]
        };
        let i = ijk[axis];
        if i == 0 {
            (2.0 * at(0) - 5.0 * at(1) + 4.0 * at(2) - at(3)) / (h * h)
        } else if i == n - 1 {
            (2.0 * at(n - 1) - 5.0 * at(n - 2) + 4.0 * at(n - 3) - at(n - 4)) / (h * h)
        } else {
            (at(i + 1) - 2.0 * at(i) + at(i - 1)) / (h * h)
        }
    }

    /// 7-point Laplacian with second-order one-sided closure on the faces.
    pub fn laplacian(&self) -> Field3 {
        let values = (0..self.values.len())
            .into_par_iter()
            .map(|idx| (0..3).map(|a| self.second_derivative(idx, a)).sum())
            .collect();
        Field3 {
            values,
            ..self.clone()
        }
    }

    pub fn write(&self, stem: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(stem.with_extension("bin"), bytes)?;
        let desc = FieldDescriptor {
            dims: self.dims,
            bounds: self.bounds,
            dtype: FIELD_DTYPE.to_string(),
        };
        fs::write(
            stem.with_extension("json"),
            serde_json::to_string_pretty(&desc)?,
        )?;
        Ok(())
    }

    pub fn read(stem: &Path) -> Result<Self> {
        let desc: FieldDescriptor =
            serde_json::from_str(&fs::read_to_string(stem.with_extension("json"))?)?;
        if desc.dtype != FIELD_DTYPE {
            return Err(Error::invalid(format!("unsupported dtype {}", desc.dtype)));
        }
        let bytes = fs::read(stem.with_extension("bin"))?;
        let len = desc.dims.iter().product::<usize>();
        if bytes.len() != 8 * len {
            return Err(Error::invalid(format!(
                "field file holds {} bytes, descriptor needs {}",
                bytes.len(),
                8 * len
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let f = Field3 {
            dims: desc.dims,
            bounds: desc.bounds,
            values,
        };
        f.check_geometry()?;
        Ok(f)
    }
}

/// q = Δ√γ/√γ.
pub fn conductivity_to_potential(gamma: &Field3) -> Result<Field3> {
    gamma.check_geometry()?;
    if let Some(v) = gamma.values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::OutOfRange {
            name: "gamma",
            value: *v,
            expected: "positive and finite",
        });
    }
    let root = Field3 {
        values: gamma.values.iter().map(|g| g.sqrt()).collect(),
        ..gamma.clone()
    };
    let lap = root.laplacian();
    Ok(Field3 {
        values: lap
            .values
            .iter()
            .zip(&root.values)
            .map(|(l, r)| l / r)
            .collect(),
        ..gamma.clone()
    })
}

/// Gap between div(γ∇u) in flux form and √γ(Δ−q)(√γu) at interior nodes.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct IdentityCheck {
    pub max_abs: f64,
    pub relative_l2: f64,
    pub step: f64,
}

pub fn conductivity_identity(gamma: &Field3, u: &Field3) -> Result<IdentityCheck> {
    if !gamma.same_grid(u) {
        return Err(Error::invalid("γ and u must share a grid"));
    }
    let q = conductivity_to_potential(gamma)?;
    let v = Field3 {
        values: gamma
            .values
            .iter()
            .zip(&u.values)
            .map(|(g, x)| g.sqrt() * x)
            .collect(),
        ..u.clone()
    };
    let lv = v.laplacian();
    let d = gamma.dims;
    let (mut max_abs, mut num, mut den) = (0.0f64, 0.0, 0.0);
    for i in 1..d[0] - 1 {
        for j in 1..d[1] - 1 {
            for k in 1..d[2] - 1 {
                let c = gamma.index(i, j, k);
                let mut div = 0.0;
                for a in 0..3 {
                    let h = gamma.step(a);
                    let mut p = [i, j, k];
                    p[a] += 1;
                    let up = gamma.index(p[0], p[1], p[2]);
                    p[a] -= 2;
                    let dn = gamma.index(p[0], p[1], p[2]);
                    let gp = 0.5 * (gamma.values[c] + gamma.values[up]);
                    let gm = 0.5 * (gamma.values[c] + gamma.values[dn]);
                    div += (gp * (u.values[up] - u.values[c]) - gm * (u.values[c] - u.values[dn]))
                        / (h * h);
                }
                let rhs = gamma.values[c].sqrt() * (lv.values[c] - q.values[c] * v.values[c]);
                max_abs = max_abs.max((div - rhs).abs());
                num += (div - rhs).powi(2);
                den += div * div;
            }
        }
    }
    Ok(IdentityCheck {
        max_abs,
        relative_l2: if den > 0.0 {
            (num / den).sqrt()
        } else {
            num.sqrt()
        },
        step: gamma.step(0),
    })
}
