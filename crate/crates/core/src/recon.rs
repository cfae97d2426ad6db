//! Filtered backprojection, perturbative inversion of X_w, and the hemisphere pipeline.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::sync::OnceLock;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::euclid_xray::{
    weight_deviation, x_ray_adjoint, x_ray_forward, x_ray_forward_with, EuclidRayData,
    EuclidRayGrid, PlaneField, WeightSpec, DEFAULT_HALF_WIDTH,
};
use crate::geometry::{dot, sphere_distance, S2Point};
use crate::hemi_xray::{
    mu_norm, t_lambda_forward, HemiRayData, RayGrid, SphereField, SphereFunction,
    DEFAULT_SPHERE_GRID,
};
use crate::spectral::{fractional_multiplier, sobolev_norm, MultiplierKind, ZeroModePolicy};

pub const DEFAULT_GRID: usize = 256;
pub const DEFAULT_ANGLES: usize = 360;
pub const DEFAULT_PROBE_WIDTH: f64 = 0.3;
pub const CONTRACTION_THRESHOLD: f64 = 0.2;
const MIN_RELAX: f64 = 1.0 / 8.0;
/// Calibration fails when the relative fit residual reaches this level.
pub const CALIBRATION_LIMIT: f64 = 0.05;
const CALIBRATION_PADDING: usize = 4;

/// c_d = 4(2π)^{(d−1)/2} Γ((d−1)/2), as printed; reported for comparison only.
pub fn printed_cd(d: usize) -> f64 {
    let a = (d as f64 - 1.0) / 2.0;
    4.0 * TAU.powf(a) * statrs::function::gamma::gamma(a)
}

/// Zero-mean probe e^{−r²/σ²} − ½ e^{−r²/(2σ²)}, truncated at 12σ or the box.
pub fn dog_probe(n: usize, half_width: f64, width: f64) -> Result<PlaneField> {
    let cut = (12.0 * width).min(0.9 * half_width);
    PlaneField::from_fn(n, half_width, move |x, y| {
        let r2 = x * x + y * y;
        if r2 > cut * cut {
            0.0
        } else {
            (-r2 / (width * width)).exp() - 0.5 * (-r2 / (2.0 * width * width)).exp()
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub n: usize,
    pub angles: usize,
    pub probe_width: f64,
    pub c_hat: f64,
    /// ∥X₀*X₀g − ĉ|D|⁻¹g∥ / ∥ĉ|D|⁻¹g∥ after the fit.
    pub residual: f64,
    pub printed_cd: f64,
}

/// Fits ĉ in X₀*X₀ ≈ ĉ|D|⁻¹ on a zero-mean probe.
pub fn calibrate_cd(n: usize, probe_width: f64, angles: usize) -> Result<CalibrationReport> {
    let r = fit_cd(n, probe_width, angles)?;
    if !(r.residual < CALIBRATION_LIMIT) {
        return Err(Error::Calibration {
            residual: r.residual,
            limit: CALIBRATION_LIMIT,
        });
    }
    Ok(r)
}

/// The least-squares fit behind [`calibrate_cd`], without the residual check.
pub fn fit_cd(n: usize, probe_width: f64, angles: usize) -> Result<CalibrationReport> {
    if !(probe_width > 0.0) {
        return Err(Error::invalid("probe width must be positive"));
    }
    let g = dog_probe(n, DEFAULT_HALF_WIDTH, probe_width)?;
    let grid = EuclidRayGrid::for_field(&g, angles)?;
    let a = x_ray_adjoint(
        &x_ray_forward(&g, &WeightSpec::Unit, &grid)?,
        &WeightSpec::Unit,
        n,
        g.half_width(),
    )?;
    let b = padded_inverse_gradient(&g, CALIBRATION_PADDING)?;
    // lines through points beyond the inscribed disk leave the sampled offset range
    let r = g.half_width() - 2.0 * g.step();
    let disk = |f: PlaneField| f.map(|x, y, v| if x * x + y * y <= r * r { v } else { 0.0 });
    let (a, b) = (disk(a), disk(b));
    let c_hat = a.inner(&b) / b.inner(&b);
    let residual = a.axpy(-c_hat, &b)?.l2_norm() / (c_hat.abs() * b.l2_norm());
    Ok(CalibrationReport {
        n,
        angles,
        probe_width,
        c_hat,
        residual,
        printed_cd: printed_cd(2),
    })
}

/// |D|⁻¹g evaluated on a grid enlarged `pad` times, then cropped, to suppress the periodic
/// images of the slowly decaying tail.
pub fn padded_inverse_gradient(g: &PlaneField, pad: usize) -> Result<PlaneField> {
    let (n, s) = (g.n(), g.half_width());
    let big_n = (n * pad).next_power_of_two();
    let off = (big_n - n) / 2;
    let mut vals = vec![0.0; big_n * big_n];
    for i in 0..n {
        for j in 0..n {
            vals[(i + off) * big_n + j + off] = g.get(i, j);
        }
    }
    let big = PlaneField::new(big_n, s * big_n as f64 / n as f64, vals)?;
    let (b, _) = fractional_multiplier(
        &big,
        -1.0,
        MultiplierKind::Homogeneous,
        ZeroModePolicy::Zero,
    )?;
    let out = (0..n * n)
        .map(|k| b.get(k / n + off, k % n + off))
        .collect();
    PlaneField::new(n, s, out)
}

/// ĉ at the default resolution, computed once per process.
pub fn calibrated_constant() -> f64 {
    static C: OnceLock<f64> = OnceLock::new();
    *C.get_or_init(|| {
        calibrate_cd(DEFAULT_GRID, DEFAULT_PROBE_WIDTH, DEFAULT_ANGLES)
            .expect("default calibration is well conditioned")
            .c_hat
    })
}

/// |D_p| applied along the offset variable: 2π times the Ram-Lak convolution, with zero
/// padding so the convolution is linear rather than circular.
pub fn ramp_filter(data: &EuclidRayData) -> EuclidRayData {
    ramp_filter_extended(data, 0)
}

/// [`ramp_filter`] evaluated on the offset grid extended by `pad` samples on each side.
/// The filtered data do not vanish outside the support of the data.
pub fn ramp_filter_extended(data: &EuclidRayData, pad: usize) -> EuclidRayData {
    let grid = *data.grid();
    let (np, dp) = (grid.n_p, grid.dp());
    let n_out = np + 2 * pad;
    let len = (2 * (np + pad) + 2).next_power_of_two();
    let mut kernel = vec![Complex64::new(0.0, 0.0); len];
    for (k, slot) in kernel.iter_mut().enumerate() {
        let n = if k <= len / 2 {
            k as i64
        } else {
            k as i64 - len as i64
        };
        let v = if n == 0 {
            1.0 / (4.0 * dp * dp)
        } else if n % 2 != 0 {
            -1.0 / ((n * n) as f64 * PI * PI * dp * dp)
        } else {
            0.0
        };
        *slot = Complex64::new(TAU * v * dp / len as f64, 0.0);
    }
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    fwd.process(&mut kernel);
    let rows: Vec<Vec<f64>> = (0..grid.n_phi)
        .into_par_iter()
        .map(|k| {
            let mut buf = vec![Complex64::new(0.0, 0.0); len];
            for m in 0..np {
                buf[m] = Complex64::new(data.get(k, m), 0.0);
            }
            fwd.process(&mut buf);
            for (b, h) in buf.iter_mut().zip(&kernel) {
                *b *= h;
            }
            inv.process(&mut buf);
            // output offset j ∈ [−pad, np + pad) sits at index j mod len
            (0..n_out).map(|m| buf[(m + len - pad) % len].re).collect()
        })
        .collect();
    let ext = EuclidRayGrid::new(grid.n_phi, n_out, grid.half_width + pad as f64 * dp)
        .expect("extension of a valid grid");
    EuclidRayData::new(ext, rows.concat()).expect("finite filtered data")
}

/// X₀⁻¹F = ĉ⁻¹|D|X₀*F = ĉ⁻¹X₀*|D_p|F on the n×n grid over [−S,S]².
pub fn fbp_invert_with(
    data: &EuclidRayData,
    c_hat: f64,
    n: usize,
    half_width: f64,
) -> Result<PlaneField> {
    let dp = data.grid().dp();
    // lines through the box corners reach |p| = √2·S
    let reach = half_width * std::f64::consts::SQRT_2 + 2.0 * half_width / n as f64;
    let pad = ((reach - data.grid().half_width) / dp).ceil().max(0.0) as usize + 2;
    let q = ramp_filter_extended(data, pad);
    Ok(x_ray_adjoint(&q, &WeightSpec::Unit, n, half_width)?.scale(1.0 / c_hat))
}

/// FBP with the calibrated constant onto the grid matched to the ray offsets.
pub fn fbp_invert(data: &EuclidRayData) -> Result<PlaneField> {
    let g = data.grid();
    fbp_invert_with(data, calibrated_constant(), g.n_p, g.half_width)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IterationForm {
    /// f ← f + ω·X₀⁻¹(F − X_w f)
    #[default]
    Residual,
    /// f ← (1−ω)f + ω·X₀⁻¹(F − X_{w−1} f)
    Perturbation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertOptions {
    pub max_iters: usize,
    pub relax: f64,
    pub tol: f64,
    pub threshold: f64,
    /// Known support radius; iterates are restricted to this ball.
    pub support_radius: Option<f64>,
    /// Overrides the calibrated constant.
    pub c_hat: Option<f64>,
    pub form: IterationForm,
    /// Output grid; defaults to the grid matched to the ray offsets.
    pub grid: Option<(usize, f64)>,
    /// A residual that shrinks by less than this fraction per iteration has stalled.
    pub stall: f64,
    /// Stalling below this fraction of ∥F∥ counts as reaching the data floor.
    pub floor: f64,
    /// Expected relative noise in F; raises the floor to twice this level.
    pub noise_level: f64,
}

impl Default for InvertOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            relax: 1.0,
            tol: 1e-6,
            threshold: CONTRACTION_THRESHOLD,
            support_radius: None,
            c_hat: None,
            form: IterationForm::Residual,
            grid: None,
            stall: 0.01,
            floor: 1e-2,
            noise_level: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconReport {
    pub iterations: usize,
    pub converged: bool,
    /// Stopped because the residual reached the data floor rather than by `tol`.
    pub stalled: bool,
    pub relative_error: Option<f64>,
    /// ∥F − X_w f_k∥ before each update, starting from f₀ = 0.
    pub residual_history: Vec<f64>,
    /// ∥f_{k+1} − f_k∥ / ∥f_{k+1}∥.
    pub update_history: Vec<f64>,
    pub c_hat: f64,
    pub relax: f64,
    pub weight_deviation: f64,
    pub threshold: f64,
    pub form: IterationForm,
}

impl ReconReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn relative_error(f: &PlaneField, truth: &PlaneField) -> Result<f64> {
    let d = f.axpy(-1.0, truth)?.l2_norm();
    let t = truth.l2_norm();
    Ok(if t > 0.0 { d / t } else { d })
}

/// Iterative inversion of X_w with the FBP inverse of X₀ as preconditioner.
///
/// Each rise of the residual over three consecutive iterations halves ω and restarts from the
/// best iterate; below ω = 1/8 this errors with [`Error::Divergence`]. A residual that stalls
/// above the data floor also errors, since the preconditioned map is then not contracting.
pub fn weighted_invert(
    data: &EuclidRayData,
    w: &WeightSpec,
    opts: &InvertOptions,
    truth: Option<&PlaneField>,
) -> Result<(PlaneField, ReconReport)> {
    w.validate()?;
    if opts.max_iters == 0 || !(opts.relax > 0.0 && opts.relax <= 1.0) || !(opts.tol > 0.0) {
        return Err(Error::invalid(
            "need max_iters >= 1, 0 < relax <= 1 and tol > 0",
        ));
    }
    if !(opts.stall > 0.0 && opts.stall < 1.0 && opts.floor >= 0.0 && opts.noise_level >= 0.0) {
        return Err(Error::invalid(
            "need 0 < stall < 1, floor >= 0 and noise_level >= 0",
        ));
    }
    let grid = *data.grid();
    let (n, half_width) = opts.grid.unwrap_or((grid.n_p, grid.half_width));
    let c_hat = opts.c_hat.unwrap_or_else(calibrated_constant);
    let radius = match opts.support_radius {
        Some(r) => r,
        None => data_support_radius(data),
    };
    let deviation = weight_deviation(w, radius);
    let mask = |f: PlaneField| -> PlaneField {
        match opts.support_radius {
            Some(r) => f.map(|x, y, v| if x * x + y * y <= r * r { v } else { 0.0 }),
            None => f,
        }
    };
    let fbp = |d: &EuclidRayData| -> Result<PlaneField> {
        Ok(mask(fbp_invert_with(d, c_hat, n, half_width)?))
    };
    let mut report = ReconReport {
        iterations: 0,
        converged: false,
        stalled: false,
        relative_error: None,
        residual_history: Vec::new(),
        update_history: Vec::new(),
        c_hat,
        relax: opts.relax,
        weight_deviation: deviation,
        threshold: opts.threshold,
        form: opts.form,
    };
    let mut f = PlaneField::zeros(n, half_width)?;
    if data.values().iter().all(|&v| v == 0.0) {
        report.converged = true;
        report.residual_history.push(0.0);
        report.relative_error = truth.map(|t| relative_error(&f, t)).transpose()?;
        return Ok((f, report));
    }
    let minus_one = |t: f64, r: f64| w.eval_r(t, r) - 1.0;
    let perturbed = !w.is_unit();
    let fbp_data = match opts.form {
        IterationForm::Perturbation => Some(fbp(data)?),
        IterationForm::Residual => None,
    };
    let mut relax = opts.relax;
    let mut best = (f64::INFINITY, f.clone());
    let mut rises = 0usize;
    let floor = opts.floor.max(2.0 * opts.noise_level);
    let divergence = |iteration: usize, reason: String| Error::Divergence {
        iteration,
        weight_deviation: deviation,
        threshold: opts.threshold,
        reason,
    };
    for k in 1..=opts.max_iters {
        let xf = x_ray_forward(&f, w, &grid)?;
        let resid = data.axpy(-1.0, &xf)?;
        let rn = resid.l2_norm();
        if let Some(&prev) = report.residual_history.last() {
            rises = if rn > prev { rises + 1 } else { 0 };
        }
        report.residual_history.push(rn);
        if rn < best.0 {
            best = (rn, f.clone());
        }
        if rises >= 3 {
            relax *= 0.5;
            rises = 0;
            if relax < MIN_RELAX {
                return Err(divergence(
                    k,
                    "residual increased over 3 consecutive iterations".into(),
                ));
            }
            f = best.1.clone();
            continue;
        }
        let h = &report.residual_history;
        if k >= 3 && rises == 0 && rn > (1.0 - opts.stall) * h[h.len() - 2] {
            let level = rn / h[0];
            if level <= floor {
                report.converged = true;
                report.stalled = true;
                break;
            }
            return Err(divergence(
                k,
                format!("residual stalled at {level:.3} of the data norm (floor {floor:.1e})"),
            ));
        }
        let next = match opts.form {
            IterationForm::Residual => f.axpy(relax, &fbp(&resid)?)?,
            IterationForm::Perturbation => {
                let target = match perturbed {
                    true => fbp_data
                        .as_ref()
                        .expect("set for this form")
                        .axpy(-1.0, &fbp(&x_ray_forward_with(&f, minus_one, &grid)?)?)?,
                    false => fbp_data.clone().expect("set for this form"),
                };
                f.scale(1.0 - relax).axpy(relax, &target)?
            }
        };
        let step = next.axpy(-1.0, &f)?.l2_norm();
        let size = next.l2_norm();
        let upd = if size > 0.0 { step / size } else { step };
        report.update_history.push(upd);
        report.iterations = k;
        f = next;
        if upd < opts.tol {
            report.converged = true;
            break;
        }
    }
    report.relax = relax;
    report.relative_error = truth.map(|t| relative_error(&f, t)).transpose()?;
    Ok((f, report))
}

fn data_support_radius(data: &EuclidRayData) -> f64 {
    let g = data.grid();
    let mut r: f64 = 0.0;
    for k in 0..g.n_phi {
        for m in 0..g.n_p {
            if data.get(k, m) != 0.0 {
                r = r.max(g.p(m).abs() + g.dp());
            }
        }
    }
    r.min(g.half_width)
}

/// Support radius (α₀⁻² − 1)^{1/2} of the stereographic image of the cap {x₃ > α₀}.
pub fn cap_radius(alpha0: f64) -> Result<f64> {
    if !(alpha0 > 0.0 && alpha0 < 1.0) {
        return Err(Error::OutOfRange {
            name: "alpha0",
            value: alpha0,
            expected: "0 < alpha0 < 1",
        });
    }
    Ok((alpha0.powi(-2) - 1.0).sqrt())
}

/// Largest λ in `grid` with sup|w_λ − 1| below `threshold` on lines through the support ball.
pub fn lambda_hat_0(grid: &[f64], alpha0: f64, threshold: f64) -> Result<f64> {
    let r = cap_radius(alpha0)?;
    grid.iter()
        .copied()
        .filter(|&l| {
            l >= 0.0 && weight_deviation(&WeightSpec::Attenuated { lambda: l }, r) < threshold
        })
        .fold(None, |acc: Option<f64>, l| {
            Some(acc.map_or(l, |a| a.max(l)))
        })
        .ok_or_else(|| Error::invalid("no admissible attenuation in the grid"))
}

/// Resolution of the hemisphere pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct HemiReconOptions {
    pub plane_grid: usize,
    pub half_width: f64,
    pub angles: usize,
    pub sphere_grid: usize,
    pub invert: InvertOptions,
}

impl Default for HemiReconOptions {
    fn default() -> Self {
        Self {
            plane_grid: DEFAULT_GRID,
            half_width: DEFAULT_HALF_WIDTH,
            angles: DEFAULT_ANGLES,
            sphere_grid: DEFAULT_SPHERE_GRID,
            invert: InvertOptions::default(),
        }
    }
}

/// Reads hemisphere data on Euclidean lines: the line with direction u = (cos φ, sin φ) and
/// foot z = p u⊥ corresponds to x' = u and ξ = (z,1)/⟨z⟩, i.e. β = π/2 − arctan p, and
/// carries ⟨z⟩⁻¹ T_λ⁺f = X_{w_λ}h.
pub fn hemi_to_euclid(data: &HemiRayData, grid: &EuclidRayGrid) -> Result<EuclidRayData> {
    let values = (0..grid.len())
        .map(|idx| {
            let (k, m) = (idx / grid.n_p, idx % grid.n_p);
            let p = grid.p(m);
            data.interp(grid.phi(k), FRAC_PI_2 - p.atan()) / (1.0 + p * p).sqrt()
        })
        .collect();
    EuclidRayData::new(*grid, values)
}

/// Pulls a planar field back to the cap: f(x) = ⟨z⟩² h(z), z = x'/x₃.
pub fn pull_back(h: &PlaneField, n: usize, alpha0: f64) -> Result<SphereField> {
    let lift = |x: &[f64; 3]| {
        let z = [x[0] / x[2], x[1] / x[2]];
        (1.0 + z[0] * z[0] + z[1] * z[1]) * h.interp(z[0], z[1])
    };
    SphereField::from_fn(n, n, Some(alpha0), &lift)
}

/// The planar function h(z) = ⟨z⟩⁻² f(σ₊⁻¹ z).
pub fn push_forward<F: SphereFunction>(f: &F, n: usize, half_width: f64) -> Result<PlaneField> {
    PlaneField::from_fn(n, half_width, |x, y| {
        let b2 = 1.0 + x * x + y * y;
        let b = b2.sqrt();
        f.eval(&[x / b, y / b, 1.0 / b]) / b2
    })
}

/// Inverts T_λ⁺ on cap-supported functions through the stereographic reduction.
pub fn hemi_reconstruct(
    data: &HemiRayData,
    lambda: f64,
    alpha0: f64,
    opts: &HemiReconOptions,
) -> Result<(SphereField, ReconReport)> {
    let radius = cap_radius(alpha0)?;
    let grid = EuclidRayGrid::new(opts.angles, opts.plane_grid, opts.half_width)?;
    let euclid = hemi_to_euclid(data, &grid)?;
    let mut inv = opts.invert.clone();
    inv.support_radius = Some(radius);
    inv.grid = Some((opts.plane_grid, opts.half_width));
    let w = WeightSpec::attenuated(lambda)?;
    let (h, report) = weighted_invert(&euclid, &w, &inv, None)?;
    Ok((pull_back(&h, opts.sphere_grid, alpha0)?, report))
}

/// Relative L² distance on S²₊ between a field and an analytic reference.
pub fn sphere_relative_error<F: SphereFunction>(f: &SphereField, truth: &F) -> Result<f64> {
    let (nt, np) = f.dims();
    let t = SphereField::from_fn(nt, np, f.cap(), truth)?;
    let diff = SphereField::new(
        nt,
        np,
        f.values()
            .iter()
            .zip(t.values())
            .map(|(a, b)| a - b)
            .collect(),
        None,
    )?;
    let tn = t.l2_norm();
    Ok(if tn > 0.0 {
        diff.l2_norm() / tn
    } else {
        diff.l2_norm()
    })
}

/// ∥⟨z⟩⁻²(f∘σ₊⁻¹)∥_{H^{−1/2}(R²)}, the surrogate for the H^{−1/2}(S²₊) norm.
pub fn h_minus_half_surrogate<F: SphereFunction>(f: &F, n: usize, half_width: f64) -> Result<f64> {
    let h = push_forward(f, n, half_width)?;
    sobolev_norm(
        &h,
        -0.5,
        MultiplierKind::Inhomogeneous,
        ZeroModePolicy::Reject,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    Gaussian,
    CapBump,
}

/// Smooth bump on S²₊ centred at `center` with geodesic width `width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    #[serde(rename = "type")]
    pub kind: PhantomKind,
    pub center: [f64; 3],
    pub width: f64,
    pub amplitude: f64,
}

impl Phantom {
    pub fn validate(&self, alpha0: f64) -> Result<()> {
        let c = S2Point::normalize(self.center)?;
        if !(self.width > 0.0) || !self.amplitude.is_finite() {
            return Err(Error::invalid(
                "phantom needs a positive width and finite amplitude",
            ));
        }
        // geodesic distance from the centre to the cap boundary {x₃ = α₀}
        let margin = c.height().clamp(-1.0, 1.0).acos();
        let room = alpha0.acos() - margin;
        let reach = match self.kind {
            PhantomKind::CapBump => self.width,
            PhantomKind::Gaussian => 4.0 * self.width,
        };
        if !(room > reach) {
            return Err(Error::Support(format!(
                "phantom reaches {reach:.3} rad from its centre but the cap leaves {room:.3} rad"
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64; 3]) -> f64 {
        let n = crate::geometry::norm(&self.center);
        let c = [self.center[0] / n, self.center[1] / n, self.center[2] / n];
        let d = dot(x, &c).clamp(-1.0, 1.0).acos();
        let s = d / self.width;
        match self.kind {
            PhantomKind::Gaussian => self.amplitude * (-s * s).exp(),
            PhantomKind::CapBump => {
                if s < 1.0 {
                    self.amplitude * (1.0 - 1.0 / (1.0 - s * s)).exp()
                } else {
                    0.0
                }
            }
        }
    }
}

/// Sum of phantoms, zero outside the cap.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSet {
    pub phantoms: Vec<Phantom>,
    pub alpha0: f64,
}

impl PhantomSet {
    pub fn new(phantoms: Vec<Phantom>, alpha0: f64) -> Result<Self> {
        cap_radius(alpha0)?;
        for p in &phantoms {
            p.validate(alpha0)?;
        }
        Ok(Self { phantoms, alpha0 })
    }

    pub fn from_json(s: &str, alpha0: f64) -> Result<Self> {
        Self::new(serde_json::from_str(s)?, alpha0)
    }

    /// Default smooth cap phantom used by the round-trip experiments.
    pub fn default_cap(alpha0: f64) -> Result<Self> {
        let tilt = 0.25f64;
        Self::new(
            vec![
                Phantom {
                    kind: PhantomKind::CapBump,
                    center: [tilt.sin(), 0.0, tilt.cos()],
                    width: 0.6,
                    amplitude: 1.0,
                },
                Phantom {
                    kind: PhantomKind::Gaussian,
                    center: [-0.2, 0.25, 1.0],
                    width: 0.12,
                    amplitude: 0.5,
                },
            ],
            alpha0,
        )
    }
}

impl SphereFunction for PhantomSet {
    fn eval(&self, x: &[f64; 3]) -> f64 {
        if x[2] <= self.alpha0 {
            return 0.0;
        }
        self.phantoms.iter().map(|p| p.eval(x)).sum()
    }
}

/// Adds Gaussian noise with standard deviation `relative`·rms(F).
pub fn add_noise(data: &HemiRayData, relative: f64, seed: u64) -> Result<HemiRayData> {
    if !(relative >= 0.0) {
        return Err(Error::invalid("noise level must be nonnegative"));
    }
    let mut out = data.clone();
    if relative == 0.0 {
        return Ok(out);
    }
    let v = data.values();
    let rms = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for x in out.values_mut() {
        let e: f64 = StandardNormal.sample(&mut rng);
        *x += relative * rms * e;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityRow {
    pub lambda: f64,
    pub noise: f64,
    /// max over phantoms of ∥f∥_{H^{−1/2}} / ∥T_λ⁺f∥_μ
    pub ratio: f64,
    /// max over phantoms of the relative reconstruction error; NaN when not reconstructed
    /// or when the inversion diverged.
    pub err: f64,
    /// max over phantoms of ∥f_rec − f∥_{H^{−1/2}} / ∥noise∥_μ (NaN without noise).
    pub noise_gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityOptions {
    pub rays: RayGrid,
    pub recon: HemiReconOptions,
    pub reconstruct: bool,
    pub seed: u64,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        Self {
            rays: RayGrid::default(),
            recon: HemiReconOptions::default(),
            reconstruct: true,
            seed: 0,
        }
    }
}

/// Stability sweep over (λ, noise).
pub fn stability_probe(
    phantoms: &[PhantomSet],
    lambdas: &[f64],
    noises: &[f64],
    opts: &StabilityOptions,
) -> Result<Vec<StabilityRow>> {
    if phantoms.is_empty() || lambdas.is_empty() || noises.is_empty() {
        return Err(Error::invalid(
            "stability sweep needs phantoms, lambdas and noise levels",
        ));
    }
    let (n, s) = (opts.recon.plane_grid, opts.recon.half_width);
    let norms = phantoms
        .iter()
        .map(|p| h_minus_half_surrogate(p, n, s))
        .collect::<Result<Vec<f64>>>()?;
    let mut rows = Vec::new();
    for (li, &lambda) in lambdas.iter().enumerate() {
        let clean = phantoms
            .iter()
            .map(|p| t_lambda_forward(p, lambda, &opts.rays))
            .collect::<Result<Vec<_>>>()?;
        let ratio = clean
            .iter()
            .zip(&norms)
            .map(|(d, nf)| nf / mu_norm(d))
            .fold(0.0, f64::max);
        for (ni, &noise) in noises.iter().enumerate() {
            let mut recon = opts.recon.clone();
            recon.invert.noise_level = noise;
            let mut err = f64::NAN;
            let mut gain = f64::NAN;
            if opts.reconstruct {
                let mut e_max: f64 = 0.0;
                let mut g_max: f64 = 0.0;
                for (pi, (p, d)) in phantoms.iter().zip(&clean).enumerate() {
                    let seed = opts.seed ^ ((li as u64) << 40) ^ ((ni as u64) << 20) ^ pi as u64;
                    let noisy = add_noise(d, noise, seed)?;
                    match hemi_reconstruct(&noisy, lambda, p.alpha0, &recon) {
                        Ok((f, _)) => {
                            e_max = e_max.max(sphere_relative_error(&f, p)?);
                            if noise > 0.0 {
                                let diff = |x: &[f64; 3]| f.interp(x) - p.eval(x);
                                let en = h_minus_half_surrogate(&diff, n, s)?;
                                let nd = HemiRayData::new(
                                    *d.grid(),
                                    lambda,
                                    noisy
                                        .values()
                                        .iter()
                                        .zip(d.values())
                                        .map(|(a, b)| a - b)
                                        .collect(),
                                )?;
                                g_max = g_max.max(en / mu_norm(&nd));
                            }
                        }
                        Err(Error::Divergence { .. }) => e_max = f64::NAN,
                        Err(e) => return Err(e),
                    }
                }
                err = e_max;
                if noise > 0.0 {
                    gain = g_max;
                }
            }
            rows.push(StabilityRow {
                lambda,
                noise,
                ratio,
                err,
                noise_gain: gain,
            });
        }
    }
    Ok(rows)
}

pub fn write_stability_csv<W: std::io::Write>(out: W, rows: &[StabilityRow]) -> Result<()> {
    let table: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| vec![r.lambda, r.noise, r.ratio, r.err])
        .collect();
    crate::io::write_table(out, &["lambda", "noise", "ratio", "err"], &table)
}

/// Geodesic distance helper for phantom placement.
pub fn cap_margin(center: &[f64; 3], alpha0: f64) -> Result<f64> {
    let c = S2Point::normalize(*center)?;
    let pole = S2Point::new([0.0, 0.0, 1.0])?;
    Ok(alpha0.acos() - sphere_distance(&c, &pole))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smooth_phantom(n: usize) -> PlaneField {
        PlaneField::from_fn(n, 4.0, |x, y| {
            let r2 = (x - 0.3).powi(2) + (y + 0.2).powi(2);
            let s2 = (x + 0.5).powi(2) * 2.0 + (y - 0.4).powi(2);
            let v = (-r2 / 0.5).exp() + 0.5 * (-s2 / 0.3).exp();
            if x * x + y * y < 6.0 {
                v
            } else {
                0.0
            }
        })
        .unwrap()
    }

    #[test]
    fn printed_constant() {
        assert!((printed_cd(2) - 4.0 * 2f64.sqrt() * PI).abs() < 1e-12);
    }

    #[test]
    fn ramp_filter_is_linear() {
        let g = EuclidRayGrid::new(4, 32, 4.0).unwrap();
        let a =
            EuclidRayData::new(g, (0..g.len()).map(|k| (k as f64 * 0.37).sin()).collect()).unwrap();
        let b =
            EuclidRayData::new(g, (0..g.len()).map(|k| (k as f64 * 0.11).cos()).collect()).unwrap();
        let lhs = ramp_filter(&a.axpy(2.5, &b).unwrap());
        let rhs = ramp_filter(&a).axpy(2.5, &ramp_filter(&b)).unwrap();
        for (x, y) in lhs.values().iter().zip(rhs.values()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn extended_filter_agrees_on_the_sampled_range() {
        let g = EuclidRayGrid::new(3, 32, 4.0).unwrap();
        let a = EuclidRayData::new(
            g,
            (0..g.len())
                .map(|k| (-((k % 32) as f64 - 16.0).powi(2) / 20.0).exp())
                .collect(),
        )
        .unwrap();
        let plain = ramp_filter(&a);
        let ext = ramp_filter_extended(&a, 7);
        assert_eq!(ext.grid().n_p, 46);
        for k in 0..3 {
            for m in 0..32 {
                assert!((plain.get(k, m) - ext.get(k, m + 7)).abs() < 1e-12);
                assert!((ext.grid().p(m + 7) - g.p(m)).abs() < 1e-12);
            }
            // the ramp-filtered tail is negative off the support
            assert!(ext.get(k, 0) < 0.0 && ext.get(k, 45) < 0.0);
        }
    }

    #[test]
    fn fbp_zero_and_linearity() {
        let g = EuclidRayGrid::new(36, 32, 4.0).unwrap();
        let z = fbp_invert_with(&EuclidRayData::zeros(g), 4.0 * PI, 32, 4.0).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
        let f1 = x_ray_forward(&smooth_phantom(32), &WeightSpec::Unit, &g).unwrap();
        let f2 = EuclidRayData::new(
            g,
            (0..g.len())
                .map(|k| ((k % 32) as f64 - 16.0).abs().sqrt())
                .collect(),
        )
        .unwrap();
        let lhs =
            fbp_invert_with(&f1.scale(2.0).axpy(-3.0, &f2).unwrap(), 4.0 * PI, 32, 4.0).unwrap();
        let rhs = fbp_invert_with(&f1, 4.0 * PI, 32, 4.0)
            .unwrap()
            .scale(2.0)
            .axpy(-3.0, &fbp_invert_with(&f2, 4.0 * PI, 32, 4.0).unwrap())
            .unwrap();
        for (x, y) in lhs.values().iter().zip(rhs.values()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn fbp_recovers_a_smooth_phantom_with_nominal_constant() {
        let f = smooth_phantom(128);
        let g = EuclidRayGrid::for_field(&f, 180).unwrap();
        let d = x_ray_forward(&f, &WeightSpec::Unit, &g).unwrap();
        let r = fbp_invert_with(&d, 4.0 * PI, 128, 4.0).unwrap();
        let err = relative_error(&r, &f).unwrap();
        assert!(err < 0.03, "{err}");
    }

    #[test]
    fn zero_data_gives_zero() {
        let g = EuclidRayGrid::new(18, 16, 4.0).unwrap();
        let opts = InvertOptions {
            c_hat: Some(4.0 * PI),
            ..Default::default()
        };
        let (f, rep) = weighted_invert(
            &EuclidRayData::zeros(g),
            &WeightSpec::Attenuated { lambda: 0.05 },
            &opts,
            None,
        )
        .unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));
        assert!(rep.converged);
    }

    #[test]
    fn admissible_attenuation() {
        // sup|w−1| = 1 − e^{−5πλ/6} at α₀ = 1/2, below 0.2 iff λ < 0.0852
        assert_eq!(lambda_hat_0(&[0.0, 0.05, 0.1], 0.5, 0.2).unwrap(), 0.05);
        let d = weight_deviation(&WeightSpec::Attenuated { lambda: 0.08 }, 3f64.sqrt());
        assert!((d - (1.0 - (-5.0 * PI * 0.08 / 6.0).exp())).abs() < 1e-12);
    }

    #[test]
    fn phantom_validation() {
        assert!(PhantomSet::default_cap(0.5).is_ok());
        let bad = Phantom {
            kind: PhantomKind::CapBump,
            center: [1.0, 0.0, 0.3],
            width: 0.3,
            amplitude: 1.0,
        };
        assert!(matches!(
            PhantomSet::new(vec![bad], 0.5),
            Err(Error::Support(_))
        ));
        let js = r#"[{"type":"cap_bump","center":[0,0,1],"width":0.5,"amplitude":2}]"#;
        let s = PhantomSet::from_json(js, 0.5).unwrap();
        assert!((s.eval(&[0.0, 0.0, 1.0]) - 2.0).abs() < 1e-15);
        assert_eq!(s.eval(&[0.6, 0.0, 0.8]), 0.0);
    }

    #[test]
    fn noise_is_reproducible() {
        let d = HemiRayData::new(RayGrid::new(8, 4).unwrap(), 0.0, vec![1.0; 32]).unwrap();
        let a = add_noise(&d, 0.1, 3).unwrap();
        let b = add_noise(&d, 0.1, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, add_noise(&d, 0.1, 4).unwrap());
        assert_eq!(add_noise(&d, 0.0, 3).unwrap(), d);
    }

    #[test]
    fn push_and_pull_are_inverse() {
        let p = PhantomSet::default_cap(0.5).unwrap();
        let h = push_forward(&p, 256, 4.0).unwrap();
        let back = pull_back(&h, 128, 0.5).unwrap();
        let err = sphere_relative_error(&back, &p).unwrap();
        assert!(err < 5e-3, "{err}");
    }
}
