//! Harmonic majorization on the upper half-plane and the resulting log-log bound.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::sync::Mutex;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quad::{adaptive, simpson_weights};
use crate::spectral::{complex_norm, line_fourier, LineSamples};

/// Slack allowed when comparing both sides of the majorization.
pub const MAJORIZATION_SLACK: f64 = 1e-8;

fn check_mu(mu: f64) -> Result<()> {
    if mu > 0.0 {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name: "mu",
            value: mu,
            expected: "> 0",
        })
    }
}

/// φ(λ+iμ) = (1/π)(arctan((1−λ)/μ) + arctan((1+λ)/μ)), the Poisson extension of 1_{[−1,1]}.
pub fn poisson_phi(lambda: f64, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    Ok((((1.0 - lambda) / mu).atan() + ((1.0 + lambda) / mu).atan()) / PI)
}

/// The same harmonic function through the single-arctan form, split on the unit circle.
pub fn poisson_phi_piecewise(lambda: f64, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    let d = mu * mu + lambda * lambda - 1.0;
    if d == 0.0 {
        return Ok(0.5);
    }
    let a = (2.0 * mu / d).atan() / PI;
    Ok(if d > 0.0 { a } else { 1.0 + a })
}

/// φ on the line μ = 1: (1/π) arctan(2/λ²).
pub fn phi_unit_line(lambda: f64) -> f64 {
    if lambda == 0.0 {
        0.5
    } else {
        (2.0 / (lambda * lambda)).atan() / PI
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MajorizationReport {
    /// Number of λ nodes where the bound was tested.
    pub nodes: usize,
    pub support_half_width: f64,
    /// ∥f∥_{L¹} before normalization.
    pub l1_norm: f64,
    /// Largest |f̂| seen on the grid over [−1,1].
    pub m_grid: f64,
    /// Grid maximum plus the Lipschitz allowance between nodes; an upper bound for M.
    pub m_certified: f64,
    /// min over λ of e^L M^{φ(λ+i)} − ∥f̂(λ+i)∥.
    pub min_slack: f64,
    pub violations: usize,
}

impl MajorizationReport {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

/// Tested range and density for [`majorization_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MajorizationOptions {
    /// Nodes on [−1,1] for the supremum defining M.
    pub m_nodes: usize,
    /// The bound is tested on [−lambda_max, lambda_max].
    pub lambda_max: f64,
    pub nodes: usize,
}

impl Default for MajorizationOptions {
    fn default() -> Self {
        Self {
            m_nodes: 401,
            lambda_max: 20.0,
            nodes: 401,
        }
    }
}

fn support_extent(f: &LineSamples) -> f64 {
    let dim = f.dim.max(1);
    (0..f.len())
        .filter(|&k| f.values[k * dim..(k + 1) * dim].iter().any(|&v| v != 0.0))
        .map(|k| f.point(k).abs())
        .fold(0.0, f64::max)
}

/// ∫ |ℓ| ∥f(ℓ)∥ dℓ, the Lipschitz constant of λ ↦ f̂(λ).
fn first_moment(f: &LineSamples) -> Result<f64> {
    let w = simpson_weights(f.len() - 1, f.step)?;
    let dim = f.dim.max(1);
    Ok((0..f.len())
        .map(|k| {
            let v = &f.values[k * dim..(k + 1) * dim];
            w[k] * f.point(k).abs() * v.iter().map(|x| x * x).sum::<f64>().sqrt()
        })
        .sum())
}

/// Upper bound for sup_{|λ|≤λ₀} ∥f̂(λ)∥ from `nodes` samples plus the Lipschitz allowance.
pub fn certified_sup(f: &LineSamples, lambda0: f64, nodes: usize) -> Result<(f64, f64)> {
    if nodes < 2 || !(lambda0 > 0.0) {
        return Err(Error::invalid(
            "need at least two nodes and a positive range",
        ));
    }
    let dl = 2.0 * lambda0 / (nodes - 1) as f64;
    let mut grid_max: f64 = 0.0;
    for j in 0..nodes {
        let l = -lambda0 + j as f64 * dl;
        grid_max = grid_max.max(complex_norm(&line_fourier(f, l, 0.0)?));
    }
    Ok((grid_max, grid_max + 0.5 * dl * first_moment(f)?))
}

/// Tests ∥f̂(λ+i)∥ ≤ e^L M^{(1/π)arctan(2/λ²)} with λ₀ = 1, after f ← f/max(1, ∥f∥_{L¹}).
pub fn majorization_check(
    f: &LineSamples,
    support_half_width: f64,
    opts: &MajorizationOptions,
) -> Result<MajorizationReport> {
    let l = support_half_width;
    if !(l > 0.0) || opts.nodes < 2 || !(opts.lambda_max > 0.0) {
        return Err(Error::invalid(
            "need L > 0, at least two nodes and a positive range",
        ));
    }
    let l1 = f.l1_norm()?;
    let extent = support_extent(f);
    if extent > l + 1e-12 {
        return Err(Error::InvalidInput(format!(
            "samples are nonzero at |x| = {extent:.6}, outside the window [-{l}, {l}]"
        )));
    }
    let scale = 1.0 / l1.max(1.0);
    let g = LineSamples {
        values: f.values.iter().map(|v| v * scale).collect(),
        ..f.clone()
    };
    let (m_grid, m_cert) = certified_sup(&g, 1.0, opts.m_nodes)?;
    let m = m_cert.min(1.0);
    let dl = 2.0 * opts.lambda_max / (opts.nodes - 1) as f64;
    let mut min_slack = f64::INFINITY;
    let mut violations = 0;
    for j in 0..opts.nodes {
        let lam = -opts.lambda_max + j as f64 * dl;
        let lhs = complex_norm(&line_fourier(&g, lam, 1.0)?);
        let rhs = l.exp() * m.powf(phi_unit_line(lam));
        let slack = rhs - lhs;
        min_slack = min_slack.min(slack);
        if slack < -MAJORIZATION_SLACK {
            violations += 1;
        }
    }
    Ok(MajorizationReport {
        nodes: opts.nodes,
        support_half_width: l,
        l1_norm: l1,
        m_grid: m_grid / scale,
        m_certified: m_cert / scale,
        min_slack,
        violations,
    })
}

/// Integrand of I_σ: 1/((1+λ)^{3+σ} arctan(2/λ²)).
pub fn i_sigma_integrand(lambda: f64, sigma: f64) -> f64 {
    let at = if lambda == 0.0 {
        FRAC_PI_2
    } else {
        (2.0 / (lambda * lambda)).atan()
    };
    1.0 / ((1.0 + lambda).powf(3.0 + sigma) * at)
}

/// x / arctan(x), continued by 1 at x = 0.
fn x_over_atan(x: f64) -> f64 {
    if x < 1e-6 {
        1.0 + x * x / 3.0
    } else {
        x / x.atan()
    }
}

fn i_sigma_substituted(sigma: f64, tol: f64) -> (f64, f64) {
    // u = (1+λ)^{−σ} maps [0,∞) onto (0,1]; with v = u^{1/σ} = 1/(1+λ) the integrand is
    // v²/(σ arctan(2v²/(1−v)²)), bounded with limit 1/(2σ) at u = 0
    let g = move |u: f64| {
        let v = u.powf(1.0 / sigma);
        if v >= 1.0 {
            return 1.0 / (sigma * FRAC_PI_2);
        }
        let w = 1.0 - v;
        w * w * x_over_atan(2.0 * v * v / (w * w)) / (2.0 * sigma)
    };
    adaptive(g, 0.0, 1.0, tol)
}

fn i_sigma_split(sigma: f64, tol: f64) -> f64 {
    // ∫₀¹ directly; on [1,∞) λ = 1/t and t = r^{1/σ} absorb the t^{σ−1} endpoint singularity
    let (a, _) = adaptive(|l| i_sigma_integrand(l, sigma), 0.0, 1.0, tol);
    let tail = move |r: f64| {
        let t = r.powf(1.0 / sigma);
        x_over_atan(2.0 * t * t) / (2.0 * sigma * (1.0 + t).powf(3.0 + sigma))
    };
    let (b, _) = adaptive(tail, 0.0, 1.0, tol);
    a + b
}

/// I_σ = ∫₀^∞ dλ / ((1+λ)^{3+σ} arctan(2/λ²)), cached per σ.
pub fn i_sigma(sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::OutOfRange {
            name: "sigma",
            value: sigma,
            expected: "> 0",
        });
    }
    static CACHE: Mutex<Option<HashMap<u64, f64>>> = Mutex::new(None);
    if let Some(v) = CACHE
        .lock()
        .expect("cache lock")
        .as_ref()
        .and_then(|c| c.get(&sigma.to_bits()))
    {
        return Ok(*v);
    }
    let (v, _) = i_sigma_substituted(sigma, 1e-13);
    let check = i_sigma_split(sigma, 1e-13);
    let rel = ((v - check) / v).abs();
    if !(rel < 1e-8) {
        return Err(Error::Consistency {
            difference: rel,
            tolerance: 1e-8,
        });
    }
    CACHE
        .lock()
        .expect("cache lock")
        .get_or_insert_with(HashMap::new)
        .insert(sigma.to_bits(), v);
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaInputs {
    /// sup_{|λ|≤λ₀} ∥f̂(λ)∥
    pub m: f64,
    /// Budget for ∥f∥_{L¹} + ∥f∥_{H^σ}.
    pub k: f64,
    /// Support half-width.
    pub l: f64,
    pub lambda0: f64,
    pub sigma: f64,
}

impl LemmaInputs {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, name, value, expected| {
            if ok {
                Ok(())
            } else {
                Err(Error::OutOfRange {
                    name,
                    value,
                    expected,
                })
            }
        };
        check(self.m >= 0.0 && self.m.is_finite(), "M", self.m, ">= 0")?;
        check(self.k > 0.0 && self.k.is_finite(), "K", self.k, "> 0")?;
        check(self.l > 0.0 && self.l.is_finite(), "L", self.l, "> 0")?;
        check(
            self.lambda0 > 0.0 && self.lambda0 <= 1.0,
            "lambda0",
            self.lambda0,
            "in (0, 1]",
        )?;
        check(
            self.sigma > 0.0 && self.sigma <= 1.0,
            "sigma",
            self.sigma,
            "in (0, 1]",
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LoglogBound {
    /// Bound on ∥f∥_{L²}; infinite when degenerate.
    pub value: f64,
    /// M after division by max(1,K)².
    pub m_normalized: f64,
    /// Frequency cut Λ₀ = max(1, |log M|^{1/(3+3σ)}).
    pub cut: f64,
    /// π e^{2L} I_σ (2Λ₀)^{3+σ} |log M|⁻¹
    pub low: f64,
    /// (2^σ e^L)² Λ₀^{−2σ}
    pub high: f64,
    /// σ/(3+3σ)
    pub exponent: f64,
    /// σ/(3+2σ), the exponent in the printed statement.
    pub statement_exponent: f64,
    /// M ≥ 1 after normalization: no decay in |log M| is available.
    pub degenerate: bool,
}

/// Assembles ∥f∥_{L²} ≤ max(1,K)² λ₀^{−1/2−2σ} (e^{2L'}/(2π) · (low + high))^{1/2}, L' = Lλ₀.
pub fn loglog_bound(inputs: &LemmaInputs) -> Result<LoglogBound> {
    inputs.validate()?;
    let s = inputs.sigma;
    let kk = inputs.k.max(1.0).powi(2);
    let m = inputs.m / kk;
    let l = inputs.l * inputs.lambda0;
    let exponent = s / (3.0 + 3.0 * s);
    let statement_exponent = s / (3.0 + 2.0 * s);
    if m >= 1.0 {
        return Ok(LoglogBound {
            value: f64::INFINITY,
            m_normalized: m,
            cut: 1.0,
            low: f64::INFINITY,
            high: f64::INFINITY,
            exponent,
            statement_exponent,
            degenerate: true,
        });
    }
    let log_m = -m.ln();
    let cut = log_m.powf(1.0 / (3.0 + 3.0 * s)).max(1.0);
    let low = if m == 0.0 {
        0.0
    } else {
        PI * (2.0 * l).exp() * i_sigma(s)? * (2.0 * cut).powf(3.0 + s) / log_m
    };
    let high = (2f64.powf(s) * l.exp()).powi(2) * cut.powf(-2.0 * s);
    let value =
        kk * inputs.lambda0.powf(-0.5 - 2.0 * s) * ((2.0 * l).exp() / TAU * (low + high)).sqrt();
    Ok(LoglogBound {
        value,
        m_normalized: m,
        cut,
        low,
        high,
        exponent,
        statement_exponent,
        degenerate: false,
    })
}

/// Least-squares slope of log(bound) against log|log M| over log-spaced M in [m_lo, m_hi].
pub fn loglog_slope(sigma: f64, l: f64, m_lo: f64, m_hi: f64, points: usize) -> Result<f64> {
    if !(m_lo > 0.0 && m_lo < m_hi && m_hi < 1.0) || points < 2 {
        return Err(Error::invalid(
            "need 0 < m_lo < m_hi < 1 and at least two points",
        ));
    }
    let (a, b) = (m_lo.ln(), m_hi.ln());
    let mut xy = Vec::with_capacity(points);
    for j in 0..points {
        let m = (a + (b - a) * j as f64 / (points - 1) as f64).exp();
        let bound = loglog_bound(&LemmaInputs {
            m,
            k: 1.0,
            l,
            lambda0: 1.0,
            sigma,
        })?;
        xy.push(((-m.ln()).ln(), bound.value.ln()));
    }
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// ∥f∥_{L²} by Simpson.
pub fn l2_norm(f: &LineSamples) -> Result<f64> {
    let w = simpson_weights(f.len() - 1, f.step)?;
    let dim = f.dim.max(1);
    Ok((0..f.len())
        .map(|k| {
            w[k] * f.values[k * dim..(k + 1) * dim]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
        })
        .sum::<f64>()
        .sqrt())
}

/// ∥f∥_{H^σ} = ((1/2π)∫(1+λ²)^σ ∥f̂(λ)∥² dλ)^{1/2} from the DFT of the samples, zero padded
/// to `pad` times the window.
pub fn sobolev_norm_line(f: &LineSamples, sigma: f64, pad: usize) -> Result<f64> {
    if pad == 0 {
        return Err(Error::invalid("padding factor must be positive"));
    }
    let dim = f.dim.max(1);
    let n = (f.len() * pad).next_power_of_two();
    let period = n as f64 * f.step;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut total = 0.0;
    for c in 0..dim {
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for k in 0..f.len() {
            buf[k] = Complex64::new(f.values[k * dim + c], 0.0);
        }
        fft.process(&mut buf);
        for (m, v) in buf.iter().enumerate() {
            let signed = if m <= n / 2 {
                m as f64
            } else {
                m as f64 - n as f64
            };
            let k = TAU * signed / period;
            total += (1.0 + k * k).powf(sigma) * (v * f.step).norm_sqr();
        }
    }
    Ok((total / period).sqrt())
}

/// ψ(x) = exp(1 − 1/(1−x²)) on (−1,1), zero elsewhere.
pub fn bump(x: f64) -> f64 {
    if x.abs() < 1.0 {
        (1.0 - 1.0 / (1.0 - x * x)).exp()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    #[serde(rename = "M")]
    pub m: f64,
    pub sigma: f64,
    pub lambda0: f64,
    pub bound: f64,
    pub measured_l2: f64,
    pub k: f64,
    pub omega: f64,
    pub exponent: f64,
    pub statement_exponent: f64,
}

/// Samples ψ(x/L) cos(ωx) with at least 64 nodes per unit of 1+ω and two zero samples
/// beyond the support on each side.
pub fn modulated_bump(l: f64, omega: f64) -> LineSamples {
    let step = 1.0 / (64.0 * (1.0 + omega.abs())).max(256.0);
    let half = (l / step).ceil() as usize + 2;
    let start = -(half as f64) * step;
    LineSamples::from_fn(start, -start, 2 * half, |x| bump(x / l) * (omega * x).cos())
}

/// Runs the shrinking-M family ψ(x/L)cos(ωx): larger ω moves f̂ away from [−λ₀, λ₀].
pub fn shrinking_m_sweep(
    sigma: f64,
    l: f64,
    lambda0: f64,
    omegas: &[f64],
) -> Result<Vec<SweepRow>> {
    omegas
        .iter()
        .map(|&omega| {
            let f = modulated_bump(l, omega);
            let (_, m) = certified_sup(&f, lambda0, 801)?;
            let k = f.l1_norm()? + sobolev_norm_line(&f, sigma, 4)?;
            let b = loglog_bound(&LemmaInputs {
                m,
                k,
                l,
                lambda0,
                sigma,
            })?;
            Ok(SweepRow {
                m,
                sigma,
                lambda0,
                bound: b.value,
                measured_l2: l2_norm(&f)?,
                k,
                omega,
                exponent: b.exponent,
                statement_exponent: b.statement_exponent,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: std::io::Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let table: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            vec![
                r.m,
                r.sigma,
                r.lambda0,
                r.bound,
                r.measured_l2,
                r.k,
                r.omega,
                r.exponent,
                r.statement_exponent,
            ]
        })
        .collect();
    crate::io::write_table(
        out,
        &[
            "M",
            "sigma",
            "lambda0",
            "bound",
            "measured_l2",
            "K",
            "omega",
            "exponent",
            "statement_exponent",
        ],
        &table,
    )
}
