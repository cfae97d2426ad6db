//! Fourier multipliers on the periodic plane grid and line Fourier transforms.
//!
//! The dual grid of a `PlaneField` with N nodes on [−S,S) has wavenumbers
//! k_m = 2π m/(2S), m ∈ {−N/2, …, N/2−1}.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::euclid_xray::PlaneField;
use crate::quad::simpson_weights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MultiplierKind {
    /// |k|^s
    Homogeneous,
    /// (1+|k|²)^{s/2}
    Inhomogeneous,
}

/// Treatment of the k = 0 mode by homogeneous multipliers of negative order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ZeroModePolicy {
    /// Refuse fields whose mean is not negligible.
    #[default]
    Reject,
    /// Drop the mean mode and report it.
    Zero,
}

/// Output metadata of a multiplier application.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MultiplierMeta {
    pub order: f64,
    pub kind: MultiplierKind,
    pub policy: ZeroModePolicy,
    /// Mean of the input that was removed, if the mean mode was zeroed.
    pub zeroed_mean: Option<f64>,
}

/// Complex samples on the dual grid, in FFT order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyField {
    n: usize,
    half_width: f64,
    values: Vec<Complex64>,
}

impl FrequencyField {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// Wavenumber of FFT index `m`.
    pub fn wavenumber(&self, m: usize) -> f64 {
        wavenumber(self.n, self.half_width, m)
    }
}

pub fn wavenumber(n: usize, half_width: f64, m: usize) -> f64 {
    let signed = if m < n / 2 {
        m as f64
    } else {
        m as f64 - n as f64
    };
    PI * signed / half_width
}

fn fft2_in_place(n: usize, data: &mut [Complex64], inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    fft.process(data);
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..n {
        for i in 0..n {
            col[i] = data[i * n + j];
        }
        fft.process(&mut col);
        for i in 0..n {
            data[i * n + j] = col[i];
        }
    }
    if inverse {
        let s = 1.0 / (n * n) as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }
}

/// Unnormalized DFT of the samples (sum convention).
pub fn fft2(values: &[Complex64], n: usize, half_width: f64) -> Result<FrequencyField> {
    if values.len() != n * n || !n.is_power_of_two() {
        return Err(Error::invalid("FFT input must be an N×N power-of-two grid"));
    }
    let mut data = values.to_vec();
    fft2_in_place(n, &mut data, false);
    Ok(FrequencyField {
        n,
        half_width,
        values: data,
    })
}

pub fn ifft2(f: &FrequencyField) -> Vec<Complex64> {
    let mut data = f.values.clone();
    fft2_in_place(f.n, &mut data, true);
    data
}

pub fn fft2_real(g: &PlaneField) -> FrequencyField {
    let vals: Vec<Complex64> = g.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&vals, g.n(), g.half_width()).expect("plane fields are power-of-two grids")
}

fn symbol(kind: MultiplierKind, s: f64, k2: f64) -> f64 {
    if s == 0.0 {
        return 1.0;
    }
    match kind {
        MultiplierKind::Homogeneous => {
            if k2 == 0.0 {
                0.0
            } else {
                k2.powf(0.5 * s)
            }
        }
        MultiplierKind::Inhomogeneous => (1.0 + k2).powf(0.5 * s),
    }
}

fn mean_is_negligible(mean: Complex64, scale: f64) -> bool {
    mean.norm() <= 1e-12 * scale.max(f64::MIN_POSITIVE)
}

/// Applies |D|^s or ⟨D⟩^s to complex samples on an N×N grid.
pub fn fractional_multiplier_complex(
    values: &[Complex64],
    n: usize,
    half_width: f64,
    s: f64,
    kind: MultiplierKind,
    policy: ZeroModePolicy,
) -> Result<(Vec<Complex64>, MultiplierMeta)> {
    if !s.is_finite() {
        return Err(Error::invalid("multiplier order must be finite"));
    }
    let mut f = fft2(values, n, half_width)?;
    let mut meta = MultiplierMeta {
        order: s,
        kind,
        policy,
        zeroed_mean: None,
    };
    if kind == MultiplierKind::Homogeneous && s < 0.0 {
        let mean = f.values[0] / (n * n) as f64;
        let scale = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if !mean_is_negligible(mean, scale) && policy == ZeroModePolicy::Reject {
            return Err(Error::ZeroMode {
                mean: mean.norm(),
                order: s,
            });
        }
        meta.zeroed_mean = Some(mean.re);
    }
    for a in 0..n {
        let ka = f.wavenumber(a);
        for b in 0..n {
            let kb = f.wavenumber(b);
            f.values[a * n + b] *= symbol(kind, s, ka * ka + kb * kb);
        }
    }
    Ok((ifft2(&f), meta))
}

/// Real-field wrapper of [`fractional_multiplier_complex`].
pub fn fractional_multiplier(
    g: &PlaneField,
    s: f64,
    kind: MultiplierKind,
    policy: ZeroModePolicy,
) -> Result<(PlaneField, MultiplierMeta)> {
    let vals: Vec<Complex64> = g.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let (out, meta) = fractional_multiplier_complex(&vals, g.n(), g.half_width(), s, kind, policy)?;
    Ok((g.with_values(out.iter().map(|c| c.re).collect())?, meta))
}

/// (Σ m(k)² |ĝ(k)|² h²/N²)^{1/2}; with s = 0 this is the L² norm by Parseval.
pub fn sobolev_norm_complex(
    values: &[Complex64],
    n: usize,
    half_width: f64,
    s: f64,
    kind: MultiplierKind,
    policy: ZeroModePolicy,
) -> Result<f64> {
    let f = fft2(values, n, half_width)?;
    if kind == MultiplierKind::Homogeneous && s < 0.0 && policy == ZeroModePolicy::Reject {
        let mean = f.values[0] / (n * n) as f64;
        let scale = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if !mean_is_negligible(mean, scale) {
            return Err(Error::ZeroMode {
                mean: mean.norm(),
                order: s,
            });
        }
    }
    let h = 2.0 * half_width / n as f64;
    let mut acc = 0.0;
    for a in 0..n {
        let ka = f.wavenumber(a);
        for b in 0..n {
            let kb = f.wavenumber(b);
            let m = symbol(kind, s, ka * ka + kb * kb);
            acc += m * m * f.values[a * n + b].norm_sqr();
        }
    }
    Ok((acc * h * h / (n * n) as f64).sqrt())
}

pub fn sobolev_norm(
    g: &PlaneField,
    s: f64,
    kind: MultiplierKind,
    policy: ZeroModePolicy,
) -> Result<f64> {
    let vals: Vec<Complex64> = g.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    sobolev_norm_complex(&vals, g.n(), g.half_width(), s, kind, policy)
}

/// Uniform samples of a map R → R^dim on [start, start + (n−1)·step], stored sample-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSamples {
    pub start: f64,
    pub step: f64,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl LineSamples {
    pub fn from_fn<F: Fn(f64) -> f64>(start: f64, end: f64, intervals: usize, f: F) -> Self {
        let step = (end - start) / intervals as f64;
        Self {
            start,
            step,
            dim: 1,
            values: (0..=intervals)
                .map(|k| f(start + k as f64 * step))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, k: usize) -> f64 {
        self.start + k as f64 * self.step
    }

    fn sample(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    /// Half-width of the smallest symmetric window containing the samples.
    pub fn window(&self) -> f64 {
        self.start.abs().max(self.point(self.len() - 1).abs())
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.values.len() % self.dim != 0 {
            return Err(Error::invalid("sample values do not match the dimension"));
        }
        let n = self.len();
        if n < 5 || (n - 1) % 2 != 0 {
            return Err(Error::invalid(
                "line samples need an odd count of at least 5",
            ));
        }
        if !(self.step > 0.0) {
            return Err(Error::invalid("sample step must be positive"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite sample"));
        }
        let zero = |k: usize| self.sample(k).iter().all(|&v| v == 0.0);
        if !(zero(0) && zero(1) && zero(n - 2) && zero(n - 1)) {
            return Err(Error::Support(
                "the window must exceed the support by at least two samples on each side".into(),
            ));
        }
        Ok(())
    }

    /// ∫ ‖f(ℓ)‖ dℓ by Simpson.
    pub fn l1_norm(&self) -> Result<f64> {
        self.validate()?;
        let w = simpson_weights(self.len() - 1, self.step)?;
        Ok((0..self.len())
            .map(|k| w[k] * self.sample(k).iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum())
    }
}

/// f̂(λ + iμ) = ∫ e^{−iℓ(λ+iμ)} f(ℓ) dℓ by composite Simpson, componentwise.
pub fn line_fourier(f: &LineSamples, lambda: f64, mu: f64) -> Result<Vec<Complex64>> {
    if !(mu >= 0.0) {
        return Err(Error::OutOfRange {
            name: "mu",
            value: mu,
            expected: ">= 0",
        });
    }
    f.validate()?;
    let w = simpson_weights(f.len() - 1, f.step)?;
    let mut out = vec![Complex64::new(0.0, 0.0); f.dim];
    for k in 0..f.len() {
        let l = f.point(k);
        let phase = Complex64::from_polar(w[k] * (l * mu).exp(), -l * lambda);
        for (o, &v) in out.iter_mut().zip(f.sample(k)) {
            *o += phase * v;
        }
    }
    Ok(out)
}

/// Euclidean norm of a vector of complex values.
pub fn complex_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Q(λ,ω) = ∫ e^{2iλt} e^{2t} q(x₀ + e^t ω) dt, sampling t ∈ [t0, t1] with `intervals`
/// Simpson intervals. The integrand must vanish near both ends of the window.
pub fn q_transform<F: Fn(&[f64; 3]) -> f64>(
    q: &F,
    x0: &[f64; 3],
    omega: &[f64; 3],
    lambda: f64,
    (t0, t1): (f64, f64),
    intervals: usize,
) -> Result<Complex64> {
    let samples = LineSamples::from_fn(t0, t1, intervals, |t| {
        let r = t.exp();
        (2.0 * t).exp()
            * q(&[
                x0[0] + r * omega[0],
                x0[1] + r * omega[1],
                x0[2] + r * omega[2],
            ])
    });
    Ok(line_fourier(&samples, -2.0 * lambda, 0.0)?[0])
}

/// ∫ r^{1+2iλ} q(x₀ + rω) dr on [r0, r1]; the radial form of Q used as a cross-check.
pub fn q_transform_radial<F: Fn(&[f64; 3]) -> f64>(
    q: &F,
    x0: &[f64; 3],
    omega: &[f64; 3],
    lambda: f64,
    (r0, r1): (f64, f64),
    intervals: usize,
) -> Result<Complex64> {
    let h = (r1 - r0) / intervals as f64;
    let w = simpson_weights(intervals, h)?;
    let mut acc = Complex64::new(0.0, 0.0);
    for (k, wk) in w.iter().enumerate() {
        let r = r0 + k as f64 * h;
        if r <= 0.0 {
            continue;
        }
        let v = q(&[
            x0[0] + r * omega[0],
            x0[1] + r * omega[1],
            x0[2] + r * omega[2],
        ]);
        acc += Complex64::from_polar(wk * r * v, 2.0 * lambda * r.ln());
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mode(n: usize, s: f64, kx: i32, ky: i32) -> Vec<Complex64> {
        let h = 2.0 * s / n as f64;
        let (ax, ay) = (PI * kx as f64 / s, PI * ky as f64 / s);
        (0..n * n)
            .map(|k| {
                let (x, y) = (-s + (k / n) as f64 * h, -s + (k % n) as f64 * h);
                Complex64::from_polar(1.0, ax * x + ay * y)
            })
            .collect()
    }

    fn smooth(n: usize) -> PlaneField {
        PlaneField::from_fn(n, 4.0, |x, y| {
            (-(x - 0.3).powi(2) - 2.0 * (y + 0.1).powi(2)).exp() * (1.0 + 0.3 * x)
        })
        .unwrap()
    }

    #[test]
    fn plane_wave_is_an_eigenfunction() {
        let n = 32;
        let s = 4.0;
        let v = mode(n, s, 3, -2);
        let k = (PI * 3.0 / s).hypot(PI * 2.0 / s);
        for (order, kind, want) in [
            (1.0, MultiplierKind::Homogeneous, k),
            (0.7, MultiplierKind::Inhomogeneous, (1.0 + k * k).powf(0.35)),
            (0.0, MultiplierKind::Homogeneous, 1.0),
        ] {
            let (out, _) =
                fractional_multiplier_complex(&v, n, s, order, kind, ZeroModePolicy::Reject)
                    .unwrap();
            for (a, b) in out.iter().zip(&v) {
                assert!((a - b * want).norm() < 1e-11);
            }
        }
    }

    #[test]
    fn unit_wavenumber_mode() {
        // S = π makes k = (1,0) a grid mode
        let n = 16;
        let s = PI;
        let v = mode(n, s, 1, 0);
        let (out, _) = fractional_multiplier_complex(
            &v,
            n,
            s,
            1.0,
            MultiplierKind::Homogeneous,
            ZeroModePolicy::Reject,
        )
        .unwrap();
        for (a, b) in out.iter().zip(&v) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn inverse_pair_on_zero_mean() {
        let g = smooth(64);
        let mean = g.values().iter().sum::<f64>() / (64.0 * 64.0);
        let g = g.map(|_, _, v| v - mean);
        let (a, _) =
            fractional_multiplier(&g, 1.0, MultiplierKind::Homogeneous, ZeroModePolicy::Reject)
                .unwrap();
        let (b, _) =
            fractional_multiplier(&a, -1.0, MultiplierKind::Homogeneous, ZeroModePolicy::Zero)
                .unwrap();
        let err = b.axpy(-1.0, &g).unwrap().l2_norm();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn zero_mode_policy() {
        let g = smooth(32);
        let err = fractional_multiplier(
            &g,
            -1.0,
            MultiplierKind::Homogeneous,
            ZeroModePolicy::Reject,
        )
        .unwrap_err();
        assert!(matches!(err, Error::ZeroMode { .. }));
        let (_, meta) =
            fractional_multiplier(&g, -1.0, MultiplierKind::Homogeneous, ZeroModePolicy::Zero)
                .unwrap();
        assert!(meta.zeroed_mean.unwrap() > 0.0);
        assert!(fractional_multiplier(
            &g,
            -1.0,
            MultiplierKind::Inhomogeneous,
            ZeroModePolicy::Reject
        )
        .is_ok());
    }

    #[test]
    fn single_mode_sobolev_norm() {
        let (n, s) = (32, 4.0);
        let v = mode(n, s, 2, 5);
        let k2 = (PI * 2.0 / s).powi(2) + (PI * 5.0 / s).powi(2);
        for order in [-1.0, -0.5, 0.0, 0.5, 2.0] {
            let got = sobolev_norm_complex(
                &v,
                n,
                s,
                order,
                MultiplierKind::Inhomogeneous,
                ZeroModePolicy::Reject,
            )
            .unwrap();
            let want = (1.0 + k2).powf(order / 2.0) * 2.0 * s;
            assert!((got - want).abs() < 1e-10 * want);
        }
    }

    #[test]
    fn parseval() {
        let g = smooth(64);
        let a = sobolev_norm(
            &g,
            0.0,
            MultiplierKind::Inhomogeneous,
            ZeroModePolicy::Reject,
        )
        .unwrap();
        assert!((a - g.l2_norm()).abs() < 1e-12 * a.max(1.0));
        let b = sobolev_norm(&g, 0.0, MultiplierKind::Homogeneous, ZeroModePolicy::Reject).unwrap();
        assert!((b - g.l2_norm()).abs() < 1e-10);
    }

    #[test]
    fn indicator_fourier() {
        let f = LineSamples::from_fn(-2.0, 2.0, 4000, |l| if l.abs() <= 1.0 { 1.0 } else { 0.0 });
        // the jump limits Simpson accuracy; a fine grid keeps the error small
        for lam in [0.5, 1.3, 4.0] {
            let v = line_fourier(&f, lam, 0.0).unwrap()[0];
            assert!((v.re - 2.0 * lam.sin() / lam).abs() < 2e-3 && v.im.abs() < 1e-9);
            let mu = 0.7;
            let z = Complex64::new(mu, -lam);
            let want = ((z).exp() - (-z).exp()) / z;
            let got = line_fourier(&f, lam, mu).unwrap()[0];
            assert!((got - want).norm() < 5e-3 * want.norm(), "{got} vs {want}");
        }
        assert!(line_fourier(&f, 1.0, -0.1).is_err());
    }

    #[test]
    fn support_check() {
        let f = LineSamples::from_fn(-1.0, 1.0, 100, |l| (1.0 - l * l).max(0.0) + 0.1);
        assert!(matches!(line_fourier(&f, 0.0, 0.0), Err(Error::Support(_))));
    }

    #[test]
    fn vector_values() {
        let n = 400;
        let step = 4.0 / n as f64;
        let mut values = Vec::new();
        for k in 0..=n {
            let l: f64 = -2.0 + k as f64 * step;
            let b = (1.0 - l * l).max(0.0).powi(3);
            values.extend([b, 2.0 * b]);
        }
        let f = LineSamples {
            start: -2.0,
            step,
            dim: 2,
            values,
        };
        let v = line_fourier(&f, 0.8, 0.3).unwrap();
        assert!((v[1] - 2.0 * v[0]).norm() < 1e-14);
    }

    #[test]
    fn q_transform_matches_radial_form() {
        let x0 = [0.0, 0.0, 0.0];
        let w = [0.0, 0.6, 0.8];
        let q = |x: &[f64; 3]| {
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            let u = (r - 2.0) / 0.8;
            if u.abs() < 1.0 {
                (-1.0 / (1.0 - u * u)).exp()
            } else {
                0.0
            }
        };
        for lam in [0.0, 0.4, 1.5] {
            let a = q_transform(&q, &x0, &w, lam, (0.0, 1.5), 6000).unwrap();
            let b = q_transform_radial(&q, &x0, &w, lam, (1.0, 3.0), 6000).unwrap();
            assert!((a - b).norm() < 1e-6 * b.norm().max(1e-3), "{a} vs {b}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn composition(s1 in -1.5..1.5f64, s2 in -1.5..1.5f64, homog in any::<bool>()) {
            let g = smooth(32);
            let kind = if homog { MultiplierKind::Homogeneous } else { MultiplierKind::Inhomogeneous };
            let p = ZeroModePolicy::Zero;
            let (a, _) = fractional_multiplier(&g, s1, kind, p).unwrap();
            let (b, _) = fractional_multiplier(&a, s2, kind, p).unwrap();
            let (c, _) = fractional_multiplier(&g, s1 + s2, kind, p).unwrap();
            prop_assert!(b.axpy(-1.0, &c).unwrap().l2_norm() < 1e-10 * (1.0 + c.l2_norm()));
        }

        #[test]
        fn sobolev_monotone(s1 in -2.0..2.0f64, ds in 0.0..1.0f64) {
            let g = smooth(32);
            let a = sobolev_norm(&g, s1, MultiplierKind::Inhomogeneous, ZeroModePolicy::Reject).unwrap();
            let b = sobolev_norm(&g, s1 + ds, MultiplierKind::Inhomogeneous, ZeroModePolicy::Reject).unwrap();
            prop_assert!(a <= b * (1.0 + 1e-14));
        }

        #[test]
        fn complex_shift_bound(c in -0.8..0.8f64, w in 0.1..0.9f64, lam in -5.0..5.0f64, mu in 0.0..3.0f64) {
            let width = w * (1.0 - c.abs());
            let f = LineSamples::from_fn(-1.25, 1.25, 1000, |l| {
                let u = (l - c) / width;
                if u.abs() < 1.0 { (-1.0 / (1.0 - u * u)).exp() } else { 0.0 }
            });
            let v = complex_norm(&line_fourier(&f, lam, mu).unwrap());
            // support lies in [−1, 1]
            prop_assert!(v <= mu.exp() * f.l1_norm().unwrap() + 1e-12);
        }
    }
}
