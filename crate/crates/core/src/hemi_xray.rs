//! Attenuated geodesic ray transform on the northern hemisphere of S².
//!
//! Fields are sampled in the chart ω = cos θ e₁ + sin θ (cos ψ e₂ + sin ψ e₃), which covers
//! the open hemisphere for (θ, ψ) ∈ (0,π)². Rays are indexed by the boundary angle α and
//! the inward angle β, see [`Ray2::from_angles`].

use std::f64::consts::{PI, TAU};
use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Ray2;
use crate::io::{read_table, write_table};
use crate::quad::{midpoints, simpson_weights};

pub const DEFAULT_SPHERE_GRID: usize = 256;
pub const DEFAULT_ALPHAS: usize = 360;
pub const DEFAULT_BETAS: usize = 180;
pub const RAY_INTERVALS: usize = 512;

/// Anything that can be evaluated at a point of S²₊.
pub trait SphereFunction: Sync {
    fn eval(&self, x: &[f64; 3]) -> f64;
}

impl<F: Fn(&[f64; 3]) -> f64 + Sync> SphereFunction for F {
    fn eval(&self, x: &[f64; 3]) -> f64 {
        self(x)
    }
}

/// Chart coordinates (θ, ψ) of a point with x₃ ≥ 0.
pub fn chart_coords(x: &[f64; 3]) -> (f64, f64) {
    let theta = x[0].clamp(-1.0, 1.0).acos();
    let psi = x[2].atan2(x[1]);
    (theta, psi.clamp(0.0, PI))
}

pub fn chart_point(theta: f64, psi: f64) -> [f64; 3] {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    [ct, st * cp, st * sp]
}

/// Samples on the midpoint grid θ_i = (i+½)π/n_θ, ψ_j = (j+½)π/n_ψ, stored θ-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereField {
    n_theta: usize,
    n_psi: usize,
    values: Vec<f64>,
    cap: Option<f64>,
}

impl SphereField {
    pub fn new(n_theta: usize, n_psi: usize, values: Vec<f64>, cap: Option<f64>) -> Result<Self> {
        if n_theta < 2 || n_psi < 2 {
            return Err(Error::invalid("sphere grid needs at least 2x2 nodes"));
        }
        if values.len() != n_theta * n_psi {
            return Err(Error::invalid("value count does not match grid"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite field value"));
        }
        let f = Self {
            n_theta,
            n_psi,
            values,
            cap,
        };
        if let Some(a) = cap {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::OutOfRange {
                    name: "alpha0",
                    value: a,
                    expected: "0 < alpha0 < 1",
                });
            }
            for i in 0..n_theta {
                for j in 0..n_psi {
                    let x = f.node(i, j);
                    if x[2] <= a && f.values[i * n_psi + j].abs() >= 1e-14 {
                        return Err(Error::Support(format!(
                            "value {} at x3 = {} outside the cap x3 > {a}",
                            f.values[i * n_psi + j],
                            x[2]
                        )));
                    }
                }
            }
        }
        Ok(f)
    }

    /// Samples `f`; with a cap, nodes with x₃ ≤ α₀ are set to zero.
    pub fn from_fn<F: SphereFunction>(
        n_theta: usize,
        n_psi: usize,
        cap: Option<f64>,
        f: &F,
    ) -> Result<Self> {
        let th = midpoints(0.0, PI, n_theta);
        let ps = midpoints(0.0, PI, n_psi);
        let mut values = Vec::with_capacity(n_theta * n_psi);
        for &t in &th {
            for &p in &ps {
                let x = chart_point(t, p);
                let inside = cap.is_none_or(|a| x[2] > a);
                values.push(if inside { f.eval(&x) } else { 0.0 });
            }
        }
        Self::new(n_theta, n_psi, values, cap)
    }

    pub fn zeros(n_theta: usize, n_psi: usize, cap: Option<f64>) -> Result<Self> {
        Self::new(n_theta, n_psi, vec![0.0; n_theta * n_psi], cap)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_theta, self.n_psi)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cap(&self) -> Option<f64> {
        self.cap
    }

    pub fn theta(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * PI / self.n_theta as f64
    }

    pub fn psi(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * PI / self.n_psi as f64
    }

    pub fn node(&self, i: usize, j: usize) -> [f64; 3] {
        chart_point(self.theta(i), self.psi(j))
    }

    /// Bilinear interpolation in chart coordinates, clamped at the grid edges.
    pub fn interp(&self, x: &[f64; 3]) -> f64 {
        let (theta, psi) = chart_coords(x);
        let u = (theta * self.n_theta as f64 / PI - 0.5).clamp(0.0, (self.n_theta - 1) as f64);
        let v = (psi * self.n_psi as f64 / PI - 0.5).clamp(0.0, (self.n_psi - 1) as f64);
        let i = (u.floor() as usize).min(self.n_theta - 2);
        let j = (v.floor() as usize).min(self.n_psi - 2);
        let (a, b) = (u - i as f64, v - j as f64);
        let m = self.n_psi;
        let f00 = self.values[i * m + j];
        let f01 = self.values[i * m + j + 1];
        let f10 = self.values[(i + 1) * m + j];
        let f11 = self.values[(i + 1) * m + j + 1];
        (1.0 - a) * ((1.0 - b) * f00 + b * f01) + a * ((1.0 - b) * f10 + b * f11)
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// L² norm with respect to the surface measure.
    pub fn l2_norm(&self) -> f64 {
        surface_integral(&self.map(|v| v * v)).sqrt()
    }
}

impl SphereFunction for SphereField {
    fn eval(&self, x: &[f64; 3]) -> f64 {
        self.interp(x)
    }
}

/// Midpoint-rule surface integral over S²₊ (area element sin θ dθ dψ).
pub fn surface_integral(f: &SphereField) -> f64 {
    let (nt, np) = f.dims();
    let cell = (PI / nt as f64) * (PI / np as f64);
    let mut acc = 0.0;
    for i in 0..nt {
        let s = f.theta(i).sin();
        let row: f64 = f.values[i * np..(i + 1) * np].iter().sum();
        acc += s * row;
    }
    acc * cell
}

/// Surface integral of an analytic function on an n×n midpoint grid.
pub fn surface_integral_fn<F: SphereFunction>(f: &F, n: usize) -> f64 {
    let th = midpoints(0.0, PI, n);
    let cell = (PI / n as f64).powi(2);
    th.par_iter()
        .map(|&t| {
            let s = t.sin();
            midpoints(0.0, PI, n)
                .iter()
                .map(|&p| f.eval(&chart_point(t, p)))
                .sum::<f64>()
                * s
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum::<f64>()
        * cell
}

/// Boundary-ray grid: α_i = 2πi/n_α and midpoints β_j = (j+½)π/n_β.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RayGrid {
    pub n_alpha: usize,
    pub n_beta: usize,
}

impl Default for RayGrid {
    fn default() -> Self {
        Self {
            n_alpha: DEFAULT_ALPHAS,
            n_beta: DEFAULT_BETAS,
        }
    }
}

impl RayGrid {
    pub fn new(n_alpha: usize, n_beta: usize) -> Result<Self> {
        if n_alpha < 2 || n_beta < 2 {
            return Err(Error::invalid("ray grid needs at least 2x2 rays"));
        }
        Ok(Self { n_alpha, n_beta })
    }

    pub fn alpha(&self, i: usize) -> f64 {
        TAU * i as f64 / self.n_alpha as f64
    }

    pub fn beta(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * PI / self.n_beta as f64
    }

    pub fn len(&self) -> usize {
        self.n_alpha * self.n_beta
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell area dα·dβ.
    pub fn cell(&self) -> f64 {
        (TAU / self.n_alpha as f64) * (PI / self.n_beta as f64)
    }
}

/// Samples F(α_i, β_j), stored α-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HemiRayData {
    grid: RayGrid,
    lambda: f64,
    values: Vec<f64>,
}

impl HemiRayData {
    pub fn new(grid: RayGrid, lambda: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid("value count does not match ray grid"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite ray value"));
        }
        Ok(Self {
            grid,
            lambda,
            values,
        })
    }

    pub fn grid(&self) -> &RayGrid {
        &self.grid
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.n_beta + j]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| c * v).collect(),
            ..self.clone()
        }
    }

    /// Bilinear interpolation, periodic in α and clamped in β.
    pub fn interp(&self, alpha: f64, beta: f64) -> f64 {
        let (na, nb) = (self.grid.n_alpha, self.grid.n_beta);
        let u = alpha.rem_euclid(TAU) * na as f64 / TAU;
        let i0 = (u.floor() as usize) % na;
        let a = u - u.floor();
        let i1 = (i0 + 1) % na;
        let v = (beta * nb as f64 / PI - 0.5).clamp(0.0, (nb - 1) as f64);
        let j = (v.floor() as usize).min(nb - 2);
        let b = v - j as f64;
        let f = |i: usize, j: usize| self.values[i * nb + j];
        (1.0 - a) * ((1.0 - b) * f(i0, j) + b * f(i0, j + 1))
            + a * ((1.0 - b) * f(i1, j) + b * f(i1, j + 1))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut rows = Vec::with_capacity(self.values.len());
        for i in 0..self.grid.n_alpha {
            for j in 0..self.grid.n_beta {
                rows.push(vec![
                    self.grid.alpha(i),
                    self.grid.beta(j),
                    self.lambda,
                    self.get(i, j),
                ]);
            }
        }
        write_table(out, &["alpha", "beta", "lambda", "value"], &rows)
    }

    /// Reads data written by [`write_csv`](Self::write_csv); rows must be α-major on a full grid.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let rows = read_table(input, &["alpha", "beta", "lambda", "value"])?;
        if rows.is_empty() {
            return Err(Error::invalid("empty ray table"));
        }
        let lambda = rows[0][2];
        let n_beta = rows.iter().take_while(|r| r[0] == rows[0][0]).count();
        if n_beta == 0 || rows.len() % n_beta != 0 {
            return Err(Error::invalid("ray table is not a full grid"));
        }
        let grid = RayGrid::new(rows.len() / n_beta, n_beta)?;
        for (k, r) in rows.iter().enumerate() {
            let (i, j) = (k / n_beta, k % n_beta);
            if (r[0] - grid.alpha(i)).abs() > 1e-9 || (r[1] - grid.beta(j)).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "row {k} is off the standard ray grid"
                )));
            }
            if r[2] != lambda {
                return Err(Error::invalid("mixed attenuation values in one table"));
            }
        }
        Self::new(grid, lambda, rows.iter().map(|r| r[3]).collect())
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::OutOfRange {
            name: "lambda",
            value: lambda,
            expected: "finite and >= 0",
        });
    }
    Ok(())
}

/// T_λ⁺f along a single ray by composite Simpson with `n` intervals.
pub fn t_lambda_ray<F: SphereFunction + ?Sized>(
    f: &F,
    lambda: f64,
    ray: &Ray2,
    n: usize,
) -> Result<f64> {
    check_lambda(lambda)?;
    let h = PI / n as f64;
    let w = simpson_weights(n, h)?;
    Ok(ray_sum(f, lambda, ray, &w, h))
}

fn ray_sum<F: SphereFunction + ?Sized>(f: &F, lambda: f64, ray: &Ray2, w: &[f64], h: f64) -> f64 {
    let (b, d) = (ray.base(), ray.dir());
    let mut acc = 0.0;
    for (k, wk) in w.iter().enumerate() {
        let t = k as f64 * h;
        let (s, c) = t.sin_cos();
        let x = [c * b[0] + s * d[0], c * b[1] + s * d[1], s * d[2]];
        acc += wk * (-lambda * t).exp() * f.eval(&x);
    }
    acc
}

/// Forward transform on a ray grid with the default quadrature.
pub fn t_lambda_forward<F: SphereFunction>(
    f: &F,
    lambda: f64,
    grid: &RayGrid,
) -> Result<HemiRayData> {
    t_lambda_forward_with(f, lambda, grid, RAY_INTERVALS)
}

pub fn t_lambda_forward_with<F: SphereFunction>(
    f: &F,
    lambda: f64,
    grid: &RayGrid,
    intervals: usize,
) -> Result<HemiRayData> {
    check_lambda(lambda)?;
    let h = PI / intervals as f64;
    let w = simpson_weights(intervals, h)?;
    let nb = grid.n_beta;
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let ray = Ray2::from_angles(grid.alpha(k / nb), grid.beta(k % nb))
                .expect("midpoint beta is interior");
            ray_sum(f, lambda, &ray, &w, h)
        })
        .collect();
    HemiRayData::new(*grid, lambda, values)
}

/// √(∬|F|² sin β dβ dα).
pub fn mu_norm(data: &HemiRayData) -> f64 {
    weighted_sum(data, |v| v * v).sqrt()
}

fn weighted_sum<G: Fn(f64) -> f64>(data: &HemiRayData, g: G) -> f64 {
    let grid = data.grid();
    let mut acc = 0.0;
    for j in 0..grid.n_beta {
        let s = grid.beta(j).sin();
        let col: f64 = (0..grid.n_alpha).map(|i| g(data.get(i, j))).sum();
        acc += s * col;
    }
    acc * grid.cell()
}

/// (1/|S¹|) ∬ T₀f dμ.
pub fn santalo_rhs<F: SphereFunction>(f: &F, grid: &RayGrid) -> Result<f64> {
    let t0 = t_lambda_forward(f, 0.0, grid)?;
    Ok(weighted_sum(&t0, |v| v) / TAU)
}

/// Constant in the continuity estimate ∥T_λ⁺f∥²_μ ≤ π|S¹| ∥f∥².
pub const L2_CONTINUITY_CONSTANT: f64 = PI * TAU;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> RayGrid {
        RayGrid::new(36, 18).unwrap()
    }

    #[test]
    fn constant_field_examples() {
        let one = |_: &[f64; 3]| 1.0;
        let d = t_lambda_forward(&one, 0.0, &small()).unwrap();
        assert!(d.values().iter().all(|v| (v - PI).abs() < 1e-12));
        let d = t_lambda_forward(&one, 0.3, &small()).unwrap();
        let want = (1.0 - (-0.3 * PI).exp()) / 0.3;
        assert!(d.values().iter().all(|v| (v - want).abs() < 1e-10));
        assert!(t_lambda_forward(&one, -0.1, &small()).is_err());
    }

    #[test]
    fn cap_indicator_chord() {
        let a0 = 0.5;
        let ind = move |x: &[f64; 3]| if x[2] > a0 { 1.0 } else { 0.0 };
        let beta = 1.2f64;
        let ray = Ray2::from_angles(0.7, beta).unwrap();
        let xi3 = beta.sin();
        let want = PI - 2.0 * (a0 / xi3).asin();
        let got = t_lambda_ray(&ind, 0.0, &ray, 200_000).unwrap();
        assert!((got - want).abs() < 1e-4, "{got} vs {want}");
    }

    #[test]
    fn mu_norm_of_one() {
        let d = HemiRayData::new(RayGrid::default(), 0.0, vec![1.0; 360 * 180]).unwrap();
        assert!((mu_norm(&d) - 2.0 * PI.sqrt()).abs() < 1e-4);
        assert!((mu_norm(&d.scaled(2.0)) - 2.0 * mu_norm(&d)).abs() < 1e-12);
        let z = HemiRayData::new(small(), 0.0, vec![0.0; 36 * 18]).unwrap();
        assert_eq!(mu_norm(&z), 0.0);
    }

    #[test]
    fn santalo_constant_and_zonal() {
        let one = |_: &[f64; 3]| 1.0;
        let g = RayGrid::new(120, 60).unwrap();
        let r = santalo_rhs(&one, &g).unwrap();
        assert!((r - TAU).abs() / TAU < 1e-3);
        let zonal = |x: &[f64; 3]| (-2.0 * (x[2] - 0.8).powi(2)).exp();
        let lhs = TAU
            * crate::quad::simpson(
                |s: f64| (-2.0 * (s.cos() - 0.8).powi(2)).exp() * s.sin(),
                0.0,
                PI / 2.0,
                2000,
            )
            .unwrap();
        let r = santalo_rhs(&zonal, &g).unwrap();
        assert!((r - lhs).abs() / lhs < 1e-3, "{r} vs {lhs}");
        let zero = |_: &[f64; 3]| 0.0;
        assert_eq!(santalo_rhs(&zero, &g).unwrap(), 0.0);
    }

    #[test]
    fn field_interp_reproduces_linear_functions() {
        let f = SphereField::from_fn(64, 64, None, &|x: &[f64; 3]| {
            let (t, p) = chart_coords(x);
            2.0 * t - p
        })
        .unwrap();
        let x = chart_point(1.234, 0.777);
        assert!((f.interp(&x) - (2.0 * 1.234 - 0.777)).abs() < 1e-12);
    }

    #[test]
    fn cap_support_is_enforced() {
        let bad = SphereField::from_fn(16, 16, None, &|_: &[f64; 3]| 1.0).unwrap();
        let err = SphereField::new(16, 16, bad.values().to_vec(), Some(0.5)).unwrap_err();
        assert!(matches!(err, Error::Support(_)));
        let ok = SphereField::from_fn(16, 16, Some(0.5), &|_: &[f64; 3]| 1.0).unwrap();
        assert!(ok.values().contains(&0.0));
    }

    #[test]
    fn csv_round_trip() {
        let one = |x: &[f64; 3]| x[2];
        let d = t_lambda_forward(&one, 0.25, &RayGrid::new(8, 4).unwrap()).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = HemiRayData::read_csv(&buf[..]).unwrap();
        assert_eq!(back, d);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn attenuation_is_monotone(c in 0.2..0.9f64, w in 0.1..0.6f64, l1 in 0.0..1.0f64, dl in 0.0..1.0f64) {
            let f = move |x: &[f64; 3]| (-(x[2] - c).powi(2) / (w * w)).exp();
            let a = t_lambda_forward_with(&f, l1, &small(), 64).unwrap();
            let b = t_lambda_forward_with(&f, l1 + dl, &small(), 64).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!(*y <= *x + 1e-15);
            }
        }

        #[test]
        fn forward_is_linear(a in -2.0..2.0f64, b in -2.0..2.0f64) {
            let f = |x: &[f64; 3]| x[2] * x[0];
            let g = |x: &[f64; 3]| (x[1] + 0.3).sin();
            let h = move |x: &[f64; 3]| a * f(x) + b * g(x);
            let g0 = small();
            let tf = t_lambda_forward_with(&f, 0.1, &g0, 64).unwrap();
            let tg = t_lambda_forward_with(&g, 0.1, &g0, 64).unwrap();
            let th = t_lambda_forward_with(&h, 0.1, &g0, 64).unwrap();
            for k in 0..g0.len() {
                prop_assert!((th.values()[k] - a * tf.values()[k] - b * tg.values()[k]).abs() < 1e-12);
            }
        }
    }
}
