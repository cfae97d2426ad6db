//! Weighted Euclidean X-ray transform in the plane.
//!
//! Lines are {z + tζ} with ζ = (cos φ, sin φ) and foot point z = p (−sin φ, cos φ).

use std::f64::consts::{FRAC_PI_2, TAU};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_table, write_table};

pub const DEFAULT_HALF_WIDTH: f64 = 4.0;

/// Real samples on the periodic grid x_i = −S + i h, h = 2S/N, stored as values[i N + j]
/// for the point (x_i, x_j).
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneField {
    n: usize,
    half_width: f64,
    values: Vec<f64>,
}

impl PlaneField {
    pub fn new(n: usize, half_width: f64, values: Vec<f64>) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::invalid(format!(
                "grid size must be a power of two, got {n}"
            )));
        }
        if !(half_width > 0.0) {
            return Err(Error::invalid("half width must be positive"));
        }
        if values.len() != n * n {
            return Err(Error::invalid("value count does not match grid"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite field value"));
        }
        Ok(Self {
            n,
            half_width,
            values,
        })
    }

    pub fn zeros(n: usize, half_width: f64) -> Result<Self> {
        Self::new(n, half_width, vec![0.0; n * n])
    }

    pub fn from_fn<F: Fn(f64, f64) -> f64 + Sync>(n: usize, half_width: f64, f: F) -> Result<Self> {
        let h = 2.0 * half_width / n as f64;
        let values: Vec<f64> = (0..n * n)
            .into_par_iter()
            .map(|k| {
                f(
                    -half_width + (k / n) as f64 * h,
                    -half_width + (k % n) as f64 * h,
                )
            })
            .collect();
        Self::new(n, half_width, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn step(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.step()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.n == other.n && self.half_width == other.half_width
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.n, self.half_width, values)
    }

    pub fn map<F: Fn(f64, f64, f64) -> f64 + Sync>(&self, f: F) -> Self {
        let (n, h, s) = (self.n, self.step(), self.half_width);
        let values = self
            .values
            .par_iter()
            .enumerate()
            .map(|(k, &v)| f(-s + (k / n) as f64 * h, -s + (k % n) as f64 * h, v))
            .collect();
        Self {
            n,
            half_width: s,
            values,
        }
    }

    pub fn axpy(&self, a: f64, other: &Self) -> Result<Self> {
        if !self.same_grid(other) {
            return Err(Error::invalid("fields live on different grids"));
        }
        self.with_values(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| x + a * y)
                .collect(),
        )
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            n: self.n,
            half_width: self.half_width,
            values: self.values.iter().map(|v| a * v).collect(),
        }
    }

    /// Bilinear interpolation; zero outside the grid.
    #[inline]
    pub fn interp(&self, x: f64, y: f64) -> f64 {
        let h = self.step();
        let u = (x + self.half_width) / h;
        let v = (y + self.half_width) / h;
        let last = (self.n - 1) as f64;
        if !(u >= 0.0 && v >= 0.0 && u <= last && v <= last) {
            return 0.0;
        }
        let i = (u as usize).min(self.n - 2);
        let j = (v as usize).min(self.n - 2);
        let (a, b) = (u - i as f64, v - j as f64);
        let n = self.n;
        let r0 = &self.values[i * n + j..i * n + j + 2];
        let r1 = &self.values[(i + 1) * n + j..(i + 1) * n + j + 2];
        (1.0 - a) * ((1.0 - b) * r0[0] + b * r0[1]) + a * ((1.0 - b) * r1[0] + b * r1[1])
    }

    /// Keys cubic convolution, with samples beyond the grid taken as zero.
    #[inline]
    pub fn interp_cubic(&self, x: f64, y: f64) -> f64 {
        let h = self.step();
        let u = (x + self.half_width) / h;
        let v = (y + self.half_width) / h;
        let last = (self.n - 1) as f64;
        if !(u >= 0.0 && v >= 0.0 && u <= last && v <= last) {
            return 0.0;
        }
        let (i, j) = (u.floor() as i64, v.floor() as i64);
        let (wu, wv) = (keys_weights(u - i as f64), keys_weights(v - j as f64));
        let n = self.n as i64;
        let mut acc = 0.0;
        for (a, wa) in wu.iter().enumerate() {
            let ii = i + a as i64 - 1;
            if ii < 0 || ii >= n {
                continue;
            }
            let row = &self.values[(ii * n) as usize..((ii + 1) * n) as usize];
            let mut r = 0.0;
            for (b, wb) in wv.iter().enumerate() {
                let jj = j + b as i64 - 1;
                if jj >= 0 && jj < n {
                    r += wb * row[jj as usize];
                }
            }
            acc += wa * r;
        }
        acc
    }

    pub fn inner(&self, other: &Self) -> f64 {
        let h = self.step();
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * h
            * h
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// Radius of the smallest origin-centred ball containing every nonzero sample.
    pub fn support_radius(&self) -> f64 {
        let mut r2: f64 = 0.0;
        for i in 0..self.n {
            let x = self.coord(i);
            for j in 0..self.n {
                if self.values[i * self.n + j] != 0.0 {
                    let y = self.coord(j);
                    r2 = r2.max(x * x + y * y);
                }
            }
        }
        r2.sqrt()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let rows: Vec<Vec<f64>> = (0..self.n * self.n)
            .map(|k| {
                vec![
                    self.coord(k / self.n),
                    self.coord(k % self.n),
                    self.values[k],
                ]
            })
            .collect();
        write_table(out, &["x", "y", "value"], &rows)
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let rows = read_table(input, &["x", "y", "value"])?;
        let n = (rows.len() as f64).sqrt().round() as usize;
        if n * n != rows.len() || n < 2 {
            return Err(Error::invalid("plane table is not a square grid"));
        }
        let half_width = -rows[0][0];
        let f = Self::new(n, half_width, rows.iter().map(|r| r[2]).collect())?;
        for (k, r) in rows.iter().enumerate() {
            if (r[0] - f.coord(k / n)).abs() > 1e-9 || (r[1] - f.coord(k % n)).abs() > 1e-9 {
                return Err(Error::invalid(format!("row {k} is off the grid")));
            }
        }
        Ok(f)
    }
}

/// JSON descriptor {N, S, path} for a field stored as CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneFieldDescriptor {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "S")]
    pub half_width: f64,
    pub path: String,
}

/// Parallel-beam geometry: φ_k = 2πk/n_φ, p_m = (m − n_p/2) dp with dp = 2S/n_p.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EuclidRayGrid {
    pub n_phi: usize,
    pub n_p: usize,
    pub half_width: f64,
}

impl EuclidRayGrid {
    pub fn new(n_phi: usize, n_p: usize, half_width: f64) -> Result<Self> {
        if n_phi < 2 || n_p < 2 || n_p % 2 != 0 {
            return Err(Error::invalid(
                "ray grid needs n_phi >= 2 and an even n_p >= 2",
            ));
        }
        if !(half_width > 0.0) {
            return Err(Error::invalid("half width must be positive"));
        }
        Ok(Self {
            n_phi,
            n_p,
            half_width,
        })
    }

    /// Grid matched to a field: offsets share the field step.
    pub fn for_field(g: &PlaneField, n_phi: usize) -> Result<Self> {
        Self::new(n_phi, g.n(), g.half_width())
    }

    pub fn phi(&self, k: usize) -> f64 {
        TAU * k as f64 / self.n_phi as f64
    }

    pub fn dp(&self) -> f64 {
        2.0 * self.half_width / self.n_p as f64
    }

    pub fn p(&self, m: usize) -> f64 {
        (m as f64 - (self.n_p / 2) as f64) * self.dp()
    }

    pub fn dphi(&self) -> f64 {
        TAU / self.n_phi as f64
    }

    pub fn len(&self) -> usize {
        self.n_phi * self.n_p
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Samples g(φ_k, p_m), stored φ-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EuclidRayData {
    grid: EuclidRayGrid,
    values: Vec<f64>,
    support_warning: bool,
}

impl EuclidRayData {
    pub fn new(grid: EuclidRayGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid("value count does not match ray grid"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite ray value"));
        }
        Ok(Self {
            grid,
            values,
            support_warning: false,
        })
    }

    pub fn zeros(grid: EuclidRayGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
            support_warning: false,
        }
    }

    pub fn grid(&self) -> &EuclidRayGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Set when the field support came within two grid steps of the box edge.
    pub fn support_warning(&self) -> bool {
        self.support_warning
    }

    pub fn get(&self, k: usize, m: usize) -> f64 {
        self.values[k * self.grid.n_p + m]
    }

    /// Linear interpolation in p at a grid angle; zero outside the offset range.
    #[inline]
    pub fn interp_p(&self, k: usize, p: f64) -> f64 {
        let u = p / self.grid.dp() + (self.grid.n_p / 2) as f64;
        let last = (self.grid.n_p - 1) as f64;
        if !(u >= 0.0 && u <= last) {
            return 0.0;
        }
        let m = (u as usize).min(self.grid.n_p - 2);
        let a = u - m as f64;
        let row = &self.values[k * self.grid.n_p + m..k * self.grid.n_p + m + 2];
        (1.0 - a) * row[0] + a * row[1]
    }

    /// Keys cubic interpolation in p at a grid angle; zero outside the offset range.
    #[inline]
    pub fn interp_p_cubic(&self, k: usize, p: f64) -> f64 {
        let u = p / self.grid.dp() + (self.grid.n_p / 2) as f64;
        let last = (self.grid.n_p - 1) as f64;
        if !(u >= 0.0 && u <= last) {
            return 0.0;
        }
        let m = u.floor() as i64;
        let w = keys_weights(u - m as f64);
        let row = &self.values[k * self.grid.n_p..(k + 1) * self.grid.n_p];
        let mut acc = 0.0;
        for (b, wb) in w.iter().enumerate() {
            let mm = m + b as i64 - 1;
            if mm >= 0 && (mm as usize) < row.len() {
                acc += wb * row[mm as usize];
            }
        }
        acc
    }

    pub fn axpy(&self, a: f64, other: &Self) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::invalid("ray data on different grids"));
        }
        let mut out = Self::new(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| x + a * y)
                .collect(),
        )?;
        out.support_warning = self.support_warning || other.support_warning;
        Ok(out)
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| a * v).collect(),
            ..self.clone()
        }
    }

    /// ⟨F, G⟩ in L²(E) with dφ dp.
    pub fn inner(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * self.grid.dphi()
            * self.grid.dp()
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let rows: Vec<Vec<f64>> = (0..self.grid.len())
            .map(|k| {
                let (i, m) = (k / self.grid.n_p, k % self.grid.n_p);
                vec![self.grid.phi(i), self.grid.p(m), self.values[k]]
            })
            .collect();
        write_table(out, &["phi", "p", "value"], &rows)
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let rows = read_table(input, &["phi", "p", "value"])?;
        if rows.is_empty() {
            return Err(Error::invalid("empty ray table"));
        }
        let n_p = rows.iter().take_while(|r| r[0] == rows[0][0]).count();
        if n_p < 2 || rows.len() % n_p != 0 {
            return Err(Error::invalid("ray table is not a full grid"));
        }
        let half_width = -rows[0][1];
        let grid = EuclidRayGrid::new(rows.len() / n_p, n_p, half_width)?;
        for (k, r) in rows.iter().enumerate() {
            if (r[0] - grid.phi(k / n_p)).abs() > 1e-9 || (r[1] - grid.p(k % n_p)).abs() > 1e-9 {
                return Err(Error::invalid(format!("row {k} is off the ray grid")));
            }
        }
        Self::new(grid, rows.iter().map(|r| r[2]).collect())
    }
}

/// Tabulated weight over (t, |z|), bilinear and clamped outside the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub t_min: f64,
    pub t_max: f64,
    pub n_t: usize,
    pub r_max: f64,
    pub n_r: usize,
    /// values[i n_r + j] at t_i = t_min + i (t_max−t_min)/(n_t−1), r_j = j r_max/(n_r−1).
    pub values: Vec<f64>,
}

impl WeightTable {
    pub fn validate(&self) -> Result<()> {
        if self.n_t < 2 || self.n_r < 2 || self.values.len() != self.n_t * self.n_r {
            return Err(Error::invalid("weight table shape mismatch"));
        }
        if !(self.t_max > self.t_min) || !(self.r_max > 0.0) {
            return Err(Error::invalid("weight table has an empty range"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite weight"));
        }
        Ok(())
    }

    /// Samples an analytic weight w(t, |z|) on a table.
    pub fn sample<F: Fn(f64, f64) -> f64>(
        f: F,
        (t_min, t_max, n_t): (f64, f64, usize),
        (r_max, n_r): (f64, usize),
    ) -> Self {
        let mut values = Vec::with_capacity(n_t * n_r);
        for i in 0..n_t {
            let t = t_min + (t_max - t_min) * i as f64 / (n_t - 1) as f64;
            for j in 0..n_r {
                values.push(f(t, r_max * j as f64 / (n_r - 1) as f64));
            }
        }
        Self {
            t_min,
            t_max,
            n_t,
            r_max,
            n_r,
            values,
        }
    }

    fn eval(&self, t: f64, r: f64) -> f64 {
        let u = ((t - self.t_min) / (self.t_max - self.t_min) * (self.n_t - 1) as f64)
            .clamp(0.0, (self.n_t - 1) as f64);
        let v = (r / self.r_max * (self.n_r - 1) as f64).clamp(0.0, (self.n_r - 1) as f64);
        let i = (u as usize).min(self.n_t - 2);
        let j = (v as usize).min(self.n_r - 2);
        let (a, b) = (u - i as f64, v - j as f64);
        let f = |i: usize, j: usize| self.values[i * self.n_r + j];
        (1.0 - a) * ((1.0 - b) * f(i, j) + b * f(i, j + 1))
            + a * ((1.0 - b) * f(i + 1, j) + b * f(i + 1, j + 1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WeightSpec {
    Unit,
    Attenuated { lambda: f64 },
    Tabulated(WeightTable),
}

impl WeightSpec {
    pub fn attenuated(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::OutOfRange {
                name: "lambda",
                value: lambda,
                expected: "finite and >= 0",
            });
        }
        Ok(Self::Attenuated { lambda })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Unit => Ok(()),
            Self::Attenuated { lambda } => Self::attenuated(*lambda).map(|_| ()),
            Self::Tabulated(t) => t.validate(),
        }
    }

    /// w(t, z); only |z| enters for the supported variants.
    pub fn eval(&self, t: f64, z: &[f64; 2]) -> f64 {
        self.eval_r(t, z[0].hypot(z[1]))
    }

    /// w(t, z) with r = |z|.
    #[inline]
    pub fn eval_r(&self, t: f64, r: f64) -> f64 {
        match self {
            Self::Unit => 1.0,
            Self::Attenuated { lambda } => attenuation_weight(*lambda, t, r),
            Self::Tabulated(tab) => tab.eval(t, r),
        }
    }

    pub fn is_unit(&self) -> bool {
        matches!(self, Self::Unit) || matches!(self, Self::Attenuated { lambda } if *lambda == 0.0)
    }
}

/// w_λ(t, z) = exp(−λ(π/2 − arctan(t/⟨z⟩))) with r = |z|.
#[inline]
pub fn attenuation_weight(lambda: f64, t: f64, r: f64) -> f64 {
    if lambda == 0.0 {
        return 1.0;
    }
    let b = (1.0 + r * r).sqrt();
    (-lambda * (FRAC_PI_2 - (t / b).atan())).exp()
}

/// sup |w − 1| over lines meeting the ball of radius `radius`, sampled on a grid.
pub fn weight_deviation(w: &WeightSpec, radius: f64) -> f64 {
    let n = 200;
    let mut dev: f64 = 0.0;
    for i in 0..=n {
        let r = radius * i as f64 / n as f64;
        let tmax = (radius * radius - r * r).max(0.0).sqrt();
        for k in 0..=n {
            let t = -tmax + 2.0 * tmax * k as f64 / n as f64;
            dev = dev.max((w.eval_r(t, r) - 1.0).abs());
        }
    }
    dev
}

/// sup_z ∥w(·,z)∥_{L²} with the time integral restricted to |t| ≤ `radius`, the only part
/// seen by fields supported in the ball of that radius.
pub fn weight_l2_sup(w: &WeightSpec, radius: f64) -> f64 {
    let (nr, nt) = (200usize, 2000usize);
    let mut best: f64 = 0.0;
    for i in 0..=nr {
        let r = radius * i as f64 / nr as f64;
        let tmax = (radius * radius - r * r).max(0.0).sqrt();
        if tmax == 0.0 {
            continue;
        }
        let v = crate::quad::simpson(|t| w.eval_r(t, r).powi(2), -tmax, tmax, nt)
            .expect("even interval count");
        best = best.max(v.sqrt());
    }
    best
}

#[derive(Debug, Clone, Copy)]
struct Trig {
    c: f64,
    s: f64,
}

fn trig_table(grid: &EuclidRayGrid) -> Vec<Trig> {
    (0..grid.n_phi)
        .map(|k| {
            let (s, c) = grid.phi(k).sin_cos();
            Trig { c, s }
        })
        .collect()
}

/// X_w g on `grid`. Each line is sampled on the fixed lattice t ∈ (h/2)·Z, restricted to
/// the chord of the support ball; the bilinear interpolant vanishes at the chord ends, so
/// this is the trapezoid rule and the map g ↦ X_w g is exactly linear.
pub fn x_ray_forward(
    g: &PlaneField,
    w: &WeightSpec,
    grid: &EuclidRayGrid,
) -> Result<EuclidRayData> {
    w.validate()?;
    x_ray_forward_with(g, |t, r| w.eval_r(t, r), grid)
}

/// Forward transform with a weight given as a function of (t, |z|).
pub fn x_ray_forward_with<W: Fn(f64, f64) -> f64 + Sync>(
    g: &PlaneField,
    w: W,
    grid: &EuclidRayGrid,
) -> Result<EuclidRayData> {
    let h = g.step();
    let support = g.support_radius();
    let warn = support > g.half_width() - 2.0 * h;
    let empty = g.values().iter().all(|&v| v == 0.0);
    let radius = if empty { 0.0 } else { support + 2.0 * h };
    let trig = trig_table(grid);
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let (k, m) = (idx / grid.n_p, idx % grid.n_p);
            line_integral(g, &w, trig[k], grid.p(m), radius, h / 2.0)
        })
        .collect();
    let mut out = EuclidRayData::new(*grid, values)?;
    out.support_warning = warn;
    Ok(out)
}

#[inline]
fn line_integral<W: Fn(f64, f64) -> f64>(
    g: &PlaneField,
    w: &W,
    tr: Trig,
    p: f64,
    radius: f64,
    step: f64,
) -> f64 {
    if p.abs() >= radius || radius == 0.0 {
        return 0.0;
    }
    let tmax = (radius * radius - p * p).sqrt();
    let qmax = (tmax / step).floor() as i64;
    let (zx, zy) = (-p * tr.s, p * tr.c);
    let r = p.abs();
    let mut acc = 0.0;
    for q in -qmax..=qmax {
        let t = q as f64 * step;
        let f = g.interp_cubic(zx + t * tr.c, zy + t * tr.s);
        if f != 0.0 {
            acc += f * w(t, r);
        }
    }
    acc * step
}

/// Keys (a = −½) cubic convolution weights for nodes −1, 0, 1, 2 at offset s ∈ [0,1).
#[inline]
fn keys_weights(s: f64) -> [f64; 4] {
    let s2 = s * s;
    let s3 = s2 * s;
    [
        -0.5 * s3 + s2 - 0.5 * s,
        1.5 * s3 - 2.5 * s2 + 1.0,
        -1.5 * s3 + 2.0 * s2 + 0.5 * s,
        0.5 * s3 - 0.5 * s2,
    ]
}

/// X_w* F(z) = ∫ w(⟨z,ζ⟩, π_{ζ⊥}z) F(π_{ζ⊥}z, ζ) dζ on the n×n grid over [−S,S]².
pub fn x_ray_adjoint(
    data: &EuclidRayData,
    w: &WeightSpec,
    n: usize,
    half_width: f64,
) -> Result<PlaneField> {
    w.validate()?;
    let grid = data.grid();
    let trig = trig_table(grid);
    let h = 2.0 * half_width / n as f64;
    let dphi = grid.dphi();
    let unit = w.is_unit();
    let values: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let x = -half_width + (idx / n) as f64 * h;
            let y = -half_width + (idx % n) as f64 * h;
            let mut acc = 0.0;
            for (k, tr) in trig.iter().enumerate() {
                let p = -x * tr.s + y * tr.c;
                let f = data.interp_p_cubic(k, p);
                if f != 0.0 {
                    acc += if unit {
                        f
                    } else {
                        f * w.eval_r(x * tr.c + y * tr.s, p.abs())
                    };
                }
            }
            acc * dphi
        })
        .collect();
    PlaneField::new(n, half_width, values)
}

/// L_w(z,y): the weight at z on the line through z and y, oriented from z towards y.
pub fn line_weight(w: &WeightSpec, z: &[f64; 2], y: &[f64; 2]) -> Result<f64> {
    let d = [y[0] - z[0], y[1] - z[1]];
    let len = d[0].hypot(d[1]);
    if !(len > 0.0) {
        return Err(Error::Singular);
    }
    let th = [d[0] / len, d[1] / len];
    Ok(oriented_weight(w, z, &th))
}

#[inline]
fn oriented_weight(w: &WeightSpec, z: &[f64; 2], th: &[f64; 2]) -> f64 {
    let t = z[0] * th[0] + z[1] * th[1];
    // |π_{θ⊥} z| = |z ∧ θ|
    let r = (z[0] * th[1] - z[1] * th[0]).abs();
    w.eval_r(t, r)
}

/// Kernel of the normal operator in d = 2, symmetrized over line orientation:
/// ½ [L(z,y) R(y,z) + R(z,y) L(y,z)] / |z − y|, where R reverses the orientation.
///
/// For weights even in t this is the product L(z,y) L(y,z)/|z−y|; the operator
/// X_w* X_w has kernel equal to twice this expression.
pub fn normal_kernel(w: &WeightSpec, z: &[f64; 2], y: &[f64; 2]) -> Result<f64> {
    let d = [y[0] - z[0], y[1] - z[1]];
    let len = d[0].hypot(d[1]);
    if !(len > 0.0) {
        return Err(Error::Singular);
    }
    Ok(kernel_numerator(w, z, y, &[d[0] / len, d[1] / len]) / len)
}

#[inline]
fn kernel_numerator(w: &WeightSpec, z: &[f64; 2], y: &[f64; 2], th: &[f64; 2]) -> f64 {
    let back = [-th[0], -th[1]];
    let lzy = oriented_weight(w, z, th);
    let rzy = oriented_weight(w, z, &back);
    let lyz = oriented_weight(w, y, &back);
    let ryz = oriented_weight(w, y, th);
    0.5 * (lzy * ryz + rzy * lyz)
}

/// Polar quadrature resolution for kernel application.
#[derive(Debug, Clone, Copy)]
pub struct PolarQuad {
    pub n_angles: usize,
    /// Radial step in units of the field step.
    pub radial_step: f64,
}

impl Default for PolarQuad {
    fn default() -> Self {
        Self {
            n_angles: 256,
            radial_step: 0.5,
        }
    }
}

/// ∫ K(z,y) g(y) dy at each point of `points`, with K from [`normal_kernel`]. The 1/|z−y|
/// singularity is absorbed by polar coordinates centred at z.
pub fn normal_apply_kernel(
    w: &WeightSpec,
    g: &PlaneField,
    points: &[[f64; 2]],
    quad: PolarQuad,
) -> Result<Vec<f64>> {
    w.validate()?;
    let support = g.support_radius() + 2.0 * g.step();
    let dr = quad.radial_step * g.step();
    let dth = TAU / quad.n_angles as f64;
    let dirs: Vec<[f64; 2]> = (0..quad.n_angles)
        .map(|k| {
            let (s, c) = (k as f64 * dth).sin_cos();
            [c, s]
        })
        .collect();
    Ok(points
        .par_iter()
        .map(|z| {
            let zn = z[0].hypot(z[1]);
            let rmax = zn + support;
            let nr = (rmax / dr).ceil() as usize;
            let mut acc = 0.0;
            for th in &dirs {
                for q in 0..nr {
                    let rho = (q as f64 + 0.5) * dr;
                    let y = [z[0] + rho * th[0], z[1] + rho * th[1]];
                    let f = g.interp(y[0], y[1]);
                    if f != 0.0 {
                        acc += f * kernel_numerator(w, z, &y, th);
                    }
                }
            }
            acc * dr * dth
        })
        .collect())
}
