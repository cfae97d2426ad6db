//! Sphere and domain geometry.
//!
//! Points of S^d live in R^{d+1}; `N = d + 1` is a const parameter. Boundary rays of the
//! northern hemisphere are stored with the equator point padded by a trailing zero.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::{Error, Result};

pub const UNIT_TOL: f64 = 1e-12;
pub const CONJUGATE_TOL: f64 = 1e-12;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Japanese bracket ⟨z⟩ = (1 + |z|²)^{1/2}.
#[inline]
pub fn bracket(z: &[f64]) -> f64 {
    (1.0 + dot(z, z)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpherePoint<const N: usize> {
    coords: [f64; N],
}

impl<const N: usize> SpherePoint<N> {
    pub fn new(coords: [f64; N]) -> Result<Self> {
        let n = norm(&coords);
        if !n.is_finite() || (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::NotUnit { norm: n });
        }
        Ok(Self { coords })
    }

    /// Normalizes `v` onto the sphere.
    pub fn normalize(v: [f64; N]) -> Result<Self> {
        let n = norm(&v);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Degenerate("cannot normalize zero vector".into()));
        }
        Ok(Self {
            coords: v.map(|x| x / n),
        })
    }

    pub fn coords(&self) -> &[f64; N] {
        &self.coords
    }

    /// Last coordinate x_{d+1}.
    pub fn height(&self) -> f64 {
        self.coords[N - 1]
    }
}

pub type S2Point = SpherePoint<3>;

/// Inward unit tangent vector at an equator point of the closed hemisphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryRay<const N: usize> {
    base: [f64; N],
    dir: [f64; N],
}

impl<const N: usize> BoundaryRay<N> {
    /// `base` holds x' in its first `N-1` entries; the last entry must be zero.
    pub fn new(base: [f64; N], dir: [f64; N]) -> Result<Self> {
        if base[N - 1] != 0.0 {
            return Err(Error::invalid("base point must lie on the equator"));
        }
        let nb = norm(&base);
        let nd = norm(&dir);
        if (nb - 1.0).abs() > UNIT_TOL {
            return Err(Error::NotUnit { norm: nb });
        }
        if (nd - 1.0).abs() > UNIT_TOL {
            return Err(Error::NotUnit { norm: nd });
        }
        if dot(&base, &dir).abs() >= UNIT_TOL {
            return Err(Error::invalid("direction is not tangent at the base point"));
        }
        if dir[N - 1] <= 0.0 {
            return Err(Error::invalid(
                "direction does not point into the hemisphere",
            ));
        }
        Ok(Self { base, dir })
    }

    pub fn base(&self) -> &[f64; N] {
        &self.base
    }

    pub fn dir(&self) -> &[f64; N] {
        &self.dir
    }
}

pub type Ray2 = BoundaryRay<3>;

impl Ray2 {
    /// Ray with base (cos α, sin α, 0) and direction cos β (−sin α, cos α, 0) + sin β e₃.
    pub fn from_angles(alpha: f64, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < std::f64::consts::PI) {
            return Err(Error::OutOfRange {
                name: "beta",
                value: beta,
                expected: "0 < beta < pi",
            });
        }
        let (sa, ca) = alpha.sin_cos();
        let (sb, cb) = beta.sin_cos();
        Ok(Self {
            base: [ca, sa, 0.0],
            dir: [-cb * sa, cb * ca, sb],
        })
    }
}

pub fn sphere_distance<const N: usize>(x: &SpherePoint<N>, y: &SpherePoint<N>) -> f64 {
    dot(&x.coords, &y.coords).clamp(-1.0, 1.0).acos()
}

/// Checked variant for raw coordinates.
pub fn sphere_distance_raw<const N: usize>(x: [f64; N], y: [f64; N]) -> Result<f64> {
    Ok(sphere_distance(
        &SpherePoint::new(x)?,
        &SpherePoint::new(y)?,
    ))
}

/// γ(t) = cos t (x',0) + sin t ξ for t ∈ [0,π].
pub fn geodesic_point<const N: usize>(r: &BoundaryRay<N>, t: f64) -> Result<SpherePoint<N>> {
    if !(0.0..=std::f64::consts::PI).contains(&t) {
        return Err(Error::OutOfRange {
            name: "t",
            value: t,
            expected: "0 <= t <= pi",
        });
    }
    let (s, c) = t.sin_cos();
    let mut out = [0.0; N];
    for k in 0..N {
        out[k] = c * r.base[k] + s * r.dir[k];
    }
    Ok(SpherePoint { coords: out })
}

/// Inverse exponential map at the equator point (x_base, 0).
///
/// Returns the distance t and the unit initial direction.
pub fn exp_inverse<const N: usize>(x_base: &[f64], y: &SpherePoint<N>) -> Result<(f64, [f64; N])> {
    if x_base.len() != N - 1 {
        return Err(Error::invalid("base point has wrong dimension"));
    }
    let nb = norm(x_base);
    if (nb - 1.0).abs() > UNIT_TOL {
        return Err(Error::NotUnit { norm: nb });
    }
    let c = dot(x_base, &y.coords[..N - 1]);
    if c.abs() >= 1.0 - CONJUGATE_TOL {
        return Err(Error::Degenerate(format!(
            "point is equal or conjugate to the base point (<x',y'> = {c})"
        )));
    }
    let s = (1.0 - c * c).sqrt();
    let mut eta = [0.0; N];
    for k in 0..N {
        let b = if k < N - 1 { x_base[k] } else { 0.0 };
        eta[k] = (y.coords[k] - c * b) / s;
    }
    Ok((c.acos(), eta))
}

/// σ₊(x) = x'/x_{d+1}.
pub fn stereo_project<const N: usize>(x: &SpherePoint<N>) -> Result<Vec<f64>> {
    let h = x.height();
    if h <= 0.0 {
        return Err(Error::OutOfRange {
            name: "x_{d+1}",
            value: h,
            expected: "> 0 (open northern hemisphere)",
        });
    }
    Ok(x.coords[..N - 1].iter().map(|v| v / h).collect())
}

/// σ₊⁻¹(z) = (z,1)/⟨z⟩.
pub fn stereo_lift<const N: usize>(z: &[f64]) -> Result<SpherePoint<N>> {
    if z.len() != N - 1 {
        return Err(Error::invalid("planar point has wrong dimension"));
    }
    let b = bracket(z);
    let mut out = [0.0; N];
    for k in 0..N - 1 {
        out[k] = z[k] / b;
    }
    out[N - 1] = 1.0 / b;
    Ok(SpherePoint { coords: out })
}

/// Sampled boundary point with outward unit normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySample {
    pub x: Vec<f64>,
    pub normal: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CapParams {
    pub epsilon: f64,
    pub rho0: f64,
    pub s0: f64,
    #[serde(skip)]
    omega0_buf: [f64; 3],
    #[serde(skip)]
    dim: usize,
    pub alpha0: f64,
}

impl CapParams {
    pub fn omega0(&self) -> &[f64] {
        &self.omega0_buf[..self.dim]
    }
}

/// Direction grid resolution for the support-function sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepResolution {
    /// Angular step in degrees for planar scenes.
    pub planar_step_deg: f64,
    /// Icosahedral refinement level for spatial scenes.
    pub ico_level: u32,
}

impl Default for SweepResolution {
    fn default() -> Self {
        Self {
            planar_step_deg: 1.0,
            ico_level: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainScene {
    boundary: Vec<BoundarySample>,
    x0: Vec<f64>,
    params: CapParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SceneSpec {
    Ball {
        #[serde(rename = "type")]
        kind: String,
        center: Vec<f64>,
        radius: f64,
        x0: Vec<f64>,
        #[serde(default)]
        samples: Option<usize>,
    },
    Points {
        boundary: Vec<(Vec<f64>, Vec<f64>)>,
        x0: Vec<f64>,
    },
}

impl DomainScene {
    pub fn new(boundary: Vec<BoundarySample>, x0: Vec<f64>) -> Result<Self> {
        Self::with_resolution(boundary, x0, SweepResolution::default())
    }

    pub fn with_resolution(
        boundary: Vec<BoundarySample>,
        x0: Vec<f64>,
        res: SweepResolution,
    ) -> Result<Self> {
        let n = x0.len();
        if !(n == 2 || n == 3) {
            return Err(Error::invalid(format!(
                "scenes are supported in 2 or 3 dimensions, got {n}"
            )));
        }
        if boundary.is_empty() {
            return Err(Error::invalid("empty boundary"));
        }
        for b in &boundary {
            if b.x.len() != n || b.normal.len() != n {
                return Err(Error::invalid("boundary sample has wrong dimension"));
            }
            let nn = norm(&b.normal);
            if (nn - 1.0).abs() > 1e-9 {
                return Err(Error::NotUnit { norm: nn });
            }
        }
        let params = cap_params(&boundary, &x0, res)?;
        Ok(Self {
            boundary,
            x0,
            params,
        })
    }

    /// Ball sampled on a latitude-longitude grid that includes both poles (3-D) or on a
    /// uniform circle (2-D).
    pub fn ball(center: &[f64], radius: f64, x0: Vec<f64>, samples: usize) -> Result<Self> {
        Self::new(ball_samples(center, radius, samples)?, x0)
    }

    /// Axis-aligned box with `per_edge` samples along each edge of every face.
    pub fn boxed(lo: &[f64], hi: &[f64], x0: Vec<f64>, per_edge: usize) -> Result<Self> {
        Self::new(box_samples(lo, hi, per_edge)?, x0)
    }

    pub fn from_spec(spec: &SceneSpec) -> Result<Self> {
        match spec {
            SceneSpec::Ball {
                kind,
                center,
                radius,
                x0,
                samples,
            } => {
                if kind != "ball" {
                    return Err(Error::invalid(format!("unknown scene type '{kind}'")));
                }
                Self::ball(center, *radius, x0.clone(), samples.unwrap_or(64))
            }
            SceneSpec::Points { boundary, x0 } => Self::new(
                boundary
                    .iter()
                    .map(|(x, nu)| BoundarySample {
                        x: x.clone(),
                        normal: nu.clone(),
                    })
                    .collect(),
                x0.clone(),
            ),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: SceneSpec = serde_json::from_str(s)?;
        Self::from_spec(&spec)
    }

    pub fn to_spec(&self) -> SceneSpec {
        SceneSpec::Points {
            boundary: self
                .boundary
                .iter()
                .map(|b| (b.x.clone(), b.normal.clone()))
                .collect(),
            x0: self.x0.clone(),
        }
    }

    pub fn boundary(&self) -> &[BoundarySample] {
        &self.boundary
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn params(&self) -> &CapParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }
}

fn ball_samples(center: &[f64], radius: f64, samples: usize) -> Result<Vec<BoundarySample>> {
    if !(radius > 0.0) {
        return Err(Error::invalid("ball radius must be positive"));
    }
    if samples < 4 {
        return Err(Error::invalid("ball needs at least 4 samples per circle"));
    }
    let mut out = Vec::new();
    let tau = std::f64::consts::TAU;
    match center.len() {
        2 => {
            for k in 0..samples {
                let a = tau * k as f64 / samples as f64;
                let nu = vec![a.cos(), a.sin()];
                out.push(BoundarySample {
                    x: vec![center[0] + radius * nu[0], center[1] + radius * nu[1]],
                    normal: nu,
                });
            }
        }
        3 => {
            let n_lat = samples / 2;
            for i in 0..=n_lat {
                let th = std::f64::consts::PI * i as f64 / n_lat as f64;
                let (st, ct) = th.sin_cos();
                let n_lon = if i == 0 || i == n_lat { 1 } else { samples };
                for j in 0..n_lon {
                    let ph = tau * j as f64 / n_lon as f64;
                    let nu = vec![st * ph.cos(), st * ph.sin(), ct];
                    out.push(BoundarySample {
                        x: (0..3).map(|k| center[k] + radius * nu[k]).collect(),
                        normal: nu,
                    });
                }
            }
        }
        n => return Err(Error::invalid(format!("ball in dimension {n} unsupported"))),
    }
    Ok(out)
}

fn box_samples(lo: &[f64], hi: &[f64], per_edge: usize) -> Result<Vec<BoundarySample>> {
    let n = lo.len();
    if hi.len() != n || !(n == 2 || n == 3) {
        return Err(Error::invalid("box corners must be 2-D or 3-D and agree"));
    }
    if lo.iter().zip(hi).any(|(a, b)| !(a < b)) || per_edge < 2 {
        return Err(Error::invalid("degenerate box"));
    }
    let lerp = |k: usize, i: usize| lo[k] + (hi[k] - lo[k]) * i as f64 / (per_edge - 1) as f64;
    let mut out = Vec::new();
    for axis in 0..n {
        for side in [-1.0, 1.0] {
            let fixed = if side < 0.0 { lo[axis] } else { hi[axis] };
            let mut normal = vec![0.0; n];
            normal[axis] = side;
            let others: Vec<usize> = (0..n).filter(|&k| k != axis).collect();
            let count = per_edge.pow(others.len() as u32);
            for idx in 0..count {
                let mut x = vec![0.0; n];
                x[axis] = fixed;
                let mut rem = idx;
                for &k in &others {
                    x[k] = lerp(k, rem % per_edge);
                    rem /= per_edge;
                }
                out.push(BoundarySample {
                    x,
                    normal: normal.clone(),
                });
            }
        }
    }
    Ok(out)
}

/// Separation s(ω) = min over boundary of ⟨x−x₀, ω⟩.
fn separation(boundary: &[BoundarySample], x0: &[f64], omega: &[f64]) -> f64 {
    boundary
        .iter()
        .map(|b| {
            b.x.iter()
                .zip(x0)
                .zip(omega)
                .map(|((x, c), w)| (x - c) * w)
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Vertices of the icosahedron with one vertex on the positive z-axis, refined `level` times.
pub fn icosphere(level: u32) -> Vec<[f64; 3]> {
    let mut verts: Vec<[f64; 3]> = Vec::with_capacity(12);
    verts.push([0.0, 0.0, 1.0]);
    let z = 1.0 / 5f64.sqrt();
    let r = 2.0 / 5f64.sqrt();
    for k in 0..5 {
        let a = std::f64::consts::TAU * k as f64 / 5.0;
        verts.push([r * a.cos(), r * a.sin(), z]);
    }
    for k in 0..5 {
        let a = std::f64::consts::TAU * (k as f64 + 0.5) / 5.0;
        verts.push([r * a.cos(), r * a.sin(), -z]);
    }
    verts.push([0.0, 0.0, -1.0]);
    let mut faces: Vec<[usize; 3]> = Vec::with_capacity(20);
    for k in 0..5 {
        let a = 1 + k;
        let b = 1 + (k + 1) % 5;
        let c = 6 + k;
        let d = 6 + (k + 1) % 5;
        faces.push([0, a, b]);
        faces.push([a, c, b]);
        faces.push([b, c, d]);
        faces.push([11, d, c]);
    }
    for _ in 0..level {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |i: usize, j: usize, verts: &mut Vec<[f64; 3]>| -> usize {
            let key = (i.min(j), i.max(j));
            *cache.entry(key).or_insert_with(|| {
                let (p, q) = (verts[i], verts[j]);
                let m = [p[0] + q[0], p[1] + q[1], p[2] + q[2]];
                let n = norm(&m);
                verts.push([m[0] / n, m[1] / n, m[2] / n]);
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let ab = mid(f[0], f[1], &mut verts);
            let bc = mid(f[1], f[2], &mut verts);
            let ca = mid(f[2], f[0], &mut verts);
            next.push([f[0], ab, ca]);
            next.push([f[1], bc, ab]);
            next.push([f[2], ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    verts
}

/// Minimum-norm point of the convex hull of `pts` (Wolfe's algorithm).
fn min_norm_point(pts: &[Vec<f64>]) -> Vec<f64> {
    use nalgebra::{DMatrix, DVector};
    let n = pts[0].len();
    let scale = pts
        .iter()
        .map(|p| dot(p, p))
        .fold(0.0, f64::max)
        .max(1e-300);
    let combine = |set: &[usize], w: &[f64]| -> Vec<f64> {
        let mut x = vec![0.0; n];
        for (&i, &c) in set.iter().zip(w) {
            for k in 0..n {
                x[k] += c * pts[i][k];
            }
        }
        x
    };
    let first = (0..pts.len())
        .min_by(|&a, &b| dot(&pts[a], &pts[a]).total_cmp(&dot(&pts[b], &pts[b])))
        .unwrap_or(0);
    let mut set = vec![first];
    let mut w = vec![1.0];
    let mut x = pts[first].clone();
    for _ in 0..10_000 {
        let j = (0..pts.len())
            .min_by(|&a, &b| dot(&x, &pts[a]).total_cmp(&dot(&x, &pts[b])))
            .unwrap_or(0);
        if dot(&x, &x) - dot(&x, &pts[j]) <= 1e-15 * scale || set.contains(&j) {
            break;
        }
        set.push(j);
        w.push(0.0);
        loop {
            let m = set.len();
            let mut a = DMatrix::<f64>::zeros(m + 1, m + 1);
            for r in 0..m {
                for c in 0..m {
                    a[(r, c)] = dot(&pts[set[r]], &pts[set[c]]);
                }
                a[(r, m)] = 1.0;
                a[(m, r)] = 1.0;
            }
            let mut rhs = DVector::<f64>::zeros(m + 1);
            rhs[m] = 1.0;
            let v = match a.svd(true, true).solve(&rhs, 1e-14 * scale) {
                Ok(v) => v,
                Err(_) => break,
            };
            let v: Vec<f64> = (0..m).map(|k| v[k]).collect();
            if v.iter().all(|&c| c > 1e-14) {
                w = v;
                x = combine(&set, &w);
                break;
            }
            let mut theta = 1.0f64;
            for k in 0..m {
                if v[k] <= 1e-14 && w[k] - v[k] > 0.0 {
                    theta = theta.min(w[k] / (w[k] - v[k]));
                }
            }
            for k in 0..m {
                w[k] = (1.0 - theta) * w[k] + theta * v[k];
            }
            let mut k = 0;
            while k < set.len() {
                if w[k] <= 1e-14 {
                    set.remove(k);
                    w.remove(k);
                } else {
                    k += 1;
                }
            }
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|c| *c /= total);
            x = combine(&set, &w);
            if set.len() == 1 {
                break;
            }
        }
    }
    x
}

/// Derives (ε, ρ₀, s₀, ω₀, α₀).
///
/// The separation min⟨x−x₀,ω⟩ is first maximized over a direction grid; the best grid
/// direction is then refined to the exact optimum, which is the normalized minimum-norm
/// point of the hull of the offsets x−x₀. The refined value never falls below the grid value.
pub fn cap_params(
    boundary: &[BoundarySample],
    x0: &[f64],
    res: SweepResolution,
) -> Result<CapParams> {
    let n = x0.len();
    let sep = |w: &[f64; 3]| separation(boundary, x0, &w[..n]);
    let (mut best, mut best_s) = ([0.0; 3], f64::NEG_INFINITY);
    let mut consider = |w: [f64; 3]| {
        let s = sep(&w);
        if s > best_s {
            best_s = s;
            best = w;
        }
    };
    if n == 2 {
        if !(res.planar_step_deg > 0.0) {
            return Err(Error::invalid("sweep step must be positive"));
        }
        let m = (360.0 / res.planar_step_deg).round().max(4.0) as usize;
        for k in 0..m {
            let a = std::f64::consts::TAU * k as f64 / m as f64;
            consider([a.cos(), a.sin(), 0.0]);
        }
    } else {
        for w in icosphere(res.ico_level) {
            consider(w);
        }
    }
    if !(best_s > 0.0) {
        return Err(Error::Infeasible { separation: best_s });
    }
    let offsets: Vec<Vec<f64>> = boundary
        .iter()
        .map(|b| b.x.iter().zip(x0).map(|(x, c)| x - c).collect())
        .collect();
    let p = min_norm_point(&offsets);
    let pn = norm(&p);
    if pn > 0.0 {
        let mut w = [0.0; 3];
        for k in 0..n {
            w[k] = p[k] / pn;
        }
        let s = sep(&w);
        if s >= best_s {
            best_s = s;
            best = w;
        }
    }
    let rho0 = offsets.iter().map(|d| norm(d)).fold(0.0, f64::max);
    let alpha0 = (best_s / rho0).min(1.0);
    Ok(CapParams {
        epsilon: best_s,
        rho0,
        s0: best_s,
        omega0_buf: best,
        dim: n,
        alpha0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrontSample {
    pub in_front: bool,
    pub weight: f64,
}

/// Labels boundary samples in F_δ(x₀) = {⟨x−x₀,ν⟩ ≤ δ|x−x₀|²} and evaluates the boundary
/// weight |⟨ν, x−x₀⟩|/|x−x₀|².
pub fn front_set(scene: &DomainScene, delta: f64) -> Result<Vec<FrontSample>> {
    if !delta.is_finite() {
        return Err(Error::invalid("delta must be finite"));
    }
    Ok(scene
        .boundary
        .iter()
        .map(|b| {
            let d: Vec<f64> = b.x.iter().zip(&scene.x0).map(|(x, c)| x - c).collect();
            let r2 = dot(&d, &d);
            let proj = dot(&d, &b.normal);
            FrontSample {
                in_front: proj <= delta * r2,
                weight: proj.abs() / r2,
            }
        })
        .collect())
}
