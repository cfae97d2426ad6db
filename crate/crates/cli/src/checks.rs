//! The invariant suites behind `validate` and `lemma-check`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hemiray::cgo::{measure_identity, quasimode_norm, FiberFrame, FiberProfile, Quasimode};
use hemiray::euclid_xray::{
    x_ray_adjoint, x_ray_forward, EuclidRayData, EuclidRayGrid, PlaneField, WeightSpec,
};
use hemiray::hemi_xray::{
    santalo_rhs, surface_integral, RayGrid, SphereField, DEFAULT_SPHERE_GRID,
};
use hemiray::logcvx::{
    bump, loglog_slope, majorization_check, shrinking_m_sweep, MajorizationOptions,
};
use hemiray::recon::PhantomSet;
use hemiray::spectral::LineSamples;
use hemiray::Result;

pub const NAMES: [&str; 4] = ["santalo", "duality", "measure", "quasimode-norm"];

const SANTALO_TOL: f64 = 1e-3;
const DUALITY_TOL: f64 = 1e-3;
const MEASURE_TOL: f64 = 1e-3;
const NORM_TOL: f64 = 1e-6;
const SLOPE_TOL: f64 = 0.05;

pub struct CheckRow {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckRow {
    fn below(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            pass: value <= tolerance,
        }
    }
}

/// Sampling density shared by the checks; `--grid` scales all of them together.
pub struct Resolution {
    pub sphere: usize,
    pub rays: (usize, usize),
    pub plane: usize,
    pub plane_angles: usize,
    pub measure: usize,
}

impl Resolution {
    pub fn from_grid(grid: Option<usize>, angles: Option<usize>) -> Self {
        let sphere = grid.unwrap_or(DEFAULT_SPHERE_GRID).max(2);
        let n_alpha = angles
            .unwrap_or((360 * sphere).div_ceil(DEFAULT_SPHERE_GRID))
            .max(4);
        let plane = (sphere / 2).max(4);
        Self {
            sphere,
            rays: (n_alpha, n_alpha / 2),
            plane: plane + plane % 2,
            plane_angles: (n_alpha / 2).max(2),
            measure: (sphere / 4).max(4),
        }
    }
}

pub fn run(name: &str, res: &Resolution, seed: u64) -> Result<CheckRow> {
    match name {
        "santalo" => santalo(res),
        "duality" => duality(res, seed),
        "measure" => measure(res),
        "quasimode-norm" => quasimode(),
        _ => Err(hemiray::Error::InvalidInput(format!(
            "unknown check {name}"
        ))),
    }
}

fn santalo(res: &Resolution) -> Result<CheckRow> {
    let rays = RayGrid::new(res.rays.0, res.rays.1)?;
    let cap = PhantomSet::default_cap(0.5)?;
    let fields = [
        SphereField::from_fn(res.sphere, res.sphere, None, &|_: &[f64; 3]| 1.0)?,
        SphereField::from_fn(res.sphere, res.sphere, Some(0.5), &cap)?,
    ];
    let mut worst: f64 = 0.0;
    for f in &fields {
        let lhs = surface_integral(f);
        worst = worst.max((santalo_rhs(f, &rays)? - lhs).abs() / lhs.abs());
    }
    Ok(CheckRow::below("santalo", worst, SANTALO_TOL))
}

fn random_plane(rng: &mut ChaCha8Rng, n: usize) -> Result<PlaneField> {
    let bumps: Vec<[f64; 4]> = (0..4)
        .map(|_| {
            [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.3..0.8),
                rng.random_range(-1.0..1.0),
            ]
        })
        .collect();
    PlaneField::from_fn(n, 4.0, move |x, y| {
        if x * x + y * y > 6.25 {
            return 0.0;
        }
        bumps
            .iter()
            .map(|&[cx, cy, s, a]| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (s * s)).exp())
            .sum()
    })
}

fn random_rays(rng: &mut ChaCha8Rng, grid: EuclidRayGrid) -> Result<EuclidRayData> {
    let a = rng.random_range(0.5..2.0);
    let b = rng.random_range(-1.0..1.0);
    let c = rng.random_range(0..4) as f64;
    let v = (0..grid.len())
        .map(|i| {
            let (phi, p) = (grid.phi(i / grid.n_p), grid.p(i % grid.n_p));
            (-(p - b).powi(2) * a).exp() * (1.0 + 0.5 * (c * phi).cos())
        })
        .collect();
    EuclidRayData::new(grid, v)
}

fn duality(res: &Resolution, seed: u64) -> Result<CheckRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = res.plane;
    let grid = EuclidRayGrid::new(res.plane_angles, n, 4.0)?;
    let mut worst: f64 = 0.0;
    for w in [WeightSpec::Unit, WeightSpec::attenuated(0.1)?] {
        for _ in 0..20 {
            let g = random_plane(&mut rng, n)?;
            let f = random_rays(&mut rng, grid)?;
            let lhs = x_ray_forward(&g, &w, &grid)?.inner(&f);
            let rhs = g.inner(&x_ray_adjoint(&f, &w, n, 4.0)?);
            worst = worst.max((lhs - rhs).abs() / (g.l2_norm() * f.l2_norm()));
        }
    }
    Ok(CheckRow::below("duality", worst, DUALITY_TOL))
}

/// Cartesian against log-polar integration of an anisotropic shell.
fn measure(res: &Resolution) -> Result<CheckRow> {
    let x0 = [0.3, -0.2, 0.1];
    let f = |x: [f64; 3]| {
        let d = [x[0] - x0[0], x[1] - x0[1], x[2] - x0[2]];
        let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let u = (r - 1.5) / 0.4;
        if u.abs() >= 1.0 {
            0.0
        } else {
            (-1.0 / (1.0 - u * u)).exp() * (1.0 + 0.3 * d[0] / r + 0.2 * d[2] * d[1] / (r * r))
        }
    };
    let (cart, polar) = measure_identity(f, x0, 1.0, 2.0, res.measure)?;
    Ok(CheckRow::below(
        "measure",
        (cart - polar).abs() / polar.abs(),
        MEASURE_TOL,
    ))
}

fn quasimode() -> Result<CheckRow> {
    let frame = FiberFrame::new([1.0, 0.0, 0.0], [0.0, 0.0, 1.0])?;
    let mut worst: f64 = 0.0;
    for b in [
        FiberProfile::Constant { value: 1.0 },
        FiberProfile::Bump {
            center: 1.5,
            half_width: 0.9,
            amplitude: 1.0,
        },
    ] {
        let q = Quasimode::new(Complex64::new(3.0, 0.5), frame, b)?;
        let n = quasimode_norm(&q);
        worst = worst.max((n.numeric - n.exact).abs() / n.exact);
    }
    Ok(CheckRow::below("quasimode-norm", worst, NORM_TOL))
}

/// Majorization on random bumps, the shrinking-M family and the log-log slope per σ.
pub fn lemma_suite(bumps: usize, sigmas: &[f64], seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = MajorizationOptions {
        nodes: 101,
        m_nodes: 201,
        lambda_max: 10.0,
    };
    let l = 1.0;
    let mut violations = 0;
    for _ in 0..bumps {
        let count = rng.random_range(1..4);
        let centres: Vec<(f64, f64, f64)> = (0..count)
            .map(|_| {
                let w = rng.random_range(0.05..0.5);
                (
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-(l - w)..(l - w)),
                    w,
                )
            })
            .collect();
        let f = LineSamples::from_fn(-l - 0.02, l + 0.02, 1204, |x| {
            centres.iter().map(|&(a, m, w)| a * bump((x - m) / w)).sum()
        });
        violations += majorization_check(&f, l, &opts)?.violations;
    }
    let mut rows = vec![CheckRow::below("majorization", violations as f64, 0.0)];
    for &sigma in sigmas {
        let ratio = shrinking_m_sweep(sigma, l, 1.0, &[2.0, 4.0, 8.0, 16.0, 32.0, 64.0])?
            .iter()
            .map(|r| r.measured_l2 / r.bound)
            .fold(0.0, f64::max);
        rows.push(CheckRow::below(
            format!("shrinking-family sigma={sigma}"),
            ratio,
            1.0,
        ));
        let slope = loglog_slope(sigma, l, 1e-40, 1e-8, 25)?;
        let want = -sigma / (3.0 + 3.0 * sigma);
        rows.push(CheckRow::below(
            format!("slope sigma={sigma}"),
            ((slope - want) / want).abs(),
            SLOPE_TOL,
        ));
    }
    Ok(rows)
}
