//! Explicit universal-approximation constructions.
//!
//! Every builder turns a cover of a box `K` by small balls into a network
//! whose hidden activations are Step-ReLU and whose output layer is affine.
//! A hidden Step-ReLU layer kills exactly the vectors of norm below one, so
//! an affine map sending ball `B_r(c)` into the unit ball, followed by
//! Step-ReLU and the inverse map, collapses the ball onto one point while
//! leaving everything far enough away untouched.
//!
//! | builder | hidden widths | depth | guarantee |
//! |---|---|---|---|
//! | [`build_thm1`] | `n+1, …, n+N` | `N` | everywhere |
//! | [`build_thm2`] | `n+m+1` | `N` | everywhere |
//! | [`build_maxnm_plus1`] | `max(n,m)+1` | `N` | on `K` |
//! | [`build_maxnm`] | `max(n,m)` | `2M` | on `K` |
//!
//! The first two need an affine map `L` with `|L − f| < ε` outside `K`.
//!
//! ```
//! use radnet::approx::{build_thm2, certify, grid_cover, TargetFn, Variant};
//!
//! let f = TargetFn::gauss1d();
//! let cover = grid_cover(&f, 0.1).unwrap();
//! let built = build_thm2(&f, &cover).unwrap();
//! assert!(built.net.widths().dims().iter().skip(1).rev().skip(1).all(|&w| w == 3));
//! let report = certify(&built.net, &f, 0.1, 601, Variant::Thm2);
//! assert!(report.passed);
//! ```

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::RadialProfile;
use crate::error::{Error, Result};
use crate::linalg::{dot, matmul, norm, Matrix};
use crate::network::{Params, RadialNetwork, Widths};
use crate::train::Batch;

type Evaluator = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// An affine map `x ↦ Ax + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub linear: Matrix,
    pub offset: Vec<f64>,
}

impl AffineMap {
    pub fn new(linear: Matrix, offset: Vec<f64>) -> Result<Self> {
        if linear.rows() != offset.len() {
            return Err(Error::Shape(format!(
                "{}×{} linear part with offset of length {}",
                linear.rows(),
                linear.cols(),
                offset.len()
            )));
        }
        Ok(Self { linear, offset })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            linear: Matrix::identity(n),
            offset: vec![0.0; n],
        }
    }

    /// The zero map `ℝⁿ → ℝᵐ`.
    pub fn zero(n: usize, m: usize) -> Self {
        Self {
            linear: Matrix::zeros(m, n),
            offset: vec![0.0; m],
        }
    }

    /// `x ↦ (x, 0)`, or `x ↦ x[..n]` when `n < k`.
    pub fn coordinate(k: usize, n: usize) -> Self {
        let mut a = Matrix::zeros(n, k);
        for i in 0..n.min(k) {
            a[(i, i)] = 1.0;
        }
        Self {
            linear: a,
            offset: vec![0.0; n],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.linear.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.linear.rows()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.linear.mul_vec(x);
        for (yi, bi) in y.iter_mut().zip(&self.offset) {
            *yi += bi;
        }
        y
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &AffineMap) -> Result<AffineMap> {
        let linear = matmul(&self.linear, &inner.linear)?;
        let offset = self.apply(&inner.offset);
        Ok(AffineMap { linear, offset })
    }
}

/// An axis-aligned box `Π [lo_d, hi_d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Shape("box bounds must be non-empty and of equal length".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a.is_finite() && b.is_finite() && a <= b)) {
            return Err(Error::Data("box bounds must be finite with lo ≤ hi".into()));
        }
        Ok(Self { lo, hi })
    }

    /// The cube `[lo, hi]ⁿ`.
    pub fn cube(n: usize, lo: f64, hi: f64) -> Self {
        Self {
            lo: vec![lo; n],
            hi: vec![hi; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn sides(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).collect()
    }

    pub fn max_side(&self) -> f64 {
        self.sides().into_iter().fold(0.0, f64::max)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (a, b))| *a <= *v && *v <= *b)
    }

    /// Box with the same center and every side multiplied by `factor`.
    pub fn enlarged(&self, factor: f64) -> Self {
        let (lo, hi) = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| {
                let (mid, half) = ((a + b) / 2.0, (b - a) / 2.0 * factor);
                (mid - half, mid + half)
            })
            .unzip();
        Self { lo, hi }
    }

    /// Tensor grid with `counts[d]` equispaced points per axis, endpoints included.
    pub fn grid(&self, counts: &[usize]) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = (0..self.dim())
            .map(|d| linspace(self.lo[d], self.hi[d], counts[d]))
            .collect();
        product(&axes)
    }
}

fn linspace(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![(lo + hi) / 2.0],
        _ => (0..k).map(|j| lo + (hi - lo) * j as f64 / (k - 1) as f64).collect(),
    }
}

fn product(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut points = vec![Vec::with_capacity(axes.len())];
    for axis in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    points
}

fn grid_size(counts: &[usize]) -> f64 {
    counts.iter().map(|&k| k as f64).product()
}

/// A target function `f: ℝⁿ → ℝᵐ` with its domain data.
#[derive(Clone)]
pub struct TargetFn {
    pub name: String,
    pub n_in: usize,
    pub n_out: usize,
    eval: Evaluator,
    /// Affine `L` with `|L − f| < ε` outside the box, if `f` has one.
    pub limit: Option<AffineMap>,
    pub domain: BoxDomain,
    /// Lipschitz constant on the box.
    pub lipschitz: Option<f64>,
}

impl fmt::Debug for TargetFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetFn")
            .field("name", &self.name)
            .field("n_in", &self.n_in)
            .field("n_out", &self.n_out)
            .field("limit", &self.limit)
            .field("domain", &self.domain)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

/// `√(2/e)`, the Lipschitz constant of `x ↦ e^{−x²}`.
pub fn gauss_lipschitz() -> f64 {
    (2.0 / std::f64::consts::E).sqrt()
}

impl TargetFn {
    pub fn new(
        name: impl Into<String>,
        n_in: usize,
        n_out: usize,
        eval: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        domain: BoxDomain,
    ) -> Result<Self> {
        if domain.dim() != n_in || n_out == 0 {
            return Err(Error::Shape(format!(
                "domain of dimension {} for a function ℝ^{n_in} → ℝ^{n_out}",
                domain.dim()
            )));
        }
        Ok(Self {
            name: name.into(),
            n_in,
            n_out,
            eval: Arc::new(eval),
            limit: None,
            domain,
            lipschitz: None,
        })
    }

    pub fn with_limit(mut self, limit: AffineMap) -> Result<Self> {
        if limit.input_dim() != self.n_in || limit.output_dim() != self.n_out {
            return Err(Error::Shape("affine limit has the wrong dimensions".into()));
        }
        self.limit = Some(limit);
        Ok(self)
    }

    pub fn with_lipschitz(mut self, r: f64) -> Result<Self> {
        if !(r.is_finite() && r >= 0.0) {
            return Err(Error::Data(format!("Lipschitz constant must be finite and ≥ 0, got {r}")));
        }
        self.lipschitz = Some(r);
        Ok(self)
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        (self.eval)(x)
    }

    /// `x ↦ e^{−x²}` on `[−3, 3]`, asymptotic to zero.
    pub fn gauss1d() -> Self {
        Self::new("gauss1d", 1, 1, |x| vec![(-x[0] * x[0]).exp()], BoxDomain::cube(1, -3.0, 3.0))
            .and_then(|f| f.with_limit(AffineMap::zero(1, 1)))
            .and_then(|f| f.with_lipschitz(gauss_lipschitz()))
            .expect("built-in target is well formed")
    }

    /// `(t₁, t₂) ↦ (e^{−t₁²}, e^{−t₂²})` on `[−1, 1]²`.
    pub fn gauss2d() -> Self {
        Self::new(
            "gauss2d",
            2,
            2,
            |x| vec![(-x[0] * x[0]).exp(), (-x[1] * x[1]).exp()],
            BoxDomain::cube(2, -1.0, 1.0),
        )
        .and_then(|f| f.with_lipschitz(gauss_lipschitz()))
        .expect("built-in target is well formed")
    }

    /// A function known through samples: linear interpolation for one input,
    /// nearest sample otherwise. The domain is the bounding box of the inputs.
    pub fn from_samples(name: impl Into<String>, batch: &Batch, lipschitz: f64) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::Data("no samples".into()));
        }
        let (n_in, n_out) = (batch.inputs[0].len(), batch.targets[0].len());
        let mut lo = batch.inputs[0].clone();
        let mut hi = lo.clone();
        for x in &batch.inputs {
            for d in 0..n_in {
                lo[d] = lo[d].min(x[d]);
                hi[d] = hi[d].max(x[d]);
            }
        }
        let domain = BoxDomain::new(lo, hi)?;
        let samples: Vec<(Vec<f64>, Vec<f64>)> = batch
            .inputs
            .iter()
            .cloned()
            .zip(batch.targets.iter().cloned())
            .collect();
        let f = if n_in == 1 {
            let mut s = samples;
            s.sort_by(|a, b| a.0[0].total_cmp(&b.0[0]));
            Self::new(name, 1, n_out, move |x| interpolate(&s, x[0]), domain)?
        } else {
            Self::new(name, n_in, n_out, move |x| nearest(&samples, x), domain)?
        };
        f.with_lipschitz(lipschitz)
    }

    /// Built-in targets by name.
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "gauss1d" => Ok(Self::gauss1d()),
            "gauss2d" => Ok(Self::gauss2d()),
            other => Err(Error::Unsupported(format!(
                "unknown target `{other}` (known: gauss1d, gauss2d)"
            ))),
        }
    }
}

fn interpolate(s: &[(Vec<f64>, Vec<f64>)], x: f64) -> Vec<f64> {
    let k = s.partition_point(|p| p.0[0] < x);
    if k == 0 {
        return s[0].1.clone();
    }
    if k == s.len() {
        return s[k - 1].1.clone();
    }
    let ((x0, y0), (x1, y1)) = ((s[k - 1].0[0], &s[k - 1].1), (s[k].0[0], &s[k].1));
    if x1 == x0 {
        return y1.clone();
    }
    let t = (x - x0) / (x1 - x0);
    y0.iter().zip(y1).map(|(a, b)| a + t * (b - a)).collect()
}

fn nearest(s: &[(Vec<f64>, Vec<f64>)], x: &[f64]) -> Vec<f64> {
    let d2 = |p: &[f64]| p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    s.iter()
        .min_by(|a, b| d2(&a.0).total_cmp(&d2(&b.0)))
        .map(|p| p.1.clone())
        .unwrap_or_default()
}

/// Size limits for cover construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverLimits {
    pub max_balls: usize,
    /// Cap on validation and candidate grid points.
    pub max_grid_points: usize,
    /// Validation samples per ball radius per dimension.
    pub density: f64,
}

impl Default for CoverLimits {
    fn default() -> Self {
        Self {
            max_balls: 100_000,
            max_grid_points: 4_000_000,
            density: 10.0,
        }
    }
}

/// Balls `B_{r_i}(c_i)` covering `K` with `f`-oscillation below `ε` on each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverSpec {
    pub centers: Vec<Vec<f64>>,
    pub radii: Vec<f64>,
    pub eps: f64,
    /// Factor `λ` such that the rescaled radii `λ r_i` lie in `(0, 1)`.
    pub scale: f64,
    /// Upper bound on the number of balls a grid of this kind can need.
    pub bound: f64,
    /// Validation grid points per axis.
    pub grid_counts: Vec<usize>,
}

impl CoverSpec {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Index of the first ball containing `x`.
    pub fn first_ball(&self, x: &[f64]) -> Option<usize> {
        (0..self.len()).find(|&i| dist(x, &self.centers[i]) < self.radii[i])
    }
}

/// A cover whose centers satisfy `|c_i − c_j| ≥ r_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackingCoverSpec {
    pub cover: CoverSpec,
    pub separation: f64,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn require_lipschitz(f: &TargetFn, eps: f64) -> Result<f64> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::Data(format!("ε must be positive, got {eps}")));
    }
    f.lipschitz
        .ok_or_else(|| Error::Construction(format!("target `{}` has no Lipschitz constant", f.name)))
}

fn rescale_for(radius: f64) -> f64 {
    if radius >= 1.0 {
        0.5 / radius
    } else {
        1.0
    }
}

fn validation_counts(domain: &BoxDomain, radius: f64, limits: &CoverLimits) -> Result<Vec<usize>> {
    let counts: Vec<usize> = domain
        .sides()
        .iter()
        .map(|&l| {
            if l == 0.0 {
                1
            } else {
                (limits.density * l / radius).ceil() as usize + 1
            }
        })
        .collect();
    if grid_size(&counts) > limits.max_grid_points as f64 {
        return Err(Error::Resource(format!(
            "validation grid of {} points exceeds the limit of {}",
            grid_size(&counts),
            limits.max_grid_points
        )));
    }
    Ok(counts)
}

/// `⌈R·ℓ·√n / 2ε⌉ⁿ`, the size of a grid cover of a box of side `ℓ`.
pub fn grid_bound(n: usize, side: f64, lipschitz: f64, eps: f64) -> f64 {
    ((lipschitz * side * (n as f64).sqrt() / (2.0 * eps)).ceil().max(1.0)).powi(n as i32)
}

/// `Γ(n/2 + 1)`.
pub fn gamma_half_plus_one(n: usize) -> f64 {
    let target = n as f64 / 2.0 + 1.0;
    let (mut x, mut g) = if n.is_multiple_of(2) {
        (1.0, 1.0)
    } else {
        (1.5, std::f64::consts::PI.sqrt() / 2.0)
    };
    while x < target {
        g *= x;
        x += 1.0;
    }
    g
}

/// `Γ(n/2+1)/π^{n/2} · (2 + 2Rℓ/ε)ⁿ`, the packing bound for a box of side `ℓ`.
pub fn packing_bound(n: usize, side: f64, lipschitz: f64, eps: f64) -> f64 {
    gamma_half_plus_one(n) / std::f64::consts::PI.powf(n as f64 / 2.0)
        * (2.0 + 2.0 * lipschitz * side / eps).powi(n as i32)
}

/// Regular grid of cells whose half-diagonals are at most `ε/R`.
pub fn grid_cover(f: &TargetFn, eps: f64) -> Result<CoverSpec> {
    grid_cover_with(f, eps, &CoverLimits::default())
}

pub fn grid_cover_with(f: &TargetFn, eps: f64, limits: &CoverLimits) -> Result<CoverSpec> {
    let r = require_lipschitz(f, eps)?;
    let dom = &f.domain;
    let n = dom.dim();
    let sides = dom.sides();
    let bound = grid_bound(n, dom.max_side(), r, eps);
    let counts: Vec<usize> = sides
        .iter()
        .map(|&l| ((r * (n as f64).sqrt() * l / (2.0 * eps)).ceil() as usize).max(1))
        .collect();
    let total = grid_size(&counts);
    if total > limits.max_balls as f64 {
        return Err(Error::Resource(format!(
            "grid cover needs {total} balls (bound ⌈R√n·ℓ/2ε⌉ⁿ = {bound}), limit is {}",
            limits.max_balls
        )));
    }
    let half_diag = sides
        .iter()
        .zip(&counts)
        .map(|(l, &k)| (l / k as f64 / 2.0).powi(2))
        .sum::<f64>()
        .sqrt();
    let radius = if half_diag > 0.0 {
        half_diag * (1.0 + 1e-9)
    } else if r > 0.0 {
        (eps / r).min(0.5)
    } else {
        0.5
    };
    let axes: Vec<Vec<f64>> = (0..n)
        .map(|d| {
            let step = sides[d] / counts[d] as f64;
            (0..counts[d]).map(|j| dom.lo[d] + (j as f64 + 0.5) * step).collect()
        })
        .collect();
    let centers = product(&axes);
    let radii = vec![radius; centers.len()];
    Ok(CoverSpec {
        grid_counts: validation_counts(dom, radius, limits)?,
        centers,
        radii,
        eps,
        scale: rescale_for(radius),
        bound,
    })
}

/// Greedy maximal packing over a fine candidate grid.
///
/// Candidates are visited in lexicographic order and kept when they lie at
/// least `r` from every kept center, so every candidate ends up within `r`
/// of some center. The candidate spacing is `r / 10.3`: squared distances
/// between grid points are integer multiples of the squared spacing and
/// never equal `10.3²`, so no candidate sits on a ball boundary.
pub fn packing_cover(f: &TargetFn, eps: f64) -> Result<PackingCoverSpec> {
    packing_cover_with(f, eps, &CoverLimits::default())
}

pub fn packing_cover_with(f: &TargetFn, eps: f64, limits: &CoverLimits) -> Result<PackingCoverSpec> {
    const RATIO: f64 = 10.3;
    let lip = require_lipschitz(f, eps)?;
    let dom = &f.domain;
    let n = dom.dim();
    let side = dom.max_side();
    let bound = packing_bound(n, side, lip, eps);
    let r_max = if lip > 0.0 { eps / lip } else { f64::INFINITY };
    let (counts, radius) = if side == 0.0 {
        (vec![1; n], r_max.min(0.5))
    } else {
        let steps = if r_max.is_finite() {
            (RATIO * side / r_max).ceil()
        } else {
            RATIO.ceil()
        };
        let h = side / steps;
        let counts: Vec<usize> = dom
            .sides()
            .iter()
            .map(|&l| if l == 0.0 { 1 } else { (l / h).round() as usize + 1 })
            .collect();
        (counts, RATIO * h)
    };
    if grid_size(&counts) > limits.max_grid_points as f64 {
        return Err(Error::Resource(format!(
            "packing candidate grid of {} points exceeds the limit of {} (bound on balls: {bound})",
            grid_size(&counts),
            limits.max_grid_points
        )));
    }
    let mut centers: Vec<Vec<f64>> = Vec::new();
    for p in dom.grid(&counts) {
        if centers.iter().all(|c| dist(c, &p) >= radius) {
            if centers.len() == limits.max_balls {
                return Err(Error::Resource(format!(
                    "packing needs more than {} balls (bound Γ(n/2+1)/π^(n/2)·(2+2Rℓ/ε)ⁿ = {bound})",
                    limits.max_balls
                )));
            }
            centers.push(p);
        }
    }
    let radii = vec![radius; centers.len()];
    Ok(PackingCoverSpec {
        cover: CoverSpec {
            centers,
            radii,
            eps,
            scale: rescale_for(radius),
            bound,
            grid_counts: counts,
        },
        separation: radius,
    })
}

/// Result of checking a cover on its validation grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverCheck {
    pub points: usize,
    pub uncovered: usize,
    /// Largest `|f(x) − f(c_j)|` with `j` the first ball containing `x`.
    pub max_oscillation: f64,
}

impl CoverCheck {
    pub fn passed(&self, eps: f64) -> bool {
        self.uncovered == 0 && self.max_oscillation < eps
    }
}

pub fn check_cover(f: &TargetFn, cover: &CoverSpec) -> CoverCheck {
    let values: Vec<Vec<f64>> = cover.centers.iter().map(|c| f.eval(c)).collect();
    let per_point: Vec<Option<f64>> = f
        .domain
        .grid(&cover.grid_counts)
        .par_iter()
        .map(|x| cover.first_ball(x).map(|j| dist(&f.eval(x), &values[j])))
        .collect();
    CoverCheck {
        points: per_point.len(),
        uncovered: per_point.iter().filter(|o| o.is_none()).count(),
        max_oscillation: per_point.iter().flatten().fold(0.0, |m, &v| nan_max(m, v)),
    }
}

fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::INFINITY
    } else {
        a.max(b)
    }
}

/// The universal-approximation constructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Thm1,
    Thm2,
    Maxnm1,
    Maxnm,
}

impl Variant {
    /// Whether the approximation holds on all of `ℝⁿ` rather than on `K` only.
    pub fn global(self) -> bool {
        matches!(self, Variant::Thm1 | Variant::Thm2)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "thm1" => Ok(Self::Thm1),
            "thm2" => Ok(Self::Thm2),
            "maxnm1" => Ok(Self::Maxnm1),
            "maxnm" => Ok(Self::Maxnm),
            other => Err(Error::Unsupported(format!(
                "unknown variant `{other}` (known: thm1, thm2, maxnm1, maxnm)"
            ))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Thm1 => "thm1",
            Variant::Thm2 => "thm2",
            Variant::Maxnm1 => "maxnm1",
            Variant::Maxnm => "maxnm",
        })
    }
}

/// A constructed network together with the maps that decode its hidden
/// layers back into the coordinates of the construction.
#[derive(Debug, Clone)]
pub struct UaNetwork {
    pub net: RadialNetwork,
    pub variant: Variant,
    /// `decoders[i−1]` sends the activation of hidden layer `i` to the stage state.
    pub decoders: Vec<AffineMap>,
    /// Number of balls used.
    pub balls: usize,
}

impl UaNetwork {
    /// Stage state after hidden layer `i` (1-based) for input `x`.
    pub fn stage_state(&self, x: &[f64], i: usize) -> Result<Vec<f64>> {
        let a = self.net.partial_feedforward(x, i)?;
        let dec = self
            .decoders
            .get(i.wrapping_sub(1))
            .ok_or_else(|| Error::Shape(format!("no hidden layer {i}")))?;
        Ok(dec.apply(&a))
    }
}

fn assemble(variant: Variant, maps: Vec<AffineMap>, decoders: Vec<AffineMap>, balls: usize) -> Result<UaNetwork> {
    let mut dims = vec![maps[0].input_dim()];
    dims.extend(maps.iter().map(|m| m.output_dim()));
    let widths = Widths::new(dims)?;
    let l = widths.depth();
    let params = Params {
        weights: maps.iter().map(|m| m.linear.clone()).collect(),
        biases: maps.iter().map(|m| m.offset.clone()).collect(),
        shifts: vec![0.0; l],
    };
    let mut profiles = vec![RadialProfile::StepRelu; l];
    profiles[l - 1] = RadialProfile::Identity;
    let net = RadialNetwork::new(widths, params, profiles)?;
    Ok(UaNetwork {
        net,
        variant,
        decoders,
        balls,
    })
}

fn check_cover_for(f: &TargetFn, cover: &CoverSpec) -> Result<()> {
    if cover.is_empty() {
        return Err(Error::Construction("cover has no balls".into()));
    }
    if cover.centers.iter().any(|c| c.len() != f.n_in) {
        return Err(Error::Shape("cover centers do not match the input dimension".into()));
    }
    if let Some(r) = cover.radii.iter().map(|r| r * cover.scale).find(|r| !(*r > 0.0 && *r < 1.0)) {
        return Err(Error::Construction(format!("rescaled radius {r} is not in (0, 1)")));
    }
    Ok(())
}

fn require_limit(f: &TargetFn) -> Result<&AffineMap> {
    f.limit
        .as_ref()
        .ok_or_else(|| Error::Construction(format!("target `{}` has no affine limit", f.name)))
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn scaled(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// Minimal nonzero distance between values, with values equal up to
/// `1e−12·(1+|v|)` counted as equal. Shrunk by `1e−9` so that the closest
/// pair lands strictly outside the unit ball after division.
fn min_separation(values: &[Vec<f64>]) -> f64 {
    let mut s = f64::INFINITY;
    for (i, a) in values.iter().enumerate() {
        for b in &values[i + 1..] {
            let d = dist(a, b);
            if d > 1e-12 * (1.0 + norm(a).max(norm(b))) {
                s = s.min(d);
            }
        }
    }
    if s.is_finite() {
        s * (1.0 - 1e-9)
    } else {
        1.0
    }
}

/// Network with hidden widths `n+1, …, n+N`, accurate on all of `ℝⁿ`.
pub fn build_thm1(f: &TargetFn, cover: &CoverSpec) -> Result<UaNetwork> {
    check_cover_for(f, cover)?;
    let limit = require_limit(f)?;
    let (n, m, big_n, lam) = (f.n_in, f.n_out, cover.len(), cover.scale);
    let c: Vec<Vec<f64>> = cover.centers.iter().map(|c| scaled(c, lam)).collect();
    let h: Vec<f64> = cover.radii.iter().map(|r| (1.0 - (r * lam).powi(2)).sqrt()).collect();

    let mut maps = Vec::with_capacity(big_n + 1);
    let mut decoders = Vec::with_capacity(big_n);
    let mut prev_s = AffineMap::new(Matrix::identity(n).scale(lam), vec![0.0; n])?;
    for i in 1..=big_n {
        let t = thm1_t(n, i, &c[i - 1], h[i - 1]);
        let s = thm1_s(n, i, &c[i - 1], h[i - 1]);
        maps.push(t.compose(&prev_s)?);
        decoders.push(s.clone());
        prev_s = s;
    }
    let mut phi = Matrix::zeros(m, n + big_n);
    phi.set_block(0, 0, &limit.linear.scale(1.0 / lam));
    for (i, ci) in cover.centers.iter().enumerate() {
        let gap = sub(&f.eval(ci), &limit.apply(ci));
        for (k, g) in gap.into_iter().enumerate() {
            phi[(k, n + i)] = g;
        }
    }
    let phi = AffineMap::new(phi, limit.offset.clone())?;
    maps.push(phi.compose(&prev_s)?);
    assemble(Variant::Thm1, maps, decoders, big_n)
}

/// `T_i: ℝ^{n+i−1} → ℝ^{n+i}`, `z ↦ z − c_i + h_i e_i`.
pub fn thm1_t(n: usize, i: usize, c: &[f64], h: f64) -> AffineMap {
    let mut a = Matrix::zeros(n + i, n + i - 1);
    for k in 0..n + i - 1 {
        a[(k, k)] = 1.0;
    }
    let mut b = vec![0.0; n + i];
    for k in 0..n {
        b[k] = -c[k];
    }
    b[n + i - 1] = h;
    AffineMap { linear: a, offset: b }
}

/// `S_i: ℝ^{n+i} → ℝ^{n+i}`, `z ↦ z − (1 + 1/h_i)⟨e_i, z⟩e_i + c_i + e_i`.
pub fn thm1_s(n: usize, i: usize, c: &[f64], h: f64) -> AffineMap {
    let mut a = Matrix::identity(n + i);
    a[(n + i - 1, n + i - 1)] = -1.0 / h;
    let mut b = vec![0.0; n + i];
    b[..n].copy_from_slice(&c[..n]);
    b[n + i - 1] = 1.0;
    AffineMap { linear: a, offset: b }
}

/// Shared shape of the bounded-width maps on `ℝ^p × ℝ^q × ℝ`:
/// `T(x, y, θ) = (x − (1−θ)c − θu, y − θv, (1−θ)h)` and its inverse.
struct ThetaMap {
    p: usize,
    q: usize,
    c: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    h: f64,
}

impl ThetaMap {
    fn dim(&self) -> usize {
        self.p + self.q + 1
    }

    fn forward(&self) -> AffineMap {
        let (p, q, d) = (self.p, self.q, self.dim());
        let th = d - 1;
        let mut a = Matrix::identity(d);
        let mut b = vec![0.0; d];
        for k in 0..p {
            a[(k, th)] = self.c[k] - self.u[k];
            b[k] = -self.c[k];
        }
        for k in 0..q {
            a[(p + k, th)] = -self.v[k];
        }
        a[(th, th)] = -self.h;
        b[th] = self.h;
        AffineMap { linear: a, offset: b }
    }

    /// `(x, y, φ) ↦ (x + (φ/h)c + (1 − φ/h)u, y + (1 − φ/h)v, 1 − φ/h)`.
    fn inverse(&self) -> AffineMap {
        let (p, q, d) = (self.p, self.q, self.dim());
        let th = d - 1;
        let mut a = Matrix::identity(d);
        let mut b = vec![0.0; d];
        for k in 0..p {
            a[(k, th)] = (self.c[k] - self.u[k]) / self.h;
            b[k] = self.u[k];
        }
        for k in 0..q {
            a[(p + k, th)] = -self.v[k] / self.h;
            b[p + k] = self.v[k];
        }
        a[(th, th)] = -1.0 / self.h;
        b[th] = 1.0;
        AffineMap { linear: a, offset: b }
    }
}

fn theta_chain(
    variant: Variant,
    first: AffineMap,
    stages: &[ThetaMap],
    phi: AffineMap,
    balls: usize,
) -> Result<UaNetwork> {
    let mut maps = Vec::with_capacity(stages.len() + 1);
    let mut decoders = Vec::with_capacity(stages.len());
    let mut prev = first;
    for st in stages {
        maps.push(st.forward().compose(&prev)?);
        prev = st.inverse();
        decoders.push(prev.clone());
    }
    maps.push(phi.compose(&prev)?);
    assemble(variant, maps, decoders, balls)
}

/// Network with `N` hidden layers of width `n+m+1`, accurate on all of `ℝⁿ`.
pub fn build_thm2(f: &TargetFn, cover: &CoverSpec) -> Result<UaNetwork> {
    check_cover_for(f, cover)?;
    let limit = require_limit(f)?;
    let (n, m, lam) = (f.n_in, f.n_out, cover.scale);
    let values: Vec<Vec<f64>> = cover.centers.iter().map(|c| f.eval(c)).collect();
    let s = min_separation(&values);
    let stages: Vec<ThetaMap> = cover
        .centers
        .iter()
        .zip(&cover.radii)
        .zip(&values)
        .map(|((c, r), fc)| {
            let c = scaled(c, lam);
            ThetaMap {
                p: n,
                q: m,
                u: vec![0.0; n],
                c,
                v: scaled(&sub(fc, &limit.offset), 1.0 / s),
                h: (1.0 - (r * lam).powi(2)).sqrt(),
            }
        })
        .collect();
    let d = n + m + 1;
    let first = AffineMap::new(
        {
            let mut a = Matrix::zeros(d, n);
            for k in 0..n {
                a[(k, k)] = lam;
            }
            a
        },
        vec![0.0; d],
    )?;
    let mut phi = Matrix::zeros(m, d);
    phi.set_block(0, 0, &limit.linear.scale(1.0 / lam));
    for k in 0..m {
        phi[(k, n + k)] = s;
    }
    let phi = AffineMap::new(phi, limit.offset.clone())?;
    theta_chain(Variant::Thm2, first, &stages, phi, cover.len())
}

/// Network with `N` hidden layers of width `max(n,m)+1`, accurate on `K`.
pub fn build_maxnm_plus1(f: &TargetFn, cover: &CoverSpec) -> Result<UaNetwork> {
    check_cover_for(f, cover)?;
    let (n, m, lam) = (f.n_in, f.n_out, cover.scale);
    let p = n.max(m);
    let values: Vec<Vec<f64>> = cover.centers.iter().map(|c| f.eval(c)).collect();
    let s = min_separation(&values);
    let pad = |v: Vec<f64>| {
        let mut w = v;
        w.resize(p, 0.0);
        w
    };
    let stages: Vec<ThetaMap> = cover
        .centers
        .iter()
        .zip(&cover.radii)
        .zip(&values)
        .map(|((c, r), fc)| ThetaMap {
            p,
            q: 0,
            c: pad(scaled(c, lam)),
            u: pad(scaled(fc, 1.0 / s)),
            v: Vec::new(),
            h: (1.0 - (r * lam).powi(2)).sqrt(),
        })
        .collect();
    let mut first = Matrix::zeros(p + 1, n);
    for k in 0..n {
        first[(k, k)] = lam;
    }
    let first = AffineMap::new(first, vec![0.0; p + 1])?;
    let mut phi = Matrix::zeros(m, p + 1);
    for k in 0..m {
        phi[(k, k)] = s;
    }
    let phi = AffineMap::new(phi, vec![0.0; m])?;
    theta_chain(Variant::Maxnm1, first, &stages, phi, cover.len())
}

/// Options for [`build_maxnm`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxnmOptions {
    pub seed: u64,
    /// Sampled points closer than this (relative) to a forbidden line are rejected.
    pub collinearity_tol: f64,
    pub retries: usize,
    /// Admissible samples drawn per point; the one farthest from the other points wins.
    pub candidates: usize,
}

impl Default for MaxnmOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            collinearity_tol: 1e-9,
            retries: 100,
            candidates: 16,
        }
    }
}

/// Distance from `p` to the line through `a` with unit direction `u`.
fn line_distance(p: &[f64], a: &[f64], u: &[f64]) -> f64 {
    let w = sub(p, a);
    let t = dot(&w, u);
    w.iter().zip(u).map(|(wi, ui)| (wi - t * ui).powi(2)).sum::<f64>().sqrt()
}

fn uniform_in_ball<R: Rng>(center: &[f64], radius: f64, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = center.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r2: f64 = v.iter().map(|x| x * x).sum();
        if r2 < 1.0 {
            return center.iter().zip(&v).map(|(c, x)| c + radius * x).collect();
        }
    }
}

/// The line stage `U(x) = A(x − d)` with
/// `A = (1/s)·proj_⊥ + (1/(2|c − d|))·proj_line`, so `|U(c)| = 1/2`.
fn line_stage(c: &[f64], d: &[f64], s: f64) -> (AffineMap, AffineMap) {
    let p = c.len();
    let w = sub(c, d);
    let len = norm(&w);
    let u = scaled(&w, 1.0 / len);
    let along = 1.0 / (2.0 * len);
    let mut a = Matrix::zeros(p, p);
    let mut inv = Matrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            let (id, uu) = (if i == j { 1.0 } else { 0.0 }, u[i] * u[j]);
            a[(i, j)] = (id - uu) / s + along * uu;
            inv[(i, j)] = (id - uu) * s + uu / along;
        }
    }
    let fwd = AffineMap {
        offset: scaled(&a.mul_vec(d), -1.0),
        linear: a,
    };
    let back = AffineMap {
        linear: inv,
        offset: d.to_vec(),
    };
    (fwd, back)
}

/// Network with `2M` hidden layers of width `max(n,m)`, accurate on `K`.
///
/// The first `M` layers snap each ball onto its center; the next `M` move
/// center `c_i` to a point `d_i` near `f(c_i)` along a line that avoids all
/// other current points.
pub fn build_maxnm(f: &TargetFn, pcover: &PackingCoverSpec, eps: f64) -> Result<UaNetwork> {
    build_maxnm_with(f, pcover, eps, &MaxnmOptions::default())
}

pub fn build_maxnm_with(f: &TargetFn, pcover: &PackingCoverSpec, eps: f64, opts: &MaxnmOptions) -> Result<UaNetwork> {
    let cover = &pcover.cover;
    if f.n_in < 2 {
        return Err(Error::Unsupported(format!(
            "the width-max(n,m) construction needs input dimension n ≥ 2, got n = {}",
            f.n_in
        )));
    }
    if cover.is_empty() {
        return Err(Error::Construction("cover has no balls".into()));
    }
    let (n, m) = (f.n_in, f.n_out);
    let p = n.max(m);
    let big_m = cover.len();
    let pad = |v: &[f64]| {
        let mut w = v.to_vec();
        w.resize(p, 0.0);
        w
    };
    let c: Vec<Vec<f64>> = cover.centers.iter().map(|x| pad(x)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut maps = Vec::with_capacity(2 * big_m + 1);
    let mut decoders = Vec::with_capacity(2 * big_m);
    let mut prev = AffineMap::coordinate(n, p);
    for (ci, &ri) in c.iter().zip(&cover.radii) {
        let t = AffineMap {
            linear: Matrix::identity(p).scale(1.0 / ri),
            offset: scaled(ci, -1.0 / ri),
        };
        maps.push(t.compose(&prev)?);
        prev = AffineMap {
            linear: Matrix::identity(p).scale(ri),
            offset: ci.clone(),
        };
        decoders.push(prev.clone());
    }

    let mut ds: Vec<Vec<f64>> = Vec::with_capacity(big_m);
    for i in 0..big_m {
        let target = pad(&f.eval(&cover.centers[i]));
        let others: Vec<&Vec<f64>> = c
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, x)| x)
            .chain(ds.iter())
            .collect();
        let scale = 1.0 + norm(&c[i]) + norm(&target);
        let mut chosen: Option<(Vec<f64>, f64)> = None;
        let mut accepted = 0;
        for _ in 0..opts.retries {
            let d = uniform_in_ball(&target, eps / 2.0, &mut rng);
            let len = dist(&c[i], &d);
            if len <= opts.collinearity_tol * scale {
                continue;
            }
            let u = scaled(&sub(&c[i], &d), 1.0 / len);
            let s = others
                .iter()
                .map(|q| line_distance(q, &d, &u))
                .fold(f64::INFINITY, f64::min);
            if s > opts.collinearity_tol * scale {
                let s = if s.is_finite() { s * (1.0 - 1e-9) } else { 1.0 };
                if chosen.as_ref().is_none_or(|(_, best)| s > *best) {
                    chosen = Some((d, s));
                }
                accepted += 1;
                if accepted == opts.candidates {
                    break;
                }
            }
        }
        let (d, s) = chosen.ok_or_else(|| {
            Error::Construction(format!(
                "no point near f(c_{}) avoids the lines through the other points after {} tries",
                i + 1,
                opts.retries
            ))
        })?;
        let (fwd, back) = line_stage(&c[i], &d, s);
        maps.push(fwd.compose(&prev)?);
        decoders.push(back.clone());
        prev = back;
        ds.push(d);
    }
    maps.push(AffineMap::coordinate(p, m).compose(&prev)?);
    assemble(Variant::Maxnm, maps, decoders, big_m)
}

/// Outcome of [`certify`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub sup_err_inside: f64,
    pub sup_err_outside: Option<f64>,
    pub inside_points: usize,
    pub outside_points: usize,
    pub passed: bool,
}

fn sup_error(net: &RadialNetwork, f: &TargetFn, points: &[Vec<f64>]) -> f64 {
    points
        .par_iter()
        .map(|x| match net.feedforward(x) {
            Ok(y) => dist(&y, &f.eval(x)),
            Err(_) => f64::INFINITY,
        })
        .reduce(|| 0.0, nan_max)
}

/// Sup error of `net` against `f` on a grid of `K` with `grid_density`
/// points per axis and, for global constructions, on the grid points of the
/// doubled box that lie outside `K`.
pub fn certify(net: &RadialNetwork, f: &TargetFn, eps: f64, grid_density: usize, variant: Variant) -> Certificate {
    let counts = vec![grid_density.max(1); f.n_in];
    let counts: Vec<usize> = counts
        .iter()
        .zip(f.domain.sides())
        .map(|(&k, l)| if l == 0.0 { 1 } else { k })
        .collect();
    let inside = f.domain.grid(&counts);
    let sup_in = sup_error(net, f, &inside);
    let (sup_out, n_out) = if variant.global() {
        let outer = f.domain.enlarged(2.0);
        let ring_counts: Vec<usize> = counts.iter().map(|&k| if k == 1 { 1 } else { 2 * k - 1 }).collect();
        let ring: Vec<Vec<f64>> = outer
            .grid(&ring_counts)
            .into_iter()
            .filter(|x| !f.domain.contains(x))
            .collect();
        (Some(sup_error(net, f, &ring)), ring.len())
    } else {
        (None, 0)
    };
    Certificate {
        sup_err_inside: sup_in,
        sup_err_outside: sup_out,
        inside_points: inside.len(),
        outside_points: n_out,
        passed: sup_in < eps && sup_out.is_none_or(|e| e < eps),
    }
}

/// Certifies on a cover's own validation grid.
pub fn certify_on_cover(net: &RadialNetwork, f: &TargetFn, cover: &CoverSpec, variant: Variant) -> Certificate {
    let inside = f.domain.grid(&cover.grid_counts);
    let sup_in = sup_error(net, f, &inside);
    let mut cert = certify(net, f, cover.eps, 1, variant);
    cert.sup_err_inside = sup_in;
    cert.inside_points = inside.len();
    if variant.global() {
        let counts: Vec<usize> = cover.grid_counts.iter().map(|&k| if k == 1 { 1 } else { 2 * k - 1 }).collect();
        let ring: Vec<Vec<f64>> = f
            .domain
            .enlarged(2.0)
            .grid(&counts)
            .into_iter()
            .filter(|x| !f.domain.contains(x))
            .collect();
        cert.sup_err_outside = Some(sup_error(net, f, &ring));
        cert.outside_points = ring.len();
    }
    cert.passed = cert.sup_err_inside < cover.eps && cert.sup_err_outside.is_none_or(|e| e < cover.eps);
    cert
}

/// Builds a network of the given variant for `f` at accuracy `ε`.
///
/// The width-`max(n,m)` variant uses a separated cover at `ε/2`.
pub fn build(variant: Variant, f: &TargetFn, eps: f64, seed: u64) -> Result<(UaNetwork, CoverSpec)> {
    match variant {
        Variant::Thm1 => {
            let c = grid_cover(f, eps)?;
            Ok((build_thm1(f, &c)?, c))
        }
        Variant::Thm2 => {
            let c = grid_cover(f, eps)?;
            Ok((build_thm2(f, &c)?, c))
        }
        Variant::Maxnm1 => {
            let c = grid_cover(f, eps)?;
            Ok((build_maxnm_plus1(f, &c)?, c))
        }
        Variant::Maxnm => {
            let pc = packing_cover(f, eps / 2.0)?;
            let opts = MaxnmOptions {
                seed,
                ..MaxnmOptions::default()
            };
            Ok((build_maxnm_with(f, &pc, eps, &opts)?, pc.cover))
        }
    }
}
