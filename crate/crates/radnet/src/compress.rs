//! Lossless QR compression of radial networks.
//!
//! Working in merged coordinates `A_i = [b_i | W_i]`, [`qr_compress`] runs
//!
//! ```text
//! M_1 = A_1
//! for i = 1 .. L-1:
//!     M_i = Q_i · Inc_i · R_i          (complete QR)
//!     V_i = R_i
//!     M_{i+1} = A_{i+1} · diag(1, Q_i · Inc_i)
//! V_L = M_L
//! ```
//!
//! The matrices `V_i` define a network on the reduced widths whose
//! feedforward function equals the original one. The tuple `Q` certifies the
//! change of basis: `Q⁻¹·A` agrees with `V` in its top-left blocks, and the
//! remainder `U = Q⁻¹·A − ι(V)` lies in the interpolating space.
//!
//! ```
//! use radnet::activation::RadialProfile;
//! use radnet::compress::qr_compress;
//! use radnet::network::{RadialNetwork, Widths};
//! use rand::SeedableRng;
//!
//! let widths = Widths::new(vec![1, 8, 16, 8, 1]).unwrap();
//! let profiles = RadialNetwork::uniform_profiles(&widths, RadialProfile::Squashing);
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
//! let net = RadialNetwork::random(widths, profiles, &mut rng).unwrap();
//!
//! let result = qr_compress(&net).unwrap();
//! assert_eq!(result.reduced.widths().dims(), &[1, 2, 3, 4, 1]);
//! let (x, y) = (net.feedforward(&[0.7]).unwrap(), result.reduced.feedforward(&[0.7]).unwrap());
//! assert!((x[0] - y[0]).abs() < 1e-12);
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{inclusion_matrix, matmul, qr_complete, Matrix, TOL};
use crate::network::{apply_orth_merged, split, MergedParams, OrthTuple, RadialNetwork, Widths};

/// Output of [`qr_compress`].
#[derive(Debug, Clone)]
pub struct CompressionResult {
    /// Equivalent network on the reduced widths.
    pub reduced: RadialNetwork,
    /// Orthogonal change of basis `(Q_1, …, Q_{L−1})`.
    pub certificate: OrthTuple,
    /// `U = Q⁻¹·A − ι(V)`, an element of the interpolating space.
    pub residual_u: MergedParams,
    /// The matrices `M_i` factored by the loop, for `i = 1..L−1`.
    pub factored: Vec<Matrix>,
}

/// Runs QR compression.
pub fn qr_compress(net: &RadialNetwork) -> Result<CompressionResult> {
    let widths = net.widths();
    let l = widths.depth();
    let red = widths.reduced();
    let merged = net.merged();

    let mut qs = Vec::with_capacity(l.saturating_sub(1));
    let mut vs = Vec::with_capacity(l);
    let mut factored = Vec::with_capacity(l.saturating_sub(1));
    let mut m = merged.mats[0].clone();
    for i in 1..l {
        let qr = qr_complete(&m)?;
        debug_assert_eq!(qr.r.rows(), red[i]);
        let inc = inclusion_matrix(red[i], widths[i])?;
        let q_inc = matmul(&qr.q, &inc)?;
        let next = matmul(&merged.mats[i], &q_inc.extend_by_one())?;
        factored.push(m);
        vs.push(qr.r);
        qs.push(qr.q);
        m = next;
    }
    vs.push(m);

    let v = MergedParams {
        mats: vs,
        shifts: merged.shifts.clone(),
    };
    let reduced = RadialNetwork::new(red.clone(), split(&v, &red)?, net.profiles().to_vec())?;
    let certificate = OrthTuple { qs };
    let residual_u = residual_from(&merged, &v, &certificate, widths)?;
    Ok(CompressionResult {
        reduced,
        certificate,
        residual_u,
        factored,
    })
}

/// `ι`: pads each reduced merged matrix with zeros to the full shape.
pub fn embed(v: &MergedParams, w: &Widths) -> MergedParams {
    let d = w.dims();
    let mats = v
        .mats
        .iter()
        .enumerate()
        .map(|(i, vi)| {
            let mut a = Matrix::zeros(d[i + 1], d[i] + 1);
            a.set_block(0, 0, vi);
            a
        })
        .collect();
    MergedParams {
        mats,
        shifts: v.shifts.clone(),
    }
}

/// Top-left `n^red_i × (1 + n^red_{i−1})` blocks, the left inverse of [`embed`].
pub fn restrict(t: &MergedParams, red: &Widths) -> MergedParams {
    let d = red.dims();
    MergedParams {
        mats: t
            .mats
            .iter()
            .enumerate()
            .map(|(i, a)| a.block(0, d[i + 1], 0, d[i] + 1))
            .collect(),
        shifts: t.shifts.clone(),
    }
}

fn check_shapes(m: &MergedParams, w: &Widths) -> Result<()> {
    let d = w.dims();
    if m.mats.len() != w.depth()
        || m
            .mats
            .iter()
            .enumerate()
            .any(|(i, a)| a.shape() != (d[i + 1], d[i] + 1))
    {
        return Err(Error::Shape(format!(
            "merged parameters do not match widths {w}"
        )));
    }
    Ok(())
}

/// Zeroes the bottom-left `(n_i − n^red_i) × (1 + n^red_{i−1})` block of each `A_i`.
pub fn interpolating_project(m: &MergedParams, w: &Widths) -> Result<MergedParams> {
    check_shapes(m, w)?;
    let red = w.reduced();
    let mut out = m.clone();
    for (i, a) in out.mats.iter_mut().enumerate() {
        zero_bottom_left(a, red[i + 1], red[i]);
    }
    Ok(out)
}

/// Zeroes rows `keep_rows..` of the first `1 + red_prev` columns of a merged matrix.
pub fn zero_bottom_left(a: &mut Matrix, keep_rows: usize, red_prev: usize) {
    for r in keep_rows..a.rows() {
        for c in 0..=red_prev.min(a.cols() - 1) {
            a[(r, c)] = 0.0;
        }
    }
}

/// Largest entry of the blocks that [`interpolating_project`] zeroes.
pub fn interpolating_defect(m: &MergedParams, w: &Widths) -> Result<f64> {
    check_shapes(m, w)?;
    let red = w.reduced();
    let mut worst = 0.0f64;
    for (i, a) in m.mats.iter().enumerate() {
        for r in red[i + 1]..w[i + 1] {
            for c in 0..=red[i] {
                worst = worst.max(a[(r, c)].abs());
            }
        }
    }
    Ok(worst)
}

fn residual_from(
    merged: &MergedParams,
    v: &MergedParams,
    q: &OrthTuple,
    w: &Widths,
) -> Result<MergedParams> {
    let t = apply_orth_merged(&q.inverse(), merged)?;
    let scale = merged.mats.iter().map(Matrix::max_abs).fold(1.0, f64::max);
    let mut u = t.axpy(-1.0, &embed(v, w));
    let red = w.reduced();
    let mut defect = 0.0f64;
    for (i, a) in u.mats.iter_mut().enumerate() {
        for r in 0..w[i + 1] {
            for c in 0..=red[i] {
                defect = defect.max(a[(r, c)].abs());
                a[(r, c)] = 0.0;
            }
        }
    }
    if defect > TOL.zero_block * scale {
        return Err(Error::Consistency(format!(
            "Q⁻¹·A differs from ι(V) on its left blocks by {defect:e}"
        )));
    }
    u.shifts.iter_mut().for_each(|s| *s = 0.0);
    Ok(u)
}

/// `U = Q⁻¹·(W, b) − ι(W^red, b^red)`, with its left blocks checked and set to zero.
pub fn residual(net: &RadialNetwork, result: &CompressionResult) -> Result<MergedParams> {
    residual_from(
        &net.merged(),
        &result.reduced.merged(),
        &result.certificate,
        net.widths(),
    )
}

/// Discrepancy between a network and its compression on a set of probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosslessReport {
    pub max_abs_err: f64,
    pub mean_abs_err: f64,
    pub probes: usize,
    /// Set when no probes were supplied; both errors are then reported as 0.
    pub no_probes: bool,
}

/// Evaluates both networks on every probe; the error at a probe is the
/// Euclidean norm of the output difference.
pub fn verify_lossless(
    net: &RadialNetwork,
    result: &CompressionResult,
    probes: &[Vec<f64>],
) -> Result<LosslessReport> {
    if probes.is_empty() {
        return Ok(LosslessReport {
            max_abs_err: 0.0,
            mean_abs_err: 0.0,
            probes: 0,
            no_probes: true,
        });
    }
    let mut max = 0.0f64;
    let mut sum = 0.0;
    for x in probes {
        let a = net.feedforward(x)?;
        let b = result.reduced.feedforward(x)?;
        let e = a
            .iter()
            .zip(&b)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt();
        max = max.max(e);
        sum += e;
    }
    Ok(LosslessReport {
        max_abs_err: max,
        mean_abs_err: sum / probes.len() as f64,
        probes: probes.len(),
        no_probes: false,
    })
}
