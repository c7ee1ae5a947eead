//! Radial networks: parameters, feedforward evaluation, the merged-matrix
//! view, the orthogonal change-of-basis action, and file formats.
//!
//! A network with widths `(n_0, …, n_L)` computes
//! `F_i(x) = ρ_i(W_i F_{i−1}(x) + b_i)` with `F_0(x) = x`, applying the
//! activation at every layer including the last.
//!
//! ```
//! use radnet::activation::RadialProfile;
//! use radnet::linalg::Matrix;
//! use radnet::network::{Params, RadialNetwork, Widths};
//!
//! let widths = Widths::new(vec![1, 1]).unwrap();
//! let params = Params {
//!     weights: vec![Matrix::from_rows(&[vec![2.0]]).unwrap()],
//!     biases: vec![vec![0.0]],
//!     shifts: vec![0.0],
//! };
//! let net = RadialNetwork::new(widths, params, vec![RadialProfile::StepRelu]).unwrap();
//! assert_eq!(net.feedforward(&[1.0]).unwrap(), vec![2.0]);
//! assert_eq!(net.feedforward(&[0.3]).unwrap(), vec![0.0]);
//! ```

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::activation::{RadialProfile, ShiftedActivation};
use crate::error::{Error, Result};
use crate::linalg::{matmul, Matrix};
use crate::train::Batch;

/// Layer sizes `(n_0, …, n_L)` with `L ≥ 1` and every `n_i ≥ 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Widths(Vec<usize>);

impl Widths {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Shape(format!(
                "a widths vector needs at least two entries, got {dims:?}"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Shape(format!("zero width in {dims:?}")));
        }
        Ok(Self(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    /// Number of layers `L`.
    pub fn depth(&self) -> usize {
        self.0.len() - 1
    }

    pub fn input(&self) -> usize {
        self.0[0]
    }

    pub fn output(&self) -> usize {
        self.0[self.depth()]
    }

    pub fn reduced(&self) -> Widths {
        reduced_widths(self)
    }

    pub fn param_count(&self) -> usize {
        param_count(self)
    }
}

impl std::ops::Index<usize> for Widths {
    type Output = usize;

    fn index(&self, i: usize) -> &usize {
        &self.0[i]
    }
}

impl std::fmt::Display for Widths {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// `n^red_0 = n_0`, `n^red_i = min(n_i, n^red_{i−1} + 1)`, `n^red_L = n_L`.
pub fn reduced_widths(w: &Widths) -> Widths {
    let d = w.dims();
    let l = w.depth();
    let mut red = Vec::with_capacity(d.len());
    red.push(d[0]);
    for i in 1..l {
        red.push(d[i].min(red[i - 1] + 1));
    }
    red.push(d[l]);
    Widths(red)
}

/// `Σ_i (n_{i−1} + 1)·n_i`, the number of weights and biases.
pub fn param_count(w: &Widths) -> usize {
    w.dims().windows(2).map(|p| (p[0] + 1) * p[1]).sum()
}

/// Weights `W_i` (`n_i × n_{i−1}`), biases `b_i` and shifts `t_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    pub shifts: Vec<f64>,
}

impl Params {
    pub fn zeros(w: &Widths) -> Self {
        let d = w.dims();
        Self {
            weights: (1..d.len()).map(|i| Matrix::zeros(d[i], d[i - 1])).collect(),
            biases: (1..d.len()).map(|i| vec![0.0; d[i]]).collect(),
            shifts: vec![0.0; w.depth()],
        }
    }

    /// Uniform `U(−1/√n_{i−1}, 1/√n_{i−1})` weights and biases, zero shifts.
    pub fn random<R: Rng + ?Sized>(w: &Widths, rng: &mut R) -> Self {
        let d = w.dims();
        let mut p = Self::zeros(w);
        for i in 1..d.len() {
            let bound = 1.0 / (d[i - 1] as f64).sqrt();
            p.weights[i - 1] = Matrix::random_uniform(d[i], d[i - 1], bound, rng);
            p.biases[i - 1] = (0..d[i]).map(|_| rng.gen_range(-bound..=bound)).collect();
        }
        p
    }

    /// Checks shapes against `w` and finiteness of every entry.
    pub fn validate(&self, w: &Widths) -> Result<()> {
        let d = w.dims();
        let l = w.depth();
        if self.weights.len() != l || self.biases.len() != l || self.shifts.len() != l {
            return Err(Error::Shape(format!(
                "expected {l} layers, got {} weights, {} biases, {} shifts",
                self.weights.len(),
                self.biases.len(),
                self.shifts.len()
            )));
        }
        for i in 0..l {
            if self.weights[i].shape() != (d[i + 1], d[i]) {
                return Err(Error::Shape(format!(
                    "layer {}: weight is {:?}, expected {:?}",
                    i + 1,
                    self.weights[i].shape(),
                    (d[i + 1], d[i])
                )));
            }
            if self.biases[i].len() != d[i + 1] {
                return Err(Error::Shape(format!(
                    "layer {}: bias has length {}, expected {}",
                    i + 1,
                    self.biases[i].len(),
                    d[i + 1]
                )));
            }
        }
        let finite = self.weights.iter().all(Matrix::is_finite)
            && self.biases.iter().flatten().all(|x| x.is_finite())
            && self.shifts.iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::Data("parameters contain non-finite values".into()));
        }
        Ok(())
    }

    /// `self + alpha · other` (same shapes assumed).
    pub fn axpy(&self, alpha: f64, other: &Params) -> Params {
        Params {
            weights: self
                .weights
                .iter()
                .zip(&other.weights)
                .map(|(a, b)| a.axpy(alpha, b).expect("matching shapes"))
                .collect(),
            biases: self
                .biases
                .iter()
                .zip(&other.biases)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + alpha * y).collect())
                .collect(),
            shifts: self
                .shifts
                .iter()
                .zip(&other.shifts)
                .map(|(x, y)| x + alpha * y)
                .collect(),
        }
    }

    /// Max-norm distance over every weight, bias and shift.
    pub fn max_abs_diff(&self, other: &Params) -> f64 {
        let w = self
            .weights
            .iter()
            .zip(&other.weights)
            .fold(0.0f64, |m, (a, b)| m.max(a.max_abs_diff(b)));
        let b = self
            .biases
            .iter()
            .flatten()
            .zip(other.biases.iter().flatten())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let t = self
            .shifts
            .iter()
            .zip(&other.shifts)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        w.max(b).max(t)
    }

    /// All parameters flattened: per layer, weights row-major then bias, then all shifts.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out.extend_from_slice(&self.shifts);
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat) for the same shapes as `self`.
    pub fn with_flat(&self, flat: &[f64]) -> Params {
        let mut p = self.clone();
        let mut k = 0;
        for (w, b) in p.weights.iter_mut().zip(p.biases.iter_mut()) {
            let n = w.as_slice().len();
            w.as_mut_slice().copy_from_slice(&flat[k..k + n]);
            k += n;
            let m = b.len();
            b.copy_from_slice(&flat[k..k + m]);
            k += m;
        }
        let l = p.shifts.len();
        p.shifts.copy_from_slice(&flat[k..k + l]);
        p
    }
}

/// Merged matrices `A_i = [b_i | W_i]` (`n_i × (1 + n_{i−1})`) plus the shifts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedParams {
    pub mats: Vec<Matrix>,
    pub shifts: Vec<f64>,
}

impl MergedParams {
    pub fn axpy(&self, alpha: f64, other: &MergedParams) -> MergedParams {
        MergedParams {
            mats: self
                .mats
                .iter()
                .zip(&other.mats)
                .map(|(a, b)| a.axpy(alpha, b).expect("matching shapes"))
                .collect(),
            shifts: self
                .shifts
                .iter()
                .zip(&other.shifts)
                .map(|(x, y)| x + alpha * y)
                .collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &MergedParams) -> f64 {
        let m = self
            .mats
            .iter()
            .zip(&other.mats)
            .fold(0.0f64, |m, (a, b)| m.max(a.max_abs_diff(b)));
        self.shifts
            .iter()
            .zip(&other.shifts)
            .fold(m, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Widths implied by the matrix shapes.
    pub fn widths(&self) -> Result<Widths> {
        let mut dims = vec![self.mats.first().map_or(0, |m| m.cols().saturating_sub(1))];
        for m in &self.mats {
            dims.push(m.rows());
        }
        Widths::new(dims)
    }
}

/// `A_i = [b_i | W_i]`.
pub fn merge(p: &Params) -> MergedParams {
    let mats = p
        .weights
        .iter()
        .zip(&p.biases)
        .map(|(w, b)| {
            let mut a = Matrix::zeros(w.rows(), w.cols() + 1);
            a.set_block(0, 0, &Matrix::column(b));
            a.set_block(0, 1, w);
            a
        })
        .collect();
    MergedParams {
        mats,
        shifts: p.shifts.clone(),
    }
}

/// Inverse of [`merge`].
pub fn split(m: &MergedParams, w: &Widths) -> Result<Params> {
    let d = w.dims();
    if m.mats.len() != w.depth() || m.shifts.len() != w.depth() {
        return Err(Error::Shape(format!(
            "{} merged matrices and {} shifts for {} layers",
            m.mats.len(),
            m.shifts.len(),
            w.depth()
        )));
    }
    let mut p = Params::zeros(w);
    for (i, a) in m.mats.iter().enumerate() {
        if a.shape() != (d[i + 1], d[i] + 1) {
            return Err(Error::Shape(format!(
                "merged layer {} is {:?}, expected {:?}",
                i + 1,
                a.shape(),
                (d[i + 1], d[i] + 1)
            )));
        }
        p.biases[i] = a.col(0);
        p.weights[i] = a.block(0, a.rows(), 1, a.cols());
    }
    p.shifts = m.shifts.clone();
    Ok(p)
}

/// Extension by one: `x ↦ (1, x)`.
pub fn ext(x: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(x.len() + 1);
    v.push(1.0);
    v.extend_from_slice(x);
    v
}

/// A radial neural network.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialNetwork {
    widths: Widths,
    params: Params,
    profiles: Vec<RadialProfile>,
}

impl RadialNetwork {
    pub fn new(widths: Widths, params: Params, profiles: Vec<RadialProfile>) -> Result<Self> {
        params.validate(&widths)?;
        if profiles.len() != widths.depth() {
            return Err(Error::Shape(format!(
                "{} activation profiles for {} layers",
                profiles.len(),
                widths.depth()
            )));
        }
        Ok(Self {
            widths,
            params,
            profiles,
        })
    }

    /// Network with `U(±1/√n_{i−1})` weights and zero shifts.
    pub fn random<R: Rng + ?Sized>(widths: Widths, profiles: Vec<RadialProfile>, rng: &mut R) -> Result<Self> {
        let params = Params::random(&widths, rng);
        Self::new(widths, params, profiles)
    }

    /// Same profile on every layer.
    pub fn uniform_profiles(widths: &Widths, profile: RadialProfile) -> Vec<RadialProfile> {
        vec![profile; widths.depth()]
    }

    pub fn widths(&self) -> &Widths {
        &self.widths
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn profiles(&self) -> &[RadialProfile] {
        &self.profiles
    }

    pub fn depth(&self) -> usize {
        self.widths.depth()
    }

    /// Activation of layer `i` (1-based).
    pub fn activation(&self, i: usize) -> ShiftedActivation {
        ShiftedActivation::new(self.profiles[i - 1], self.params.shifts[i - 1])
    }

    /// Same architecture, new parameters.
    pub fn with_params(&self, params: Params) -> Result<Self> {
        Self::new(self.widths.clone(), params, self.profiles.clone())
    }

    pub fn merged(&self) -> MergedParams {
        merge(&self.params)
    }

    /// Same architecture with parameters taken from merged matrices.
    pub fn with_merged(&self, m: &MergedParams) -> Result<Self> {
        self.with_params(split(m, &self.widths)?)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.widths.input() {
            return Err(Error::Shape(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.widths.input()
            )));
        }
        Ok(())
    }

    /// One layer: `ρ_i(W_i a + b_i)`.
    pub(crate) fn layer(&self, i: usize, a: &[f64]) -> Vec<f64> {
        let mut z = self.params.weights[i - 1].mul_vec(a);
        for (zi, bi) in z.iter_mut().zip(&self.params.biases[i - 1]) {
            *zi += bi;
        }
        self.activation(i).apply(&z)
    }

    /// `F_L(x)`.
    pub fn feedforward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.partial_feedforward(x, self.depth())
    }

    /// `F_i(x)`, with `F_0 = id`.
    pub fn partial_feedforward(&self, x: &[f64], i: usize) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if i > self.depth() {
            return Err(Error::Shape(format!(
                "layer index {i} out of range 0..={}",
                self.depth()
            )));
        }
        let mut a = x.to_vec();
        for k in 1..=i {
            a = self.layer(k, &a);
        }
        Ok(a)
    }

    /// Pre-activations `z_i` and activations `a_i` for every layer (`a_0 = x`).
    pub(crate) fn trace(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let l = self.depth();
        let mut zs = Vec::with_capacity(l);
        let mut acts = Vec::with_capacity(l + 1);
        acts.push(x.to_vec());
        for i in 1..=l {
            let mut z = self.params.weights[i - 1].mul_vec(&acts[i - 1]);
            for (zi, bi) in z.iter_mut().zip(&self.params.biases[i - 1]) {
                *zi += bi;
            }
            acts.push(self.activation(i).apply(&z));
            zs.push(z);
        }
        (zs, acts)
    }
}

/// An element `(Q_1, …, Q_{L−1})` of the hidden orthogonal group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthTuple {
    pub qs: Vec<Matrix>,
}

impl OrthTuple {
    pub fn identity(w: &Widths) -> Self {
        let d = w.dims();
        Self {
            qs: (1..w.depth()).map(|i| Matrix::identity(d[i])).collect(),
        }
    }

    pub fn random<R: Rng + ?Sized>(w: &Widths, rng: &mut R) -> Self {
        let d = w.dims();
        Self {
            qs: (1..w.depth())
                .map(|i| Matrix::random_orthogonal(d[i], rng))
                .collect(),
        }
    }

    /// Group inverse, computed by transposition.
    pub fn inverse(&self) -> Self {
        Self {
            qs: self.qs.iter().map(Matrix::transpose).collect(),
        }
    }

    /// Largest `‖QᵢᵀQᵢ − I‖_max` across the tuple.
    pub fn orthogonality_defect(&self) -> f64 {
        self.qs
            .iter()
            .map(Matrix::orthogonality_defect)
            .fold(0.0, f64::max)
    }

    fn check(&self, w: &Widths) -> Result<()> {
        let d = w.dims();
        if self.qs.len() + 1 != w.depth()
            || self
                .qs
                .iter()
                .enumerate()
                .any(|(i, q)| q.shape() != (d[i + 1], d[i + 1]))
        {
            return Err(Error::Shape(format!(
                "orthogonal tuple does not match widths {w}"
            )));
        }
        Ok(())
    }

    /// `Q_i` with the conventions `Q_0 = I`, `Q_L = I` (`None` means identity).
    fn at(&self, i: usize) -> Option<&Matrix> {
        if i == 0 || i > self.qs.len() {
            None
        } else {
            Some(&self.qs[i - 1])
        }
    }
}

/// `W_i ↦ Q_i W_i Q_{i−1}⁻¹`, `b_i ↦ Q_i b_i`; shifts are untouched.
pub fn apply_orth(q: &OrthTuple, p: &Params) -> Result<Params> {
    let l = p.weights.len();
    let dims: Vec<usize> = std::iter::once(p.weights.first().map_or(0, Matrix::cols))
        .chain(p.weights.iter().map(Matrix::rows))
        .collect();
    let w = Widths::new(dims)?;
    q.check(&w)?;
    let mut out = p.clone();
    for i in 1..=l {
        let mut wi = p.weights[i - 1].clone();
        let mut bi = p.biases[i - 1].clone();
        if let Some(qi) = q.at(i) {
            wi = matmul(qi, &wi)?;
            bi = qi.mul_vec(&bi);
        }
        if let Some(qp) = q.at(i - 1) {
            wi = matmul(&wi, &qp.transpose())?;
        }
        out.weights[i - 1] = wi;
        out.biases[i - 1] = bi;
    }
    Ok(out)
}

/// The same action on merged matrices: `A_i ↦ Q_i A_i diag(1, Q_{i−1}⁻¹)`.
pub fn apply_orth_merged(q: &OrthTuple, m: &MergedParams) -> Result<MergedParams> {
    let w = m.widths()?;
    q.check(&w)?;
    let mut out = m.clone();
    for i in 1..=w.depth() {
        let mut a = m.mats[i - 1].clone();
        if let Some(qi) = q.at(i) {
            a = matmul(qi, &a)?;
        }
        if let Some(qp) = q.at(i - 1) {
            a = matmul(&a, &qp.transpose().extend_by_one())?;
        }
        out.mats[i - 1] = a;
    }
    Ok(out)
}

/// Current model file format version.
pub const MODEL_FORMAT_VERSION: u64 = 1;

/// Writes `net` as JSON.
///
/// Layout: `{version, widths, activations: [{kind, params, shift}],
/// layers: [{weights, bias}]}` with row-major weights. Scalars use the
/// shortest decimal form that parses back to the identical `f64`.
pub fn save_model<W: Write>(net: &RadialNetwork, sink: W) -> Result<()> {
    let activations: Vec<Value> = (1..=net.depth())
        .map(|i| {
            let act = net.activation(i);
            json!({
                "kind": act.profile.tag(),
                "params": act.profile.params(),
                "shift": act.shift,
            })
        })
        .collect();
    let layers: Vec<Value> = net
        .params
        .weights
        .iter()
        .zip(&net.params.biases)
        .map(|(w, b)| json!({ "weights": w.as_slice(), "bias": b }))
        .collect();
    let doc = json!({
        "version": MODEL_FORMAT_VERSION,
        "widths": net.widths.dims(),
        "activations": activations,
        "layers": layers,
    });
    serde_json::to_writer_pretty(sink, &doc).map_err(|e| Error::Io(e.into()))
}

fn parse_err(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        location: location.into(),
        message: message.into(),
    }
}

fn field<'a>(obj: &'a Value, key: &str, at: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| parse_err(format!("{at}.{key}"), "missing field"))
}

fn as_f64(v: &Value, at: &str) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| parse_err(at, format!("expected a number, found {v}")))
}

fn as_array<'a>(v: &'a Value, at: &str) -> Result<&'a Vec<Value>> {
    v.as_array()
        .ok_or_else(|| parse_err(at, "expected an array"))
}

fn as_f64_vec(v: &Value, at: &str) -> Result<Vec<f64>> {
    as_array(v, at)?
        .iter()
        .enumerate()
        .map(|(k, x)| as_f64(x, &format!("{at}[{k}]")))
        .collect()
}

/// Reads a network written by [`save_model`].
pub fn load_model<R: Read>(source: R) -> Result<RadialNetwork> {
    let doc: Value = serde_json::from_reader(source)
        .map_err(|e| parse_err(format!("line {}", e.line()), e.to_string()))?;
    let root = "$";
    let version = field(&doc, "version", root)?
        .as_u64()
        .ok_or_else(|| parse_err("$.version", "expected an unsigned integer"))?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let dims = as_array(field(&doc, "widths", root)?, "$.widths")?
        .iter()
        .enumerate()
        .map(|(k, v)| {
            v.as_u64()
                .map(|x| x as usize)
                .ok_or_else(|| parse_err(format!("$.widths[{k}]"), "expected a count"))
        })
        .collect::<Result<Vec<_>>>()?;
    let widths = Widths::new(dims).map_err(|e| parse_err("$.widths", e.to_string()))?;
    let d = widths.dims().to_vec();
    let l = widths.depth();

    let acts = as_array(field(&doc, "activations", root)?, "$.activations")?;
    if acts.len() != l {
        return Err(parse_err(
            "$.activations",
            format!("{} entries for {l} layers", acts.len()),
        ));
    }
    let mut profiles = Vec::with_capacity(l);
    let mut shifts = Vec::with_capacity(l);
    for (i, a) in acts.iter().enumerate() {
        let at = format!("$.activations[{i}]");
        let kind = field(a, "kind", &at)?
            .as_str()
            .ok_or_else(|| parse_err(format!("{at}.kind"), "expected a string"))?;
        let params = match a.get("params") {
            Some(p) => as_f64_vec(p, &format!("{at}.params"))?,
            None => Vec::new(),
        };
        profiles.push(
            RadialProfile::from_tag(kind, &params)
                .map_err(|e| parse_err(format!("{at}.kind"), e.to_string()))?,
        );
        shifts.push(as_f64(field(a, "shift", &at)?, &format!("{at}.shift"))?);
    }

    let layers = as_array(field(&doc, "layers", root)?, "$.layers")?;
    if layers.len() != l {
        return Err(parse_err(
            "$.layers",
            format!("{} entries for {l} layers", layers.len()),
        ));
    }
    let mut params = Params::zeros(&widths);
    params.shifts = shifts;
    for (i, layer) in layers.iter().enumerate() {
        let at = format!("$.layers[{i}]");
        let w = as_f64_vec(field(layer, "weights", &at)?, &format!("{at}.weights"))?;
        params.weights[i] = Matrix::from_vec(d[i + 1], d[i], w)
            .map_err(|e| parse_err(format!("{at}.weights"), e.to_string()))?;
        let b = as_f64_vec(field(layer, "bias", &at)?, &format!("{at}.bias"))?;
        if b.len() != d[i + 1] {
            return Err(parse_err(
                format!("{at}.bias"),
                format!("length {}, expected {}", b.len(), d[i + 1]),
            ));
        }
        params.biases[i] = b;
    }
    RadialNetwork::new(widths, params, profiles)
}

/// Reads a CSV dataset: a header row, then `n_in` input columns followed by
/// `n_out` target columns per row.
pub fn read_dataset<R: Read>(source: R, n_in: usize, n_out: usize) -> Result<Batch> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err("header", e.to_string()))?
        .clone();
    if headers.len() != n_in + n_out {
        return Err(parse_err(
            "header",
            format!("{} columns, expected {}", headers.len(), n_in + n_out),
        ));
    }
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| parse_err(format!("row {row}"), e.to_string()))?;
        let vals = rec
            .iter()
            .enumerate()
            .map(|(c, s)| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(format!("row {row}, column {}", c + 1), e.to_string()))
            })
            .collect::<Result<Vec<f64>>>()?;
        inputs.push(vals[..n_in].to_vec());
        targets.push(vals[n_in..].to_vec());
    }
    Batch::new(inputs, targets)
}

/// Inverse of [`read_dataset`]; columns are `x1..xn,y1..ym`.
pub fn write_dataset<W: Write>(sink: W, batch: &Batch) -> Result<()> {
    let n_in = batch.inputs.first().map_or(0, Vec::len);
    let n_out = batch.targets.first().map_or(0, Vec::len);
    let mut wtr = csv::Writer::from_writer(sink);
    let header: Vec<String> = (1..=n_in)
        .map(|i| format!("x{i}"))
        .chain((1..=n_out).map(|i| format!("y{i}")))
        .collect();
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    wtr.write_record(&header).map_err(csv_err)?;
    for (x, y) in batch.inputs.iter().zip(&batch.targets) {
        let rec: Vec<String> = x.iter().chain(y).map(|v| v.to_string()).collect();
        wtr.write_record(&rec).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn w(d: &[usize]) -> Widths {
        Widths::new(d.to_vec()).unwrap()
    }

    fn one_one(profile: RadialProfile) -> RadialNetwork {
        let params = Params {
            weights: vec![Matrix::from_rows(&[vec![2.0]]).unwrap()],
            biases: vec![vec![0.0]],
            shifts: vec![0.0],
        };
        RadialNetwork::new(w(&[1, 1]), params, vec![profile]).unwrap()
    }

    #[test]
    fn reduced_widths_examples() {
        assert_eq!(reduced_widths(&w(&[1, 8, 16, 8, 1])), w(&[1, 2, 3, 4, 1]));
        assert_eq!(reduced_widths(&w(&[1, 6, 7, 1])), w(&[1, 2, 3, 1]));
        assert_eq!(
            reduced_widths(&w(&[2, 16, 64, 128, 16, 2])),
            w(&[2, 3, 4, 5, 6, 2])
        );
        assert_eq!(reduced_widths(&w(&[1, 4, 4, 1])), w(&[1, 2, 3, 1]));
    }

    #[test]
    fn param_count_examples() {
        assert_eq!(param_count(&w(&[1, 8, 16, 8, 1])), 305);
        assert_eq!(param_count(&w(&[1, 2, 3, 4, 1])), 34);
        assert_eq!(param_count(&w(&[1, 4, 4, 1])), 33);
        assert_eq!(param_count(&w(&[1, 2, 3, 1])), 17);
    }

    #[test]
    fn widths_validation() {
        assert!(Widths::new(vec![3]).is_err());
        assert!(Widths::new(vec![1, 0, 1]).is_err());
    }

    #[test]
    fn step_relu_one_layer() {
        let net = one_one(RadialProfile::StepRelu);
        assert_eq!(net.feedforward(&[1.0]).unwrap(), vec![2.0]);
        assert_eq!(net.feedforward(&[0.3]).unwrap(), vec![0.0]);
        assert_eq!(net.partial_feedforward(&[1.0], 0).unwrap(), vec![1.0]);
        assert_eq!(net.partial_feedforward(&[1.0], 1).unwrap(), vec![2.0]);
        assert!(net.partial_feedforward(&[1.0], 2).is_err());
        assert!(net.feedforward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn identity_net_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let widths = w(&[3, 5, 4, 2]);
        let mut net = RadialNetwork::random(
            widths.clone(),
            RadialNetwork::uniform_profiles(&widths, RadialProfile::Identity),
            &mut rng,
        )
        .unwrap();
        let mut p = net.params().clone();
        p.biases.iter_mut().for_each(|b| b.iter_mut().for_each(|x| *x = 0.0));
        net = net.with_params(p.clone()).unwrap();
        let prod = matmul(&p.weights[2], &matmul(&p.weights[1], &p.weights[0]).unwrap()).unwrap();
        let x = [0.3, -1.2, 0.8];
        let got = net.feedforward(&x).unwrap();
        let want = prod.mul_vec(&x);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn merge_example() {
        let p = Params {
            weights: vec![Matrix::from_rows(&[vec![2.0]]).unwrap()],
            biases: vec![vec![3.0]],
            shifts: vec![0.0],
        };
        let m = merge(&p);
        assert_eq!(m.mats[0], Matrix::from_rows(&[vec![3.0, 2.0]]).unwrap());
        let x = 1.7;
        assert_eq!(m.mats[0].mul_vec(&ext(&[x]))[0], 3.0 + 2.0 * x);
        assert_eq!(split(&m, &w(&[1, 1])).unwrap(), p);
    }

    #[test]
    fn orth_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let widths = w(&[2, 4, 3, 2]);
        let p = Params::random(&widths, &mut rng);
        assert_eq!(apply_orth(&OrthTuple::identity(&widths), &p).unwrap(), p);
        let q = OrthTuple::random(&widths, &mut rng);
        let back = apply_orth(&q, &apply_orth(&q.inverse(), &p).unwrap()).unwrap();
        assert!(back.max_abs_diff(&p) <= 1e-12);
    }

    #[test]
    fn orth_preserves_feedforward_on_131() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let widths = w(&[1, 3, 1]);
        let net = RadialNetwork::random(
            widths.clone(),
            RadialNetwork::uniform_profiles(&widths, RadialProfile::Squashing),
            &mut rng,
        )
        .unwrap();
        let q = OrthTuple::random(&widths, &mut rng);
        let moved = net.with_params(apply_orth(&q, net.params()).unwrap()).unwrap();
        for _ in 0..100 {
            let x = [rng.gen_range(-3.0..3.0)];
            let d = net.feedforward(&x).unwrap()[0] - moved.feedforward(&x).unwrap()[0];
            assert!(d.abs() <= 1e-10);
        }
    }

    #[test]
    fn merged_action_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let widths = w(&[2, 5, 3, 1]);
        let p = Params::random(&widths, &mut rng);
        let q = OrthTuple::random(&widths, &mut rng);
        let a = merge(&apply_orth(&q, &p).unwrap());
        let b = apply_orth_merged(&q, &merge(&p)).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-14);
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = Params::random(&w(&[2, 3, 1]), &mut rng);
        assert_eq!(p.with_flat(&p.to_flat()), p);
        assert_eq!(p.to_flat().len(), param_count(&w(&[2, 3, 1])) + 2);
    }

    fn sample_net() -> RadialNetwork {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let widths = w(&[2, 3, 2]);
        let mut net = RadialNetwork::random(
            widths,
            vec![RadialProfile::ShiftedSigmoid { offset: 0.5 }, RadialProfile::Identity],
            &mut rng,
        )
        .unwrap();
        let mut p = net.params().clone();
        p.shifts = vec![0.1 + 1e-17, -std::f64::consts::PI];
        net = net.with_params(p).unwrap();
        net
    }

    #[test]
    fn model_round_trip_is_exact() {
        let net = sample_net();
        let mut buf = Vec::new();
        save_model(&net, &mut buf).unwrap();
        let back = load_model(buf.as_slice()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn model_missing_widths() {
        let net = sample_net();
        let mut buf = Vec::new();
        save_model(&net, &mut buf).unwrap();
        let mut doc: Value = serde_json::from_slice(&buf).unwrap();
        doc.as_object_mut().unwrap().remove("widths");
        let err = load_model(doc.to_string().as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { ref location, .. } if location == "$.widths"));
    }

    #[test]
    fn model_bad_version() {
        let net = sample_net();
        let mut buf = Vec::new();
        save_model(&net, &mut buf).unwrap();
        let mut doc: Value = serde_json::from_slice(&buf).unwrap();
        doc["version"] = json!(99);
        let err = load_model(doc.to_string().as_bytes()).unwrap_err();
        assert!(matches!(err, Error::UnsupportedVersion { found: 99, .. }));
    }

    #[test]
    fn model_bad_layer_location() {
        let net = sample_net();
        let mut buf = Vec::new();
        save_model(&net, &mut buf).unwrap();
        let mut doc: Value = serde_json::from_slice(&buf).unwrap();
        doc["layers"][1]["bias"] = json!([1.0]);
        let err = load_model(doc.to_string().as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { ref location, .. } if location == "$.layers[1].bias"));
    }

    #[test]
    fn dataset_round_trip() {
        let batch = Batch::new(
            vec![vec![-3.0], vec![0.1]],
            vec![vec![(-9.0f64).exp()], vec![(-0.01f64).exp()]],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &batch).unwrap();
        assert!(buf.starts_with(b"x1,y1\n"));
        assert_eq!(read_dataset(buf.as_slice(), 1, 1).unwrap(), batch);
        assert!(read_dataset(buf.as_slice(), 2, 1).is_err());
    }

    proptest! {
        #[test]
        fn reduction_properties(d in prop::collection::vec(1usize..20, 2..8)) {
            let widths = Widths::new(d).unwrap();
            let red = widths.reduced();
            prop_assert_eq!(red.reduced(), red.clone());
            for i in 0..red.dims().len() {
                prop_assert!(red[i] <= widths[i]);
                if i > 0 && i < widths.depth() {
                    prop_assert!(red[i] <= red[i - 1] + 1);
                }
            }
            prop_assert!(red.param_count() <= widths.param_count());
        }

        #[test]
        fn merge_split_bijection(d in prop::collection::vec(1usize..6, 2..5), seed in any::<u64>()) {
            let widths = Widths::new(d).unwrap();
            let p = Params::random(&widths, &mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(split(&merge(&p), &widths).unwrap(), p);
        }

        #[test]
        fn orth_action_preserves_feedforward(
            d in prop::collection::vec(1usize..6, 2..5),
            seed in any::<u64>(),
            pi in 0usize..4,
        ) {
            let profiles = [
                RadialProfile::Squashing,
                RadialProfile::Sigmoid,
                RadialProfile::ShiftedSigmoid { offset: 0.5 },
                RadialProfile::Identity,
            ];
            let widths = Widths::new(d).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = RadialNetwork::random(
                widths.clone(),
                RadialNetwork::uniform_profiles(&widths, profiles[pi]),
                &mut rng,
            ).unwrap();
            let q = OrthTuple::random(&widths, &mut rng);
            let moved = net.with_params(apply_orth(&q, net.params()).unwrap()).unwrap();
            let x: Vec<f64> = (0..widths.input()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (a, b) = (net.feedforward(&x).unwrap(), moved.feedforward(&x).unwrap());
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u - v).abs() <= 1e-9);
            }
        }
    }
}
