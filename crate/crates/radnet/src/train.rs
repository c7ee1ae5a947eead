//! Loss, backpropagation, (projected) gradient descent, and the
//! compression/training equivalence checks.
//!
//! The loss of a network on a batch is the sum of squared output errors
//! `Σ_j ‖F(x_j) − y_j‖²`. One descent step is
//! `γ(p) = p − η ∇L(p)`; the projected step zeroes the interpolating blocks
//! of the merged matrices afterwards, leaving shifts alone.
//!
//! Gradients are accumulated over fixed-size chunks of the batch in
//! parallel and then summed in chunk order, so results do not depend on the
//! number of threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::RadialProfile;
use crate::compress::{embed, interpolating_project, qr_compress};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{apply_orth_merged, merge, split, MergedParams, Params, RadialNetwork, Widths};

/// Samples per parallel work unit.
pub const CHUNK: usize = 64;

/// Training inputs with matching targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl Batch {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::Shape(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        let consistent = |rows: &[Vec<f64>]| rows.windows(2).all(|w| w[0].len() == w[1].len());
        if !consistent(&inputs) || !consistent(&targets) {
            return Err(Error::Shape("rows of differing lengths".into()));
        }
        if inputs.iter().chain(&targets).flatten().any(|x| !x.is_finite()) {
            return Err(Error::Data("batch contains non-finite values".into()));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn check(&self, net: &RadialNetwork) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let w = net.widths();
        if self.inputs[0].len() != w.input() || self.targets[0].len() != w.output() {
            return Err(Error::Shape(format!(
                "batch is {}→{}, network is {}→{}",
                self.inputs[0].len(),
                self.targets[0].len(),
                w.input(),
                w.output()
            )));
        }
        Ok(())
    }
}

/// Gradients, shaped like [`Params`].
pub type GradParams = Params;

/// Cost aggregated over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `Σ_j ‖F(x_j) − y_j‖²`.
    Sse,
    /// The same sum divided by the batch size.
    MeanSse,
    /// The same sum divided by the number of output entries in the batch.
    Mse,
}

impl Loss {
    fn scale(self, samples: usize, outputs: usize) -> f64 {
        match self {
            Loss::Sse => 1.0,
            Loss::MeanSse => 1.0 / samples as f64,
            Loss::Mse => 1.0 / (samples * outputs) as f64,
        }
    }
}

/// Full-batch gradient descent settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Seed used when the caller initializes a network for this run.
    pub seed: u64,
    pub loss: Loss,
    /// Use the projected step instead of the plain one.
    pub project: bool,
    /// Stop as soon as the loss is at or below this value.
    pub target_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 3000,
            seed: 0,
            loss: Loss::Sse,
            project: false,
            target_loss: None,
        }
    }
}

/// Seeded network with `U(±1/√n_{i−1})` weights and biases and zero shifts.
pub fn init(widths: Widths, profiles: Vec<RadialProfile>, seed: u64) -> Result<RadialNetwork> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RadialNetwork::random(widths, profiles, &mut rng)
}

/// Accumulates the gradient of `⟨F(x), δ⟩` into `g`, where `δ = seed(F(x))`.
fn backprop_into<F>(net: &RadialNetwork, x: &[f64], g: &mut GradParams, seed: F) -> f64
where
    F: FnOnce(&[f64]) -> (Vec<f64>, f64),
{
    let (zs, acts) = net.trace(x);
    let l = net.depth();
    let (mut delta, value) = seed(&acts[l]);
    let params = net.params();
    for i in (1..=l).rev() {
        let (dz, dt) = net.activation(i).vjp(&zs[i - 1], &delta);
        g.weights[i - 1].add_outer(1.0, &dz, &acts[i - 1]);
        for (gb, d) in g.biases[i - 1].iter_mut().zip(&dz) {
            *gb += d;
        }
        g.shifts[i - 1] += dt;
        if i > 1 {
            delta = params.weights[i - 1].tr_mul_vec(&dz);
        }
    }
    value
}

fn sse_seed(y: &[f64]) -> impl FnOnce(&[f64]) -> (Vec<f64>, f64) + '_ {
    move |out: &[f64]| {
        let diff: Vec<f64> = out.iter().zip(y).map(|(a, b)| a - b).collect();
        let c = diff.iter().map(|d| d * d).sum();
        (diff.into_iter().map(|d| 2.0 * d).collect(), c)
    }
}

/// Loss and gradient in one pass.
pub fn loss_and_grad(net: &RadialNetwork, batch: &Batch, loss: Loss) -> Result<(f64, GradParams)> {
    batch.check(net)?;
    let idx: Vec<usize> = (0..batch.len()).collect();
    let partials: Vec<(f64, GradParams)> = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = Params::zeros(net.widths());
            let mut c = 0.0;
            for &j in chunk {
                c += backprop_into(net, &batch.inputs[j], &mut g, sse_seed(&batch.targets[j]));
            }
            (c, g)
        })
        .collect();
    let mut total = 0.0;
    let mut grad = Params::zeros(net.widths());
    for (c, g) in &partials {
        total += c;
        grad = grad.axpy(1.0, g);
    }
    let s = loss.scale(batch.len(), net.widths().output());
    if s != 1.0 {
        grad = Params::zeros(net.widths()).axpy(s, &grad);
        total *= s;
    }
    Ok((total, grad))
}

/// `Σ_j ‖F(x_j) − y_j‖²`.
pub fn loss(net: &RadialNetwork, batch: &Batch) -> Result<f64> {
    loss_with(net, batch, Loss::Sse)
}

/// Batch loss under the chosen aggregation.
pub fn loss_with(net: &RadialNetwork, batch: &Batch, kind: Loss) -> Result<f64> {
    batch.check(net)?;
    let idx: Vec<usize> = (0..batch.len()).collect();
    let partials: Vec<f64> = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|&j| {
                    let out = net.feedforward(&batch.inputs[j]).expect("checked shape");
                    out.iter()
                        .zip(&batch.targets[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                })
                .sum::<f64>()
        })
        .collect();
    Ok(partials.iter().sum::<f64>() * kind.scale(batch.len(), net.widths().output()))
}

/// Gradient of the SSE loss with respect to weights, biases and shifts.
pub fn grad(net: &RadialNetwork, batch: &Batch) -> Result<GradParams> {
    Ok(loss_and_grad(net, batch, Loss::Sse)?.1)
}

/// Gradient of `⟨F(x), dir⟩` for a single input.
pub fn directional_grad(net: &RadialNetwork, x: &[f64], dir: &[f64]) -> Result<GradParams> {
    if x.len() != net.widths().input() || dir.len() != net.widths().output() {
        return Err(Error::Shape("input or direction has the wrong length".into()));
    }
    let mut g = Params::zeros(net.widths());
    backprop_into(net, x, &mut g, |out| {
        (dir.to_vec(), out.iter().zip(dir).map(|(a, b)| a * b).sum())
    });
    Ok(g)
}

fn step(net: &RadialNetwork, g: &GradParams, eta: f64, project: bool) -> Result<RadialNetwork> {
    let p = net.params().axpy(-eta, g);
    if project {
        let m = interpolating_project(&merge(&p), net.widths())?;
        net.with_params(split(&m, net.widths())?)
    } else {
        net.with_params(p)
    }
}

/// `γ(p) = p − η ∇L(p)` for the SSE loss.
pub fn gd_step(net: &RadialNetwork, batch: &Batch, eta: f64) -> Result<RadialNetwork> {
    step(net, &grad(net, batch)?, eta, false)
}

/// `γ_proj = Proj ∘ γ`; shifts take the plain step.
pub fn projected_gd_step(net: &RadialNetwork, batch: &Batch, eta: f64) -> Result<RadialNetwork> {
    step(net, &grad(net, batch)?, eta, true)
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: RadialNetwork,
    /// Loss at the start of each completed epoch.
    pub history: Vec<f64>,
    /// Loss of the returned network.
    pub final_loss: f64,
    /// Whether `target_loss` was reached (`None` when no target was set).
    pub reached_target: Option<bool>,
}

/// Runs `cfg.epochs` full-batch steps, stopping early once `cfg.target_loss` is met.
pub fn train(net: &RadialNetwork, batch: &Batch, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.learning_rate.is_nan() || cfg.learning_rate < 0.0 {
        return Err(Error::Data(format!(
            "learning rate must be non-negative, got {}",
            cfg.learning_rate
        )));
    }
    let mut cur = net.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (l, g) = loss_and_grad(&cur, batch, cfg.loss)?;
        if !l.is_finite() {
            return Err(Error::Divergence { epoch, loss: l });
        }
        if cfg.target_loss.is_some_and(|t| l <= t) {
            return Ok(TrainOutcome {
                net: cur,
                history,
                final_loss: l,
                reached_target: Some(true),
            });
        }
        history.push(l);
        cur = step(&cur, &g, cfg.learning_rate, cfg.project)?;
    }
    let final_loss = loss_with(&cur, batch, cfg.loss)?;
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            epoch: cfg.epochs,
            loss: final_loss,
        });
    }
    Ok(TrainOutcome {
        net: cur,
        history,
        final_loss,
        reached_target: cfg.target_loss.map(|t| final_loss <= t),
    })
}

/// Deviations recorded by [`verify_thm4`] after a given number of steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thm4Checkpoint {
    pub step: usize,
    /// `max |γ^k(p) − Q·γ^k(Q⁻¹·p)|`, when those trajectories were run.
    pub gd_equivariance: Option<f64>,
    /// `max |γ_proj^k(Q⁻¹·p) − (ι(γ_red^k(V)) + U)|`.
    pub projected_vs_reduced: f64,
    /// `|L(γ_proj^k(Q⁻¹·p)) − L_red(γ_red^k(V))|`.
    pub loss_gap: f64,
}

/// Summary of [`verify_thm4`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thm4Report {
    pub steps: usize,
    pub learning_rate: f64,
    pub max_gd_equivariance: Option<f64>,
    pub max_projected_vs_reduced: f64,
    /// Loss of the projected full network after `steps` steps.
    pub loss_projected: f64,
    /// Loss of the reduced network after `steps` steps.
    pub loss_reduced: f64,
    pub loss_gap: f64,
    pub checkpoints: Vec<Thm4Checkpoint>,
}

/// Checks the training equivalences that come with QR compression.
///
/// With `Q`, `V`, `U` from [`qr_compress`] and `T = Q⁻¹·p`, runs four
/// trajectories for `k` steps (`γ` from `p`, `γ` from `T`, `γ_proj` from `T`,
/// and `γ_red` from `V`) and measures after every step
///
/// * `γ^k(p) = Q·γ^k(T)`,
/// * `γ_proj^k(T) = ι(γ_red^k(V)) + U`,
/// * `L(γ_proj^k(T)) = L_red(γ_red^k(V))`.
///
/// Steps listed in `checkpoints` are reported individually.
pub fn verify_thm4(
    net: &RadialNetwork,
    batch: &Batch,
    eta: f64,
    k: usize,
    checkpoints: &[usize],
) -> Result<Thm4Report> {
    track_trajectories(net, batch, eta, k, checkpoints, true)
}

/// [`verify_thm4`] without the two plain trajectories.
pub fn verify_thm4_projected(
    net: &RadialNetwork,
    batch: &Batch,
    eta: f64,
    k: usize,
    checkpoints: &[usize],
) -> Result<Thm4Report> {
    track_trajectories(net, batch, eta, k, checkpoints, false)
}

fn track_trajectories(
    net: &RadialNetwork,
    batch: &Batch,
    eta: f64,
    k: usize,
    checkpoints: &[usize],
    equivariance: bool,
) -> Result<Thm4Report> {
    let res = qr_compress(net)?;
    let q = &res.certificate;
    let w = net.widths();
    let t0 = apply_orth_merged(&q.inverse(), &net.merged())?;
    let transformed = net.with_merged(&t0)?;

    let mut plain = net.clone();
    let mut plain_t = transformed.clone();
    let mut proj = transformed;
    let mut red = res.reduced.clone();

    let measure = |plain: &RadialNetwork,
                   plain_t: &RadialNetwork,
                   proj: &RadialNetwork,
                   red: &RadialNetwork,
                   lp: f64,
                   lr: f64,
                   step: usize|
     -> Result<Thm4Checkpoint> {
        let gd_equivariance = if equivariance {
            let moved = apply_orth_merged(q, &plain_t.merged())?;
            Some(plain.merged().max_abs_diff(&moved))
        } else {
            None
        };
        let rhs = embed(&red.merged(), w).axpy(1.0, &res.residual_u);
        let projected_vs_reduced = proj.merged().max_abs_diff(&rhs);
        Ok(Thm4Checkpoint {
            step,
            gd_equivariance,
            projected_vs_reduced,
            loss_gap: (lp - lr).abs(),
        })
    };

    let mut max_eq = 0.0f64;
    let mut max_pr = 0.0f64;
    let mut reported = Vec::new();
    let mut last = (0.0, 0.0);
    for s in 0..=k {
        let (l_proj, g_proj) = loss_and_grad(&proj, batch, Loss::Sse)?;
        let (l_red, g_red) = loss_and_grad(&red, batch, Loss::Sse)?;
        let plain_grads = if equivariance {
            let (l_plain, g_plain) = loss_and_grad(&plain, batch, Loss::Sse)?;
            if !l_plain.is_finite() {
                return Err(Error::Divergence { epoch: s, loss: l_plain });
            }
            Some((g_plain, loss_and_grad(&plain_t, batch, Loss::Sse)?.1))
        } else {
            None
        };
        for l in [l_proj, l_red] {
            if !l.is_finite() {
                return Err(Error::Divergence { epoch: s, loss: l });
            }
        }
        let cp = measure(&plain, &plain_t, &proj, &red, l_proj, l_red, s)?;
        if let Some(e) = cp.gd_equivariance {
            max_eq = max_eq.max(e);
        }
        max_pr = max_pr.max(cp.projected_vs_reduced);
        if checkpoints.contains(&s) {
            reported.push(cp);
        }
        last = (l_proj, l_red);
        if s == k {
            break;
        }
        if let Some((g_plain, g_plain_t)) = &plain_grads {
            plain = step(&plain, g_plain, eta, false)?;
            plain_t = step(&plain_t, g_plain_t, eta, false)?;
        }
        proj = step(&proj, &g_proj, eta, true)?;
        red = step(&red, &g_red, eta, false)?;
    }
    Ok(Thm4Report {
        steps: k,
        learning_rate: eta,
        max_gd_equivariance: equivariance.then_some(max_eq),
        max_projected_vs_reduced: max_pr,
        loss_projected: last.0,
        loss_reduced: last.1,
        loss_gap: (last.0 - last.1).abs(),
        checkpoints: reported,
    })
}

/// Network with widths `(1, 3, 1)` and identity activations whose merged
/// matrices are `A_1 = [[a, b], [c, d], [e, f]]` and `A_2 = [g, h, i, j]`.
/// Its output at `x = 1` is `h(a+b) + i(c+d) + j(e+f) + g`.
pub fn counterexample_net(p: [f64; 10]) -> Result<RadialNetwork> {
    let [a, b, c, d, e, f, g, h, i, j] = p;
    let widths = Widths::new(vec![1, 3, 1])?;
    let m = MergedParams {
        mats: vec![
            Matrix::from_rows(&[vec![a, b], vec![c, d], vec![e, f]])?,
            Matrix::from_rows(&[vec![g, h, i, j]])?,
        ],
        shifts: vec![0.0, 0.0],
    };
    RadialNetwork::new(
        widths.clone(),
        split(&m, &widths)?,
        vec![RadialProfile::Identity; 2],
    )
}

/// `L(γ(p)) − L(γ_proj(p))` for the objective `L(p) = F_p(1)` of
/// [`counterexample_net`], with gradients from backpropagation.
pub fn counterexample_gap(p: [f64; 10], eta: f64) -> Result<f64> {
    let net = counterexample_net(p)?;
    let mut g = directional_grad(&net, &[1.0], &[1.0])?;
    // The objective is a function of the ten matrix entries only.
    g.shifts.iter_mut().for_each(|t| *t = 0.0);
    let plain = step(&net, &g, eta, false)?;
    let proj = step(&net, &g, eta, true)?;
    Ok(plain.feedforward(&[1.0])?[0] - proj.feedforward(&[1.0])?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{apply_orth, OrthTuple};
    use proptest::prelude::*;
    use rand::Rng;

    const SIG: RadialProfile = RadialProfile::ShiftedSigmoid { offset: 0.5 };

    fn w(d: &[usize]) -> Widths {
        Widths::new(d.to_vec()).unwrap()
    }

    fn random_net(d: &[usize], profile: RadialProfile, seed: u64) -> RadialNetwork {
        let widths = w(d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = RadialNetwork::random(
            widths.clone(),
            RadialNetwork::uniform_profiles(&widths, profile),
            &mut rng,
        )
        .unwrap();
        let mut p = net.params().clone();
        p.shifts.iter_mut().for_each(|t| *t = rng.gen_range(-0.3..0.3));
        net.with_params(p).unwrap()
    }

    fn random_batch(n_in: usize, n_out: usize, len: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = |n: usize| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>();
        let inputs = (0..len).map(|_| v(n_in)).collect();
        let targets = (0..len).map(|_| v(n_out)).collect();
        Batch::new(inputs, targets).unwrap()
    }

    fn gauss_batch() -> Batch {
        let xs: Vec<f64> = (0..121).map(|j| -3.0 + j as f64 / 20.0).collect();
        Batch::new(
            xs.iter().map(|&x| vec![x]).collect(),
            xs.iter().map(|&x| vec![(-x * x).exp()]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_gradient() {
        let net = random_net(&[2, 4, 3], SIG, 1);
        let inputs = random_batch(2, 3, 10, 2).inputs;
        let targets = inputs.iter().map(|x| net.feedforward(x).unwrap()).collect();
        let batch = Batch::new(inputs, targets).unwrap();
        assert_eq!(loss(&net, &batch).unwrap(), 0.0);
        let g = grad(&net, &batch).unwrap();
        assert!(g.to_flat().iter().all(|&x| x == 0.0));
        let stepped = gd_step(&net, &batch, 0.1).unwrap();
        assert_eq!(stepped, net);
    }

    #[test]
    fn unit_error_loss() {
        let widths = w(&[1, 2]);
        let mut p = Params::zeros(&widths);
        p.biases[0] = vec![1.0, 0.0];
        let net = RadialNetwork::new(widths, p, vec![RadialProfile::Identity]).unwrap();
        let batch = Batch::new(vec![vec![0.0]], vec![vec![0.0, 0.0]]).unwrap();
        assert_eq!(loss(&net, &batch).unwrap(), 1.0);
    }

    #[test]
    fn loss_matches_two_pass_oracle() {
        let net = random_net(&[2, 5, 2], RadialProfile::Squashing, 3);
        let batch = random_batch(2, 2, 300, 4);
        let outs: Vec<Vec<f64>> = batch.inputs.iter().map(|x| net.feedforward(x).unwrap()).collect();
        let oracle = outs
            .iter()
            .zip(&batch.targets)
            .fold(0.0, |acc, (o, y)| {
                acc + o.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            });
        let got = loss(&net, &batch).unwrap();
        assert!((got - oracle).abs() <= 1e-12 * oracle.max(1.0));
        let (l2, _) = loss_and_grad(&net, &batch, Loss::Sse).unwrap();
        assert!((l2 - oracle).abs() <= 1e-12 * oracle.max(1.0));
    }

    fn fd_check(net: &RadialNetwork, batch: &Batch) {
        let g = grad(net, batch).unwrap().to_flat();
        let base = net.params().clone();
        let flat = base.to_flat();
        let h = 1e-6;
        for k in 0..flat.len() {
            let mut up = flat.clone();
            let mut dn = flat.clone();
            up[k] += h;
            dn[k] -= h;
            let lu = loss(&net.with_params(base.with_flat(&up)).unwrap(), batch).unwrap();
            let ld = loss(&net.with_params(base.with_flat(&dn)).unwrap(), batch).unwrap();
            let fd = (lu - ld) / (2.0 * h);
            let rel = (g[k] - fd).abs() / fd.abs().max(g[k].abs()).max(1e-3);
            assert!(rel <= 1e-4, "coordinate {k}: analytic {} vs fd {fd}", g[k]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_131() {
        let net = random_net(&[1, 3, 1], RadialProfile::Squashing, 5);
        fd_check(&net, &random_batch(1, 1, 7, 6));
    }

    #[test]
    fn gradient_matches_finite_differences_all_smooth() {
        let profiles = [
            RadialProfile::Squashing,
            RadialProfile::Sigmoid,
            SIG,
            RadialProfile::Identity,
        ];
        for (s, d) in [vec![1, 3, 1], vec![2, 4, 3, 2], vec![3, 2, 5, 1]].iter().enumerate() {
            for (k, p) in profiles.iter().enumerate() {
                let net = random_net(d, *p, 100 + (s * 10 + k) as u64);
                fd_check(&net, &random_batch(d[0], *d.last().unwrap(), 5, 7));
            }
        }
    }

    #[test]
    fn gradient_transport() {
        let net = random_net(&[2, 4, 5, 2], SIG, 8);
        let batch = random_batch(2, 2, 20, 9);
        let q = OrthTuple::random(net.widths(), &mut ChaCha8Rng::seed_from_u64(10));
        let qinv = q.inverse();
        let moved = net.with_params(apply_orth(&qinv, net.params()).unwrap()).unwrap();
        let lhs = grad(&moved, &batch).unwrap();
        let rhs = apply_orth(&qinv, &grad(&net, &batch).unwrap()).unwrap();
        assert!(lhs.max_abs_diff(&rhs) <= 1e-8);
    }

    #[test]
    fn zero_and_degenerate_steps() {
        let net = random_net(&[1, 3, 1], SIG, 11);
        let batch = random_batch(1, 1, 5, 12);
        assert_eq!(gd_step(&net, &batch, 0.0).unwrap(), net);
    }

    #[test]
    fn one_parameter_step() {
        let widths = w(&[1, 1]);
        let mut p = Params::zeros(&widths);
        let w0 = 0.75;
        p.weights[0] = Matrix::from_rows(&[vec![w0]]).unwrap();
        let net = RadialNetwork::new(widths, p, vec![RadialProfile::Identity]).unwrap();
        let batch = Batch::new(vec![vec![1.0]], vec![vec![0.0]]).unwrap();
        let stepped = gd_step(&net, &batch, 0.1).unwrap();
        assert!((stepped.params().weights[0][(0, 0)] - (w0 - 0.2 * w0)).abs() < 1e-15);
    }

    #[test]
    fn projected_step_lands_in_interpolating_space() {
        let net = random_net(&[2, 5, 9, 2], SIG, 13);
        let batch = random_batch(2, 2, 10, 14);
        let stepped = projected_gd_step(&net, &batch, 0.05).unwrap();
        let d = crate::compress::interpolating_defect(&stepped.merged(), net.widths()).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn projected_equals_plain_when_nothing_to_project() {
        let net = random_net(&[1, 2, 3, 1], SIG, 15);
        let batch = random_batch(1, 1, 10, 16);
        assert_eq!(
            projected_gd_step(&net, &batch, 0.05).unwrap(),
            gd_step(&net, &batch, 0.05).unwrap()
        );
    }

    #[test]
    fn counterexample_gap_sign() {
        let (eta, j) = (0.1, 0.7);
        let gap = counterexample_gap([0.3, -0.2, 1.1, 0.4, 0.0, 0.0, 0.5, -0.6, 0.9, j], eta).unwrap();
        assert!((gap + 2.0 * eta * j * j).abs() <= 1e-12, "{gap}");
    }

    #[test]
    fn counterexample_objective_formula() {
        let p = [0.3, -0.2, 1.1, 0.4, 0.25, -0.5, 0.5, -0.6, 0.9, 0.7];
        let [a, b, c, d, e, f, g, h, i, j] = p;
        let net = counterexample_net(p).unwrap();
        let want = h * (a + b) + i * (c + d) + j * (e + f) + g;
        assert!((net.feedforward(&[1.0]).unwrap()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn train_zero_epochs_and_determinism() {
        let net = random_net(&[1, 6, 7, 1], SIG, 17);
        let batch = gauss_batch();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(&net, &batch, &cfg).unwrap();
        assert_eq!(out.net, net);
        assert!(out.history.is_empty());
        let cfg = TrainConfig {
            epochs: 50,
            ..TrainConfig::default()
        };
        let a = train(&net, &batch, &cfg).unwrap();
        let b = train(&net, &batch, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.net, b.net);
    }

    #[test]
    fn train_reduces_loss_on_gaussian() {
        let widths = w(&[1, 6, 7, 1]);
        let net = init(widths.clone(), RadialNetwork::uniform_profiles(&widths, SIG), 0).unwrap();
        let out = train(&net, &gauss_batch(), &TrainConfig::default()).unwrap();
        assert!(out.final_loss.is_finite());
        assert!(out.final_loss < out.history[0]);
    }

    #[test]
    fn train_stops_at_target() {
        let net = random_net(&[1, 3, 1], SIG, 18);
        let batch = gauss_batch();
        let l0 = loss(&net, &batch).unwrap();
        let cfg = TrainConfig {
            epochs: 10,
            target_loss: Some(l0 + 1.0),
            ..TrainConfig::default()
        };
        let out = train(&net, &batch, &cfg).unwrap();
        assert_eq!(out.reached_target, Some(true));
        assert!(out.history.is_empty());
    }

    #[test]
    fn loss_kinds_scale() {
        let net = random_net(&[2, 3, 2], SIG, 4);
        let batch = Batch::new(
            (0..5).map(|j| vec![j as f64 * 0.3, 1.0 - j as f64 * 0.2]).collect(),
            (0..5).map(|j| vec![0.1 * j as f64, 0.5]).collect(),
        )
        .unwrap();
        let (sse, g) = loss_and_grad(&net, &batch, Loss::Sse).unwrap();
        let (mean, gm) = loss_and_grad(&net, &batch, Loss::MeanSse).unwrap();
        let (mse, gmse) = loss_and_grad(&net, &batch, Loss::Mse).unwrap();
        assert!((mean - sse / 5.0).abs() <= 1e-15 * sse);
        assert!((mse - sse / 10.0).abs() <= 1e-15 * sse);
        assert!((loss_with(&net, &batch, Loss::Mse).unwrap() - mse).abs() <= 1e-15 * sse);
        let scaled = Params::zeros(net.widths()).axpy(0.1, &g);
        assert!(gmse.max_abs_diff(&scaled) <= 1e-15);
        assert!(gm.max_abs_diff(&Params::zeros(net.widths()).axpy(0.2, &g)) <= 1e-15);
    }

    #[test]
    fn projected_only_check_agrees() {
        let net = random_net(&[1, 4, 5, 1], SIG, 8);
        let batch = gauss_batch();
        let a = verify_thm4(&net, &batch, 0.01, 5, &[5]).unwrap();
        let b = verify_thm4_projected(&net, &batch, 0.01, 5, &[5]).unwrap();
        assert_eq!(a.loss_gap, b.loss_gap);
        assert_eq!(a.max_projected_vs_reduced, b.max_projected_vs_reduced);
        assert!(b.max_gd_equivariance.is_none());
        assert!(b.checkpoints[0].gd_equivariance.is_none());
    }

    #[test]
    fn divergence_is_reported() {
        let widths = w(&[1, 1]);
        let mut p = Params::zeros(&widths);
        p.weights[0] = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let net = RadialNetwork::new(widths, p, vec![RadialProfile::Identity]).unwrap();
        let batch = Batch::new(vec![vec![10.0]], vec![vec![0.0]]).unwrap();
        let cfg = TrainConfig {
            learning_rate: 10.0,
            epochs: 500,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&net, &batch, &cfg), Err(Error::Divergence { .. })));
    }

    #[test]
    fn projected_reduced_base_case() {
        let net = random_net(&[1, 6, 7, 1], SIG, 19);
        let rep = verify_thm4(&net, &gauss_batch(), 0.01, 0, &[0]).unwrap();
        assert!(rep.max_gd_equivariance.unwrap() <= 1e-9);
        assert!(rep.max_projected_vs_reduced <= 1e-9);
        assert!(rep.loss_gap <= 1e-9);
    }

    #[test]
    fn projected_reduced_identities_2592() {
        let net = random_net(&[2, 5, 9, 2], SIG, 20);
        let batch = random_batch(2, 2, 30, 21);
        let rep = verify_thm4(&net, &batch, 0.01, 25, &[25]).unwrap();
        assert!(rep.max_gd_equivariance.unwrap() <= 1e-6, "{rep:?}");
        assert!(rep.max_projected_vs_reduced <= 1e-6, "{rep:?}");
    }

    #[test]
    fn parallel_chunking_matches_sequential_sum() {
        let net = random_net(&[2, 4, 2], SIG, 22);
        let batch = random_batch(2, 2, 3 * CHUNK + 5, 23);
        let (_, g) = loss_and_grad(&net, &batch, Loss::Sse).unwrap();
        let mut seq = Params::zeros(net.widths());
        for (x, y) in batch.inputs.iter().zip(&batch.targets) {
            let one = Batch::new(vec![x.clone()], vec![y.clone()]).unwrap();
            seq = seq.axpy(1.0, &grad(&net, &one).unwrap());
        }
        assert!(g.max_abs_diff(&seq) <= 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn gd_commutes_with_orthogonal_action(seed in any::<u64>(), k in 1usize..=50) {
            let net = random_net(&[2, 4, 5, 2], RadialProfile::Squashing, seed);
            let batch = random_batch(2, 2, 12, seed ^ 1);
            let q = OrthTuple::random(net.widths(), &mut ChaCha8Rng::seed_from_u64(seed ^ 2));
            let mut a = net.with_params(apply_orth(&q, net.params()).unwrap()).unwrap();
            let mut b = net.clone();
            for _ in 0..k {
                a = gd_step(&a, &batch, 0.01).unwrap();
                b = gd_step(&b, &batch, 0.01).unwrap();
            }
            let b_moved = apply_orth(&q, b.params()).unwrap();
            prop_assert!(a.params().max_abs_diff(&b_moved) <= 1e-7);
        }

        #[test]
        fn counterexample_gap_is_minus_two_eta_j_squared(
            p in prop::array::uniform10(-2.0f64..2.0),
            eta in 0.001f64..0.5,
        ) {
            let mut p = p;
            p[4] = 0.0;
            p[5] = 0.0;
            let gap = counterexample_gap(p, eta).unwrap();
            prop_assert!((gap + 2.0 * eta * p[9] * p[9]).abs() <= 1e-10);
        }
    }
}
