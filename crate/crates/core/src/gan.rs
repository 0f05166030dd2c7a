//! Numeric adversarial objectives: minimax value, conditional residual
//! variant, discriminator and generator losses with analytic gradients, the
//! soft/noisy label scheme, and a toy linear residual trainer that exhibits
//! the zero-mapping behaviour of adversarial residual learning.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Probabilities are clamped to [EPS, 1-EPS] before logs.
pub const EPS: f64 = 1e-7;

fn clamp_prob(p: f64) -> Result<f64> {
    if !p.is_finite() || !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("probability {p} outside [0,1]")));
    }
    Ok(p.clamp(EPS, 1.0 - EPS))
}

fn mean_log(values: &[f64], f: impl Fn(f64) -> f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("empty probability list".into()));
    }
    let mut sum = 0.0;
    for &v in values {
        sum += f(clamp_prob(v)?);
    }
    Ok(sum / values.len() as f64)
}

/// Empirical minimax game value:
/// mean(log d_real) + mean(log(1 - d_fake)).
pub fn minimax_value(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    Ok(mean_log(d_real, f64::ln)? + mean_log(d_fake, |p| (1.0 - p).ln())?)
}

/// The residual-generator game value: identical in form to `minimax_value`,
/// with the fake term evaluated at discriminator outputs over
/// F_s + G(F_s|f). Use `compose_residual` to build those inputs.
pub fn residual_gan_value(d_large: &[f64], d_small_plus_residual: &[f64]) -> Result<f64> {
    minimax_value(d_large, d_small_plus_residual)
}

/// Element-wise F_s + G(F_s|f) with a shape check.
pub fn compose_residual(small: &[f64], residual: &[f64]) -> Result<Vec<f64>> {
    if small.len() != residual.len() {
        return Err(Error::Shape(format!(
            "small object feature dim {} vs residual dim {}",
            small.len(),
            residual.len()
        )));
    }
    Ok(small.iter().zip(residual).map(|(s, r)| s + r).collect())
}

/// Sign convention for the adversarial branch loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaMode {
    /// Standard binary cross-entropy: -log D(F_l) - log(1 - D(fake)).
    Default,
    /// The same expression with the fake term sign-flipped:
    /// -log D(F_l) + log(1 - D(fake)). Degenerate (zero at 0.5/0.5);
    /// kept for comparison against the standard form.
    SignFlipped,
}

/// Adversarial branch loss for one (large, fake) pair.
pub fn discriminator_loss_la(d_large: f64, d_fake: f64, mode: LaMode) -> Result<f64> {
    let dl = clamp_prob(d_large)?;
    let df = clamp_prob(d_fake)?;
    Ok(match mode {
        LaMode::Default => -dl.ln() - (1.0 - df).ln(),
        LaMode::SignFlipped => -dl.ln() + (1.0 - df).ln(),
    })
}

/// Analytic gradient of `discriminator_loss_la` wrt (d_large, d_fake).
pub fn discriminator_loss_la_grad(d_large: f64, d_fake: f64, mode: LaMode) -> Result<(f64, f64)> {
    let dl = clamp_prob(d_large)?;
    let df = clamp_prob(d_fake)?;
    Ok(match mode {
        LaMode::Default => (-1.0 / dl, 1.0 / (1.0 - df)),
        LaMode::SignFlipped => (-1.0 / dl, -1.0 / (1.0 - df)),
    })
}

/// Non-saturating generator loss -log(d_fake); minimizing it maximizes
/// log D over generated samples.
pub fn generator_loss(d_fake: f64) -> Result<f64> {
    Ok(-clamp_prob(d_fake)?.ln())
}

/// Analytic derivative of `generator_loss` wrt d_fake.
pub fn generator_loss_grad(d_fake: f64) -> Result<f64> {
    Ok(-1.0 / clamp_prob(d_fake)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    Real,
    Fake,
}

/// Soft/noisy discriminator targets: uniform in [0.8, 1.0] for real samples,
/// [0.0, 0.2] for fake ones.
pub fn soft_noisy_labels(kind: LabelKind, n: usize, rng: &mut Rng) -> Vec<f64> {
    let range = match kind {
        LabelKind::Real => 0.8..=1.0,
        LabelKind::Fake => 0.0..=0.2,
    };
    (0..n).map(|_| rng.gen_range(range.clone())).collect()
}

/// Central finite differences of a scalar function.
pub fn central_difference_gradient<F>(f: F, point: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = Vec::with_capacity(point.len());
    let mut x = point.to_vec();
    for i in 0..point.len() {
        x[i] = point[i] + h;
        let fp = f(&x);
        x[i] = point[i] - h;
        let fm = f(&x);
        x[i] = point[i];
        grad.push((fp - fm) / (2.0 * h));
    }
    grad
}

/// Relative error between analytic and numeric gradients, with a unit floor
/// so near-zero components compare absolutely.
pub fn gradient_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Linear residual generator G(x|f) = A x + C f + b and logistic
/// discriminator D(x) = sigmoid(w.x + c).
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModelParams {
    pub gen_matrix: Vec<Vec<f64>>,
    pub gen_condition_matrix: Vec<Vec<f64>>,
    pub gen_bias: Vec<f64>,
    pub disc_weights: Vec<f64>,
    pub disc_bias: f64,
}

impl ToyModelParams {
    /// Zero generator, small random discriminator weights.
    pub fn init(dim: usize, rng: &mut Rng) -> Self {
        ToyModelParams {
            gen_matrix: vec![vec![0.0; dim]; dim],
            gen_condition_matrix: vec![vec![0.0; dim]; dim],
            gen_bias: vec![0.0; dim],
            disc_weights: (0..dim).map(|_| rng.gen_range(-0.1..0.1)).collect(),
            disc_bias: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.gen_bias.len()
    }

    /// The learned residual G(x|f).
    pub fn residual(&self, x: &[f64], condition: Option<&[f64]>) -> Result<Vec<f64>> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::Shape(format!(
                "input dim {} vs model dim {d}",
                x.len()
            )));
        }
        let mut out = self.gen_bias.clone();
        for (i, row) in self.gen_matrix.iter().enumerate() {
            out[i] += dot(row, x);
        }
        if let Some(f) = condition {
            if f.len() != d {
                return Err(Error::Shape(format!(
                    "condition dim {} vs model dim {d}",
                    f.len()
                )));
            }
            for (i, row) in self.gen_condition_matrix.iter().enumerate() {
                out[i] += dot(row, f);
            }
        }
        Ok(out)
    }

    /// F_s + G(F_s|f), the super-resolved candidate the discriminator sees.
    pub fn super_resolve(&self, x: &[f64], condition: Option<&[f64]>) -> Result<Vec<f64>> {
        compose_residual(x, &self.residual(x, condition)?)
    }

    pub fn discriminate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "input dim {} vs model dim {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(sigmoid(dot(&self.disc_weights, x) + self.disc_bias).clamp(EPS, 1.0 - EPS))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    /// Discriminator step size.
    pub learning_rate: f64,
    /// Generator step size; a slower generator keeps the alternating
    /// dynamics stable.
    pub generator_learning_rate: f64,
    pub momentum: f64,
    pub iterations: usize,
    /// Verify analytic gradients against central finite differences at
    /// initialization before training.
    pub gradcheck: bool,
    pub gradcheck_step: f64,
    pub gradcheck_tolerance: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 0.1,
            generator_learning_rate: 0.005,
            momentum: 0.0,
            iterations: 1500,
            gradcheck: true,
            gradcheck_step: 1e-5,
            gradcheck_tolerance: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub params: ToyModelParams,
    /// (discriminator loss, generator loss) per iteration.
    pub history: Vec<(f64, f64)>,
}

/// One full batch of paired toy samples.
pub struct Batch<'a> {
    pub large: &'a [Vec<f64>],
    pub small: &'a [Vec<f64>],
    pub conditions: Option<&'a [Vec<f64>]>,
}

impl<'a> Batch<'a> {
    fn len(&self) -> usize {
        self.large.len().max(self.small.len())
    }

    fn pair(&self, i: usize) -> (&'a [f64], &'a [f64], Option<&'a [f64]>) {
        let large = &self.large[i % self.large.len()];
        let j = i % self.small.len();
        let cond = self.conditions.map(|c| c[j % c.len()].as_slice());
        (large, &self.small[j], cond)
    }
}

/// Mean default-mode adversarial loss over a batch.
pub fn disc_loss(params: &ToyModelParams, batch: &Batch) -> Result<f64> {
    let mut sum = 0.0;
    for i in 0..batch.len() {
        let (large, small, cond) = batch.pair(i);
        let y = params.super_resolve(small, cond)?;
        sum += discriminator_loss_la(
            params.discriminate(large)?,
            params.discriminate(&y)?,
            LaMode::Default,
        )?;
    }
    Ok(sum / batch.len() as f64)
}

/// Mean non-saturating generator loss over a batch.
pub fn gen_loss(params: &ToyModelParams, batch: &Batch) -> Result<f64> {
    let mut sum = 0.0;
    for i in 0..batch.len() {
        let (_, small, cond) = batch.pair(i);
        let y = params.super_resolve(small, cond)?;
        sum += generator_loss(params.discriminate(&y)?)?;
    }
    Ok(sum / batch.len() as f64)
}

/// Full-batch analytic gradient of the discriminator loss wrt (w, c).
pub fn disc_grad(params: &ToyModelParams, batch: &Batch) -> Result<(Vec<f64>, f64)> {
    let d = params.dim();
    let mut gw = vec![0.0; d];
    let mut gc = 0.0;
    let n = batch.len() as f64;
    for i in 0..batch.len() {
        let (large, small, cond) = batch.pair(i);
        let y = params.super_resolve(small, cond)?;
        // d/dz of -log sigmoid(z) is -(1 - sigmoid(z))
        let dl = params.discriminate(large)?;
        for (g, x) in gw.iter_mut().zip(large) {
            *g += -(1.0 - dl) * x / n;
        }
        gc += -(1.0 - dl) / n;
        // d/dz of -log(1 - sigmoid(z)) is sigmoid(z)
        let df = params.discriminate(&y)?;
        for (g, x) in gw.iter_mut().zip(&y) {
            *g += df * x / n;
        }
        gc += df / n;
    }
    Ok((gw, gc))
}

/// Full-batch analytic gradient of the generator loss wrt (A, C, b).
#[allow(clippy::type_complexity)]
pub fn gen_grad(
    params: &ToyModelParams,
    batch: &Batch,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>)> {
    let d = params.dim();
    let mut ga = vec![vec![0.0; d]; d];
    let mut gcm = vec![vec![0.0; d]; d];
    let mut gb = vec![0.0; d];
    let n = batch.len() as f64;
    for i in 0..batch.len() {
        let (_, small, cond) = batch.pair(i);
        let y = params.super_resolve(small, cond)?;
        let dy = params.discriminate(&y)?;
        // dL/dy = -(1 - D(y)) w
        let scale = -(1.0 - dy) / n;
        for r in 0..d {
            let delta = scale * params.disc_weights[r];
            gb[r] += delta;
            for c in 0..d {
                ga[r][c] += delta * small[c];
                if let Some(f) = cond {
                    gcm[r][c] += delta * f[c];
                }
            }
        }
    }
    Ok((ga, gcm, gb))
}

fn flatten_gen(params: &ToyModelParams) -> Vec<f64> {
    let mut v = Vec::new();
    for row in &params.gen_matrix {
        v.extend_from_slice(row);
    }
    for row in &params.gen_condition_matrix {
        v.extend_from_slice(row);
    }
    v.extend_from_slice(&params.gen_bias);
    v
}

fn unflatten_gen(params: &mut ToyModelParams, v: &[f64]) {
    let d = params.dim();
    let mut it = v.iter();
    for row in &mut params.gen_matrix {
        for x in row.iter_mut() {
            *x = *it.next().unwrap();
        }
    }
    for row in &mut params.gen_condition_matrix {
        for x in row.iter_mut() {
            *x = *it.next().unwrap();
        }
    }
    for x in &mut params.gen_bias {
        *x = *it.next().unwrap();
    }
    let _ = d;
}

fn verify_gradients(params: &ToyModelParams, batch: &Batch, config: &TrainingConfig) -> Result<()> {
    // discriminator side
    let (gw, gc) = disc_grad(params, batch)?;
    let mut analytic = gw.clone();
    analytic.push(gc);
    let mut point = params.disc_weights.clone();
    point.push(params.disc_bias);
    let base = params.clone();
    let numeric = central_difference_gradient(
        |v| {
            let mut p = base.clone();
            p.disc_weights = v[..v.len() - 1].to_vec();
            p.disc_bias = v[v.len() - 1];
            disc_loss(&p, batch).unwrap()
        },
        &point,
        config.gradcheck_step,
    );
    let err = gradient_relative_error(&analytic, &numeric);
    if err > config.gradcheck_tolerance {
        return Err(Error::Domain(format!(
            "discriminator gradient check failed: relative error {err:.3e}"
        )));
    }

    // generator side
    let (ga, gcm, gb) = gen_grad(params, batch)?;
    let mut analytic = Vec::new();
    for row in &ga {
        analytic.extend_from_slice(row);
    }
    for row in &gcm {
        analytic.extend_from_slice(row);
    }
    analytic.extend_from_slice(&gb);
    let point = flatten_gen(params);
    let numeric = central_difference_gradient(
        |v| {
            let mut p = base.clone();
            unflatten_gen(&mut p, v);
            gen_loss(&p, batch).unwrap()
        },
        &point,
        config.gradcheck_step,
    );
    let err = gradient_relative_error(&analytic, &numeric);
    if err > config.gradcheck_tolerance {
        return Err(Error::Domain(format!(
            "generator gradient check failed: relative error {err:.3e}"
        )));
    }
    Ok(())
}

/// Alternating optimization of the toy residual GAN: the discriminator takes
/// one momentum-SGD step on the default-mode adversarial loss, then the
/// generator takes one step on the non-saturating loss through
/// F_s + G(F_s|f). Deterministic given the RNG.
pub fn toy_residual_training(
    large_samples: &[Vec<f64>],
    small_samples: &[Vec<f64>],
    conditions: Option<&[Vec<f64>]>,
    config: &TrainingConfig,
    rng: &mut Rng,
) -> Result<TrainingRun> {
    if large_samples.is_empty() || small_samples.is_empty() {
        return Err(Error::Shape("empty sample set".into()));
    }
    let d = large_samples[0].len();
    for s in large_samples.iter().chain(small_samples) {
        if s.len() != d {
            return Err(Error::Shape("inconsistent sample dimensions".into()));
        }
    }
    let batch = Batch {
        large: large_samples,
        small: small_samples,
        conditions,
    };
    let mut params = ToyModelParams::init(d, rng);
    if config.gradcheck {
        verify_gradients(&params, &batch, config)?;
    }

    let mut vel_w = vec![0.0; d];
    let mut vel_c = 0.0;
    let mut vel_gen = vec![0.0; flatten_gen(&params).len()];
    let mut history = Vec::with_capacity(config.iterations);

    for iter in 0..config.iterations {
        // discriminator step
        let (gw, gc) = disc_grad(&params, &batch)?;
        for j in 0..d {
            vel_w[j] = config.momentum * vel_w[j] - config.learning_rate * gw[j];
            params.disc_weights[j] += vel_w[j];
        }
        vel_c = config.momentum * vel_c - config.learning_rate * gc;
        params.disc_bias += vel_c;

        // generator step
        let (ga, gcm, gb) = gen_grad(&params, &batch)?;
        let mut flat_grad = Vec::with_capacity(vel_gen.len());
        for row in &ga {
            flat_grad.extend_from_slice(row);
        }
        for row in &gcm {
            flat_grad.extend_from_slice(row);
        }
        flat_grad.extend_from_slice(&gb);
        let mut flat = flatten_gen(&params);
        for j in 0..flat.len() {
            vel_gen[j] =
                config.momentum * vel_gen[j] - config.generator_learning_rate * flat_grad[j];
            flat[j] += vel_gen[j];
        }
        unflatten_gen(&mut params, &flat);

        let ld = disc_loss(&params, &batch)?;
        let lg = gen_loss(&params, &batch)?;
        if !ld.is_finite() || !lg.is_finite() {
            return Err(Error::Diverged { iteration: iter });
        }
        history.push((ld, lg));
    }
    Ok(TrainingRun { params, history })
}

/// Draws `n` samples from an isotropic Gaussian cluster.
pub fn gaussian_cluster(mean: &[f64], sigma: f64, n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    (0..n)
        .map(|_| mean.iter().map(|m| m + normal.sample(rng)).collect())
        .collect()
}
