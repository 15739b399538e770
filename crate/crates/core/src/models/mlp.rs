//! Two-hidden-layer MLP trained by minibatch SGD with exact
//! backpropagation, optional batch normalization, and BCE /
//! BCE+MMCE / group-DRO batch objectives.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // trait needed for float math under no_std
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::models::{inference_matrix, GroupMode, TrainData};
use crate::{clip_unit, sigmoid};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.9;
const MMCE_SQRT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layer1_units: usize,
    pub layer2_units: usize,
    pub learning_rate: f64,
    pub l2_regularization: f64,
    pub batch_size: usize,
    pub num_epochs: usize,
    pub batch_norm: bool,
    /// Calibration loss weight (gamma).
    pub calibration_loss_weight: f64,
    /// Group-DRO exponentiated-gradient step size (eta_q).
    pub dro_eta: f64,
    /// Group-size adjustment C in `C / sqrt(n_g)`.
    pub dro_regularization: f64,
    pub mmce_kernel_width: f64,
}

impl Default for MlpParams {
    /// The starred default search point of the tuning grid.
    fn default() -> Self {
        MlpParams {
            layer1_units: 128,
            layer2_units: 64,
            learning_rate: 1e-3,
            l2_regularization: 1e-5,
            batch_size: 512,
            num_epochs: 30,
            batch_norm: true,
            calibration_loss_weight: 1e-2,
            dro_eta: 1e-3,
            dro_regularization: 1e-2,
            mmce_kernel_width: 0.4,
        }
    }
}

impl MlpParams {
    pub fn validate(&self) -> Result<()> {
        if self.layer1_units == 0 || self.layer2_units == 0 {
            return Err(Error::invalid_config("layer units must be >= 1"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::invalid_config("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid_config("batch size must be >= 1"));
        }
        if self.num_epochs == 0 {
            return Err(Error::invalid_config("num_epochs must be >= 1"));
        }
        if self.mmce_kernel_width <= 0.0 {
            return Err(Error::invalid_config("kernel width must be positive"));
        }
        Ok(())
    }
}

/// Batch objective selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpec {
    Bce,
    /// BCE plus `gamma` times the batch MMCE.
    BceMmce,
    /// Per-group losses with exponentiated-gradient group weights.
    /// `mmce_only` restricts the weights to the MMCE term.
    GroupDro {
        mmce_only: bool,
    },
}

/// All trainable parameters; also reused as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpWeights {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub gamma1: Vec<f64>,
    pub beta1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub gamma2: Vec<f64>,
    pub beta2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: f64,
}

impl MlpWeights {
    fn zeros_like(&self) -> MlpWeights {
        MlpWeights {
            w1: Matrix::zeros(self.w1.n_rows(), self.w1.n_cols()),
            b1: alloc::vec![0.0; self.b1.len()],
            gamma1: alloc::vec![0.0; self.gamma1.len()],
            beta1: alloc::vec![0.0; self.beta1.len()],
            w2: Matrix::zeros(self.w2.n_rows(), self.w2.n_cols()),
            b2: alloc::vec![0.0; self.b2.len()],
            gamma2: alloc::vec![0.0; self.gamma2.len()],
            beta2: alloc::vec![0.0; self.beta2.len()],
            w3: alloc::vec![0.0; self.w3.len()],
            b3: 0.0,
        }
    }

    /// Seeded initialization; public so gradient tests can build
    /// weight sets directly.
    pub fn init_seeded(p: usize, u1: usize, u2: usize, seed: u64) -> MlpWeights {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init(p, u1, u2, &mut rng)
    }

    fn init(p: usize, u1: usize, u2: usize, rng: &mut ChaCha8Rng) -> MlpWeights {
        let mut uniform = |fan_in: usize, count: usize| -> Vec<f64> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..count).map(|_| rng.gen_range(-bound..bound)).collect()
        };
        MlpWeights {
            w1: Matrix::new(p, u1, uniform(p, p * u1)).unwrap(),
            b1: alloc::vec![0.0; u1],
            gamma1: alloc::vec![1.0; u1],
            beta1: alloc::vec![0.0; u1],
            w2: Matrix::new(u1, u2, uniform(u1, u1 * u2)).unwrap(),
            b2: alloc::vec![0.0; u2],
            gamma2: alloc::vec![1.0; u2],
            beta2: alloc::vec![0.0; u2],
            w3: uniform(u2, u2),
            b3: 0.0,
        }
    }

    /// Total number of scalar parameters; with `get`/`set` this gives
    /// finite-difference tests a flat view.
    pub fn param_count(&self) -> usize {
        self.w1.n_rows() * self.w1.n_cols()
            + self.b1.len()
            + self.gamma1.len()
            + self.beta1.len()
            + self.w2.n_rows() * self.w2.n_cols()
            + self.b2.len()
            + self.gamma2.len()
            + self.beta2.len()
            + self.w3.len()
            + 1
    }

    fn slot(&mut self, idx: usize) -> &mut f64 {
        let sections: [&mut [f64]; 9] = [
            self.w1.as_mut_slice(),
            &mut self.b1,
            &mut self.gamma1,
            &mut self.beta1,
            self.w2.as_mut_slice(),
            &mut self.b2,
            &mut self.gamma2,
            &mut self.beta2,
            &mut self.w3,
        ];
        let mut offset = idx;
        for section in sections {
            if offset < section.len() {
                return &mut section[offset];
            }
            offset -= section.len();
        }
        debug_assert_eq!(offset, 0);
        &mut self.b3
    }

    pub fn get(&mut self, idx: usize) -> f64 {
        *self.slot(idx)
    }

    pub fn set(&mut self, idx: usize, value: f64) {
        *self.slot(idx) = value;
    }
}

/// Per-layer batch-normalization statistics of one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnStats {
    pub mean1: Vec<f64>,
    pub var1: Vec<f64>,
    pub mean2: Vec<f64>,
    pub var2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub weights: MlpWeights,
    pub running: BnStats,
    pub batch_norm: bool,
    pub n_features: usize,
    pub group_mode: GroupMode,
    pub n_groups: usize,
    pub params: MlpParams,
    pub seed: u64,
}

impl MlpModel {
    pub fn predict(&self, features: &Matrix, groups: Option<&[usize]>) -> Result<Vec<f64>> {
        let matrix = inference_matrix(
            features,
            groups,
            self.group_mode,
            self.n_groups,
            self.n_features,
        )?;
        let scores = forward_eval(&self.weights, &self.running, self.batch_norm, &matrix);
        Ok(scores)
    }
}

/// Dense layer: `out[m x units] = x[m x d] . w[d x units] + b`.
fn linear(x: &Matrix, w: &Matrix, b: &[f64]) -> Matrix {
    let m = x.n_rows();
    let d = x.n_cols();
    let units = w.n_cols();
    let mut out = Matrix::zeros(m, units);
    for i in 0..m {
        let row = x.row(i);
        let out_row = out.row_mut(i);
        out_row.copy_from_slice(b);
        for (k, &xv) in row.iter().enumerate().take(d) {
            if xv == 0.0 {
                continue;
            }
            let wrow = w.row(k);
            for (o, &wv) in out_row.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
    }
    out
}

struct LayerCache {
    normalized: Matrix, // x-hat (batch norm) or copy of pre
    post: Matrix,       // after scale/shift (== pre without bn)
    active: Matrix,     // relu output
    mean: Vec<f64>,
    var: Vec<f64>,
}

fn batch_layer(
    x: &Matrix,
    w: &Matrix,
    b: &[f64],
    gamma: &[f64],
    beta: &[f64],
    batch_norm: bool,
) -> LayerCache {
    let pre = linear(x, w, b);
    let m = pre.n_rows();
    let units = pre.n_cols();
    let (mut mean, mut var) = (alloc::vec![0.0; units], alloc::vec![1.0; units]);
    let mut normalized = pre.clone();
    let mut post = pre.clone();
    if batch_norm {
        for j in 0..units {
            let mu = (0..m).map(|i| pre.get(i, j)).sum::<f64>() / m as f64;
            let v = (0..m)
                .map(|i| (pre.get(i, j) - mu) * (pre.get(i, j) - mu))
                .sum::<f64>()
                / m as f64;
            mean[j] = mu;
            var[j] = v;
            let denom = (v + BN_EPS).sqrt();
            for i in 0..m {
                let xhat = (pre.get(i, j) - mu) / denom;
                normalized.set(i, j, xhat);
                post.set(i, j, gamma[j] * xhat + beta[j]);
            }
        }
    }
    let mut active = post.clone();
    for i in 0..m {
        for j in 0..units {
            if active.get(i, j) < 0.0 {
                active.set(i, j, 0.0);
            }
        }
    }
    LayerCache {
        normalized,
        post,
        active,
        mean,
        var,
    }
}

fn eval_layer(
    x: &Matrix,
    w: &Matrix,
    b: &[f64],
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    batch_norm: bool,
) -> Matrix {
    let mut out = linear(x, w, b);
    let m = out.n_rows();
    for i in 0..m {
        for j in 0..out.n_cols() {
            let mut v = out.get(i, j);
            if batch_norm {
                v = gamma[j] * (v - mean[j]) / (var[j] + BN_EPS).sqrt() + beta[j];
            }
            out.set(i, j, v.max(0.0));
        }
    }
    out
}

fn forward_eval(weights: &MlpWeights, running: &BnStats, batch_norm: bool, x: &Matrix) -> Vec<f64> {
    let a1 = eval_layer(
        x,
        &weights.w1,
        &weights.b1,
        &weights.gamma1,
        &weights.beta1,
        &running.mean1,
        &running.var1,
        batch_norm,
    );
    let a2 = eval_layer(
        &a1,
        &weights.w2,
        &weights.b2,
        &weights.gamma2,
        &weights.beta2,
        &running.mean2,
        &running.var2,
        batch_norm,
    );
    (0..a2.n_rows())
        .map(|i| {
            let z: f64 = a2
                .row(i)
                .iter()
                .zip(&weights.w3)
                .map(|(a, w)| a * w)
                .sum::<f64>()
                + weights.b3;
            clip_unit(sigmoid(z))
        })
        .collect()
}

/// Frozen per-batch objective configuration. Group weights are
/// mean-one multipliers (`G * q_g`), frozen before the gradient step.
#[derive(Debug, Clone)]
pub struct BatchLossConfig<'a> {
    pub loss: LossSpec,
    pub gamma: f64,
    pub kernel_width: f64,
    pub l2: f64,
    pub batch_norm: bool,
    /// One multiplier per group id; ones disable reweighting.
    pub group_multipliers: &'a [f64],
}

/// MMCE of one sample pool plus the loss gradient with respect to the
/// pool's scores, scaled by `coef`, accumulated into `dscore`.
fn mmce_pool(
    scores: &[f64],
    labels: &[u8],
    pool: &[usize],
    width: f64,
    coef: f64,
    dscore: &mut [f64],
) -> f64 {
    let m = pool.len() as f64;
    let conf: Vec<f64> = pool
        .iter()
        .map(|&i| scores[i].max(1.0 - scores[i]))
        .collect();
    let a: Vec<f64> = pool
        .iter()
        .zip(&conf)
        .map(|(&i, &r)| {
            let correct = u8::from(scores[i] >= 0.5) == labels[i];
            f64::from(correct) - r
        })
        .collect();
    let mut total = 0.0;
    for (li, &ai) in a.iter().enumerate() {
        for (lj, &aj) in a.iter().enumerate() {
            total += ai * aj * (-(conf[li] - conf[lj]).abs() / width).exp();
        }
    }
    let t = total / (m * m);
    let value = t.max(0.0) + MMCE_SQRT_EPS;
    let mmce = value.sqrt();
    if t > 0.0 && coef != 0.0 {
        let dv_dt = 0.5 / mmce;
        for (l, &idx) in pool.iter().enumerate() {
            let mut kernel_sum = 0.0;
            let mut signed_sum = 0.0;
            for (j, &aj) in a.iter().enumerate() {
                let k = (-(conf[l] - conf[j]).abs() / width).exp();
                kernel_sum += aj * k;
                let sign = if conf[l] > conf[j] {
                    1.0
                } else if conf[l] < conf[j] {
                    -1.0
                } else {
                    0.0
                };
                signed_sum += aj * k * sign;
            }
            let dt_dr = 2.0 / (m * m) * (-kernel_sum - a[l] / width * signed_sum);
            let dr_ds = if scores[idx] >= 0.5 { 1.0 } else { -1.0 };
            dscore[idx] += coef * dv_dt * dt_dr * dr_ds;
        }
    }
    mmce
}

/// Loss and exact parameter gradients of one minibatch under a frozen
/// objective configuration. Returns the batch loss, the gradients, the
/// batch-normalization statistics, and how many MMCE pools were
/// skipped for having a single class.
pub fn mlp_batch_loss(
    weights: &MlpWeights,
    x: &Matrix,
    y: &[u8],
    groups: &[usize],
    cfg: &BatchLossConfig,
) -> Result<(f64, MlpWeights, BnStats, usize)> {
    let m = x.n_rows();
    if m == 0 || y.len() != m || groups.len() != m {
        return Err(Error::invalid_input(
            "batch arrays must be aligned and nonempty",
        ));
    }

    let layer1 = batch_layer(
        x,
        &weights.w1,
        &weights.b1,
        &weights.gamma1,
        &weights.beta1,
        cfg.batch_norm,
    );
    let layer2 = batch_layer(
        &layer1.active,
        &weights.w2,
        &weights.b2,
        &weights.gamma2,
        &weights.beta2,
        cfg.batch_norm,
    );
    let logits: Vec<f64> = (0..m)
        .map(|i| {
            layer2
                .active
                .row(i)
                .iter()
                .zip(&weights.w3)
                .map(|(a, w)| a * w)
                .sum::<f64>()
                + weights.b3
        })
        .collect();
    let scores: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();

    // Per-sample BCE weight: group multiplier except when DRO is
    // restricted to the MMCE term.
    let bce_weight = |i: usize| -> f64 {
        match cfg.loss {
            LossSpec::GroupDro { mmce_only: true } => 1.0,
            _ => cfg.group_multipliers[groups[i]],
        }
    };

    let mut loss = 0.0;
    let mut dscore = alloc::vec![0.0f64; m];
    for i in 0..m {
        let p = clip_unit(scores[i]);
        let yv = y[i] as f64;
        let w = bce_weight(i);
        loss += w * -(yv * p.ln() + (1.0 - yv) * (1.0 - p).ln()) / m as f64;
        dscore[i] += w * (p - yv) / (p * (1.0 - p)) / m as f64;
    }

    let mut skipped_pools = 0usize;
    if cfg.gamma > 0.0 {
        let pools: Vec<(Vec<usize>, f64)> = match cfg.loss {
            LossSpec::Bce => Vec::new(),
            LossSpec::BceMmce => {
                alloc::vec![((0..m).collect(), cfg.gamma)]
            }
            LossSpec::GroupDro { .. } => {
                let mut ids: Vec<usize> = groups.to_vec();
                ids.sort_unstable();
                ids.dedup();
                ids.into_iter()
                    .map(|g| {
                        let pool: Vec<usize> = (0..m).filter(|&i| groups[i] == g).collect();
                        let share = pool.len() as f64 / m as f64;
                        let coef = cfg.gamma * share * cfg.group_multipliers[g];
                        (pool, coef)
                    })
                    .collect()
            }
        };
        for (pool, coef) in pools {
            let first = y[pool[0]];
            if pool.iter().all(|&i| y[i] == first) {
                skipped_pools += 1;
                continue;
            }
            let mmce = mmce_pool(&scores, y, &pool, cfg.kernel_width, coef, &mut dscore);
            loss += coef * mmce;
        }
    }

    // L2 penalty on weight matrices.
    let l2_term = |w: &Matrix| -> f64 {
        (0..w.n_rows())
            .map(|i| w.row(i).iter().map(|v| v * v).sum::<f64>())
            .sum()
    };
    loss += 0.5
        * cfg.l2
        * (l2_term(&weights.w1)
            + l2_term(&weights.w2)
            + weights.w3.iter().map(|v| v * v).sum::<f64>());

    if !loss.is_finite() {
        return Err(Error::fit_failed(format!(
            "non-finite batch loss {loss}; aborting training"
        )));
    }

    // ---- Backward pass ----
    let mut grads = weights.zeros_like();
    // d loss / d logit
    let dz: Vec<f64> = (0..m)
        .map(|i| dscore[i] * scores[i] * (1.0 - scores[i]))
        .collect();

    // Output layer.
    let mut da2 = Matrix::zeros(m, weights.w3.len());
    for i in 0..m {
        grads.b3 += dz[i];
        let a2row = layer2.active.row(i);
        for j in 0..weights.w3.len() {
            grads.w3[j] += dz[i] * a2row[j];
            da2.set(i, j, dz[i] * weights.w3[j]);
        }
    }
    for (g, w) in grads.w3.iter_mut().zip(&weights.w3) {
        *g += cfg.l2 * w;
    }

    // Hidden layers, back to front.
    let dx2 = backward_layer(
        &layer2,
        &layer1.active,
        &weights.w2,
        &weights.gamma2,
        cfg.batch_norm,
        &da2,
        &mut grads.w2,
        &mut grads.b2,
        &mut grads.gamma2,
        &mut grads.beta2,
        cfg.l2,
    );
    backward_layer(
        &layer1,
        x,
        &weights.w1,
        &weights.gamma1,
        cfg.batch_norm,
        &dx2,
        &mut grads.w1,
        &mut grads.b1,
        &mut grads.gamma1,
        &mut grads.beta1,
        cfg.l2,
    );

    let stats = BnStats {
        mean1: layer1.mean,
        var1: layer1.var,
        mean2: layer2.mean,
        var2: layer2.var,
    };
    Ok((loss, grads, stats, skipped_pools))
}

/// Backpropagates `dout` (gradient at the ReLU output) through one
/// linear(+BN)+ReLU layer; returns the gradient at the layer input.
#[allow(clippy::too_many_arguments)]
fn backward_layer(
    cache: &LayerCache,
    input: &Matrix,
    w: &Matrix,
    gamma: &[f64],
    batch_norm: bool,
    dout: &Matrix,
    dw: &mut Matrix,
    db: &mut [f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
    l2: f64,
) -> Matrix {
    let m = dout.n_rows();
    let units = dout.n_cols();

    // Through ReLU.
    let mut dpost = Matrix::zeros(m, units);
    for i in 0..m {
        for j in 0..units {
            if cache.post.get(i, j) > 0.0 {
                dpost.set(i, j, dout.get(i, j));
            }
        }
    }

    // Through batch norm (or straight through).
    let mut dpre = Matrix::zeros(m, units);
    if batch_norm {
        for j in 0..units {
            let denom = (cache.var[j] + BN_EPS).sqrt();
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for i in 0..m {
                let dy = dpost.get(i, j);
                sum_dy += dy;
                sum_dy_xhat += dy * cache.normalized.get(i, j);
                dgamma[j] += dy * cache.normalized.get(i, j);
                dbeta[j] += dy;
            }
            for i in 0..m {
                let dy = dpost.get(i, j);
                let xhat = cache.normalized.get(i, j);
                let du =
                    gamma[j] / denom * (dy - sum_dy / m as f64 - xhat * sum_dy_xhat / m as f64);
                dpre.set(i, j, du);
            }
        }
    } else {
        dpre = dpost;
    }

    // Through the linear map.
    for i in 0..m {
        let xrow = input.row(i);
        let drow = dpre.row(i);
        for (j, &dv) in drow.iter().enumerate() {
            if dv == 0.0 {
                continue;
            }
            db[j] += dv;
            for (k, &xv) in xrow.iter().enumerate() {
                dw.row_mut(k)[j] += dv * xv;
            }
        }
    }
    for k in 0..w.n_rows() {
        for j in 0..units {
            dw.row_mut(k)[j] += l2 * w.get(k, j);
        }
    }
    let mut dx = Matrix::zeros(m, w.n_rows());
    for i in 0..m {
        let drow = dpre.row(i);
        let dxrow = dx.row_mut(i);
        for (k, slot) in dxrow.iter_mut().enumerate() {
            let wrow = w.row(k);
            *slot = drow.iter().zip(wrow).map(|(d, wv)| d * wv).sum();
        }
    }
    dx
}

/// Training summary counters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MlpTrainReport {
    pub skipped_mmce_pools: usize,
    pub batches_run: usize,
}

/// Trains the MLP by seeded minibatch SGD. Under
/// `LossSpec::GroupDro`, group multipliers update once per batch from
/// the spec's per-group losses before the (frozen-weight) gradient
/// step.
pub fn mlp_train(
    data: &TrainData,
    params: &MlpParams,
    loss: LossSpec,
    group_mode: GroupMode,
    seed: u64,
) -> Result<(MlpModel, MlpTrainReport)> {
    params.validate()?;
    data.validate()?;
    let matrix = data.model_matrix(group_mode)?;
    let n = matrix.n_rows();
    let p = matrix.n_cols();
    let n_groups = data.n_groups.max(1);
    if matches!(loss, LossSpec::GroupDro { .. }) && data.groups.is_none() {
        return Err(Error::invalid_input(
            "group-DRO training requires group ids",
        ));
    }
    let groups: Vec<usize> = match data.groups {
        Some(g) => g.to_vec(),
        None => alloc::vec![0; n],
    };

    // Group sizes on the training split, for the C / sqrt(n_g) term.
    let mut group_sizes = alloc::vec![0usize; n_groups];
    for &g in &groups {
        group_sizes[g] += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = MlpWeights::init(p, params.layer1_units, params.layer2_units, &mut rng);
    let mut running = BnStats {
        mean1: alloc::vec![0.0; params.layer1_units],
        var1: alloc::vec![1.0; params.layer1_units],
        mean2: alloc::vec![0.0; params.layer2_units],
        var2: alloc::vec![1.0; params.layer2_units],
    };
    let mut multipliers = alloc::vec![1.0f64; n_groups];
    let mut report = MlpTrainReport::default();

    let gamma = params.calibration_loss_weight;
    let batch_size = params.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();

    for _epoch in 0..params.num_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let bx = matrix.select_rows(chunk);
            let by: Vec<u8> = chunk.iter().map(|&i| data.labels[i]).collect();
            let bg: Vec<usize> = chunk.iter().map(|&i| groups[i]).collect();

            if let LossSpec::GroupDro { .. } = loss {
                update_multipliers(
                    &weights,
                    &bx,
                    &by,
                    &bg,
                    params,
                    gamma,
                    &group_sizes,
                    &mut multipliers,
                );
            }

            let cfg = BatchLossConfig {
                loss,
                gamma: match loss {
                    LossSpec::Bce => 0.0,
                    _ => gamma,
                },
                kernel_width: params.mmce_kernel_width,
                l2: params.l2_regularization,
                batch_norm: params.batch_norm,
                group_multipliers: &multipliers,
            };
            let (_, grads, stats, skipped) = mlp_batch_loss(&weights, &bx, &by, &bg, &cfg)?;
            report.skipped_mmce_pools += skipped;
            report.batches_run += 1;

            apply_sgd_step(&mut weights, &grads, params.learning_rate);
            if params.batch_norm {
                fold_running(&mut running, &stats);
            }
        }
    }

    Ok((
        MlpModel {
            weights,
            running,
            batch_norm: params.batch_norm,
            n_features: p,
            group_mode,
            n_groups: data.n_groups,
            params: params.clone(),
            seed,
        },
        report,
    ))
}

/// Spec loss per group on the current batch
/// (`L_g = BCE_g + gamma * MMCE_g + C / sqrt(n_g)`), then one
/// exponentiated-gradient update of the mean-one multipliers.
#[allow(clippy::too_many_arguments)]
fn update_multipliers(
    weights: &MlpWeights,
    bx: &Matrix,
    by: &[u8],
    bg: &[usize],
    params: &MlpParams,
    gamma: f64,
    group_sizes: &[usize],
    multipliers: &mut [f64],
) {
    let layer1 = batch_layer(
        bx,
        &weights.w1,
        &weights.b1,
        &weights.gamma1,
        &weights.beta1,
        params.batch_norm,
    );
    let layer2 = batch_layer(
        &layer1.active,
        &weights.w2,
        &weights.b2,
        &weights.gamma2,
        &weights.beta2,
        params.batch_norm,
    );
    let m = bx.n_rows();
    let scores: Vec<f64> = (0..m)
        .map(|i| {
            let z: f64 = layer2
                .active
                .row(i)
                .iter()
                .zip(&weights.w3)
                .map(|(a, w)| a * w)
                .sum::<f64>()
                + weights.b3;
            sigmoid(z)
        })
        .collect();

    let mut sink = alloc::vec![0.0f64; m];
    for g in 0..multipliers.len() {
        let pool: Vec<usize> = (0..m).filter(|&i| bg[i] == g).collect();
        if pool.is_empty() {
            continue;
        }
        let bce = pool
            .iter()
            .map(|&i| {
                let p = clip_unit(scores[i]);
                let yv = by[i] as f64;
                -(yv * p.ln() + (1.0 - yv) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / pool.len() as f64;
        let first = by[pool[0]];
        let mmce = if gamma > 0.0 && !pool.iter().all(|&i| by[i] == first) {
            mmce_pool(&scores, by, &pool, params.mmce_kernel_width, 0.0, &mut sink)
        } else {
            0.0
        };
        let adjustment = if group_sizes[g] > 0 {
            params.dro_regularization / (group_sizes[g] as f64).sqrt()
        } else {
            0.0
        };
        let l_g = bce + gamma * mmce + adjustment;
        multipliers[g] *= (params.dro_eta * l_g).exp();
    }
    let mean: f64 = multipliers.iter().sum::<f64>() / multipliers.len() as f64;
    for w in multipliers.iter_mut() {
        *w /= mean;
    }
}

fn apply_sgd_step(weights: &mut MlpWeights, grads: &MlpWeights, lr: f64) {
    let count = weights.param_count();
    let mut grads = grads.clone();
    for idx in 0..count {
        let g = grads.get(idx);
        let v = weights.get(idx);
        weights.set(idx, v - lr * g);
    }
}

fn fold_running(running: &mut BnStats, batch: &BnStats) {
    let fold = |run: &mut Vec<f64>, new: &[f64]| {
        for (r, &b) in run.iter_mut().zip(new) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
        }
    };
    fold(&mut running.mean1, &batch.mean1);
    fold(&mut running.var1, &batch.var1);
    fold(&mut running.mean2, &batch.mean2);
    fold(&mut running.var2, &batch.var2);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable_data(n: usize, seed: u64) -> (Matrix, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cells = Vec::with_capacity(n * 2);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let y = rng.gen::<bool>();
            let shift = if y { 1.5 } else { -1.5 };
            cells.push(shift + rng.gen_range(-0.5..0.5));
            cells.push(rng.gen_range(-1.0..1.0));
            labels.push(u8::from(y));
        }
        (Matrix::new(n, 2, cells).unwrap(), labels)
    }

    fn small_params() -> MlpParams {
        MlpParams {
            layer1_units: 16,
            layer2_units: 8,
            learning_rate: 0.05,
            l2_regularization: 1e-6,
            batch_size: 64,
            num_epochs: 30,
            ..MlpParams::default()
        }
    }

    #[test]
    fn separable_data_reaches_high_accuracy() {
        let (x, y) = separable_data(2000, 1);
        let data = TrainData::new(&x, &y);
        let (model, _) =
            mlp_train(&data, &small_params(), LossSpec::Bce, GroupMode::None, 2).unwrap();
        let preds = model.predict(&x, None).unwrap();
        let hits = preds
            .iter()
            .zip(&y)
            .filter(|(&p, &y)| u8::from(p >= 0.5) == y)
            .count();
        let acc = hits as f64 / y.len() as f64;
        assert!(acc >= 0.99, "accuracy {acc}");
    }

    #[test]
    fn degenerate_group_dro_matches_bce_bitwise() {
        let (x, y) = separable_data(600, 5);
        let groups: Vec<usize> = (0..600).map(|i| i % 3).collect();
        let params = MlpParams {
            calibration_loss_weight: 0.0,
            dro_eta: 0.0,
            dro_regularization: 0.0,
            num_epochs: 4,
            ..small_params()
        };
        let data = TrainData::new(&x, &y).with_groups(&groups, 3);
        let (plain, _) = mlp_train(&data, &params, LossSpec::Bce, GroupMode::None, 11).unwrap();
        let (dro, _) = mlp_train(
            &data,
            &params,
            LossSpec::GroupDro { mmce_only: false },
            GroupMode::None,
            11,
        )
        .unwrap();
        assert_eq!(plain.weights, dro.weights);
        assert_eq!(plain.running, dro.running);
    }

    #[test]
    fn predictions_are_deterministic() {
        let (x, y) = separable_data(300, 8);
        let data = TrainData::new(&x, &y);
        let params = small_params();
        let (a, _) = mlp_train(&data, &params, LossSpec::Bce, GroupMode::None, 4).unwrap();
        let (b, _) = mlp_train(&data, &params, LossSpec::Bce, GroupMode::None, 4).unwrap();
        assert_eq!(a.predict(&x, None).unwrap(), b.predict(&x, None).unwrap());
    }

    #[test]
    fn group_mode_none_ignores_groups_argument() {
        let (x, y) = separable_data(200, 3);
        let data = TrainData::new(&x, &y);
        let (model, _) =
            mlp_train(&data, &small_params(), LossSpec::Bce, GroupMode::None, 6).unwrap();
        let groups: Vec<usize> = (0..200).map(|i| i % 2).collect();
        assert_eq!(
            model.predict(&x, None).unwrap(),
            model.predict(&x, Some(&groups)).unwrap()
        );
    }
}
