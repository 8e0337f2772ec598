//! Two-phase training: group-sparse phase 1, lambda sweep with sub-band
//! selection, and phase-2 retraining on the selected channels.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::Array4;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::convnet::{init_model, loss_and_grad, predict, reduce_input_channels, sigmoid, ModelConfig, Params, Real};
use crate::dataio::{Dataset, Label, Split};
use crate::error::{Error, Result};
use crate::metrics::{auc, metrics_report, MetricsReport, ScoreSet};
use crate::sparsity::{
    group_norms, penalty, penalty_subgradient, prox_group_in_place, select_subbands, GroupNorms, SelectionResult,
    SparsityMode, DEFAULT_THRESHOLD, SUBGRADIENT_EPS,
};
use crate::wavelet::FULL_CHANNELS;

pub const DEFAULT_LAMBDA_GRID: [f64; 6] = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2];
pub const DESK_EPOCHS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub lr0: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub mode: SparsityMode,
    pub threshold: f64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.0,
            epochs: 150,
            lr0: 1e-3,
            batch_size: 32,
            seed: 7,
            mode: SparsityMode::Proximal,
            threshold: DEFAULT_THRESHOLD,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    /// 30-epoch profile used for 64×64 synthetic runs.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: DESK_EPOCHS,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be a finite value >= 0, got {}", self.lambda));
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.threshold > 0.0) {
            return bad(format!("threshold must be positive, got {}", self.threshold));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        Ok(())
    }

    /// Sets one field from its `key=value` spelling. Unknown keys are a
    /// configuration error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
        }
        match key {
            "lambda" => self.lambda = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "lr0" => self.lr0 = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "mode" => self.mode = value.trim().parse()?,
            "threshold" => self.threshold = num(key, value)?,
            "adam_beta1" => self.adam.beta1 = num(key, value)?,
            "adam_beta2" => self.adam.beta2 = num(key, value)?,
            "adam_eps" => self.adam.eps = num(key, value)?,
            other => return Err(Error::Config(format!("unknown training key '{other}'"))),
        }
        Ok(())
    }

    pub const KEYS: [&'static str; 10] = [
        "lambda",
        "epochs",
        "lr0",
        "batch_size",
        "seed",
        "mode",
        "threshold",
        "adam_beta1",
        "adam_beta2",
        "adam_eps",
    ];

    /// `key=value` lines, one per field, in a fixed order.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("lambda".into(), self.lambda.to_string());
        m.insert("epochs".into(), self.epochs.to_string());
        m.insert("lr0".into(), self.lr0.to_string());
        m.insert("batch_size".into(), self.batch_size.to_string());
        m.insert("seed".into(), self.seed.to_string());
        m.insert("mode".into(), self.mode.to_string());
        m.insert("threshold".into(), self.threshold.to_string());
        m.insert("adam_beta1".into(), self.adam.beta1.to_string());
        m.insert("adam_beta2".into(), self.adam.beta2.to_string());
        m.insert("adam_eps".into(), self.adam.eps.to_string());
        m
    }
}

/// `lr0 / 10^floor(epoch / 20)`.
pub fn lr_at(epoch: usize, lr0: f64) -> f64 {
    lr0 / 10f64.powi((epoch / 20) as i32)
}

/// First and second moments per parameter tensor, kept in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(shapes: &[usize]) -> Self {
        AdamState {
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params<T: Real>(params: &Params<T>) -> Self {
        let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        AdamState::new(&sizes)
    }

    /// Bias-corrected `sqrt(v_hat)` of tensor `k`, element `i`.
    fn scale(&self, k: usize, i: usize, adam: &AdamConfig) -> f64 {
        let c2 = 1.0 - adam.beta2.powi(self.t as i32);
        if c2 <= 0.0 {
            return 0.0;
        }
        (self.v[k][i] / c2).sqrt()
    }
}

/// One bias-corrected Adam update over a list of tensors. Gradients are
/// checked before anything is modified.
pub fn adam_step_slices<T: Real>(
    params: Vec<&mut [T]>,
    grads: Vec<&[T]>,
    state: &mut AdamState,
    lr: f64,
    adam: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Internal("parameter, gradient and state tensor counts differ".into()));
    }
    for (k, (p, g)) in params.iter().zip(&grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[k].len() {
            return Err(Error::Internal(format!("tensor {k}: shape mismatch in optimizer step")));
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient tensor {k} element {i} is not finite")));
        }
    }
    state.t += 1;
    let c1 = 1.0 - adam.beta1.powi(state.t as i32);
    let c2 = 1.0 - adam.beta2.powi(state.t as i32);
    for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..p.len() {
            let gi = g[i].to_f64().unwrap_or(f64::NAN);
            m[i] = adam.beta1 * m[i] + (1.0 - adam.beta1) * gi;
            v[i] = adam.beta2 * v[i] + (1.0 - adam.beta2) * gi * gi;
            let step = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + adam.eps);
            p[i] = T::from_f64_lossy(p[i].to_f64().unwrap_or(f64::NAN) - step);
        }
    }
    Ok(())
}

pub fn adam_step<T: Real>(
    params: &mut Params<T>,
    grads: &Params<T>,
    state: &mut AdamState,
    lr: f64,
    adam: &AdamConfig,
) -> Result<()> {
    if params.config != grads.config {
        return Err(Error::Internal("gradient model config differs from parameters".into()));
    }
    adam_step_slices(params.tensors_mut(), grads.tensors(), state, lr, adam)
}

/// Per-group proximal thresholds for conv1 in the optimizer's metric:
/// `tau_c = lr * lambda / (mean_c sqrt(v_hat) + eps)`, where the mean runs
/// over the weights of group `c`.
pub fn preconditioned_taus(state: &AdamState, shape: (usize, usize, usize, usize), lr: f64, lambda: f64, adam: &AdamConfig) -> Vec<f64> {
    let (n, c, kh, kw) = shape;
    let taps = kh * kw;
    (0..c)
        .map(|ch| {
            let mut acc = 0.0;
            for f in 0..n {
                let base = (f * c + ch) * taps;
                for t in 0..taps {
                    acc += state.scale(0, base + t, adam);
                }
            }
            lr * lambda / (acc / (n * taps) as f64 + adam.eps)
        })
        .collect()
}

/// Per-epoch loss bookkeeping. `total = classification + penalty`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub classification: f64,
    pub penalty: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub loss_history: Vec<EpochLoss>,
    pub norm_history: Vec<GroupNorms>,
    pub final_params: Params<f32>,
    pub val_auc: f64,
}

/// Classification loss, penalty and total of the regularized objective,
/// with the subgradient of the total.
pub fn regularized_objective<T: Real>(
    params: &Params<T>,
    stacks: &[ndarray::Array3<T>],
    labels: &[T],
    indices: &[usize],
    lambda: f64,
) -> Result<(EpochLoss, Params<T>)> {
    let (cl, mut grads) = loss_and_grad(params, stacks, labels, indices)?;
    let w = params.conv1().weights.view();
    let pen = penalty(w, lambda)?;
    if lambda > 0.0 {
        let sub: Array4<T> = penalty_subgradient(w, lambda, SUBGRADIENT_EPS);
        grads.conv1_mut().weights += &sub;
    }
    let cl = cl.to_f64().unwrap_or(f64::NAN);
    Ok((
        EpochLoss {
            classification: cl,
            penalty: pen,
            total: cl + pen,
        },
        grads,
    ))
}

fn label_values(labels: &[Label]) -> Vec<f32> {
    labels.iter().map(|&l| l.as_f64() as f32).collect()
}

/// Morph-likelihood scores `sigmoid(logit)` for every sample of a split.
pub fn score_split(params: &Params<f32>, data: &Dataset, split: Split) -> Result<ScoreSet> {
    let idx = data.indices(split);
    if idx.is_empty() {
        return Err(Error::Validation(format!("split '{split}' is empty")));
    }
    let stacks: Vec<&ndarray::Array3<f32>> = idx.iter().map(|&i| &data.stacks[i]).collect();
    let logits = predict(params, &stacks)?;
    let scores: Vec<f64> = logits.iter().map(|&z| sigmoid(z as f64)).collect();
    let labels: Vec<Label> = idx.iter().map(|&i| data.labels[i]).collect();
    ScoreSet::new(&scores, &labels)
}

pub fn evaluate(params: &Params<f32>, data: &Dataset, split: Split) -> Result<MetricsReport> {
    metrics_report(&score_split(params, data, split)?)
}

fn diverged(epoch: usize, reason: String, last_good: &Params<f32>) -> Error {
    Error::Diverged {
        epoch,
        reason,
        last_good: Box::new(last_good.clone()),
    }
}

/// Trains a fresh model from `model` on the train split and scores the
/// validation split.
pub fn train_model(data: &Dataset, model: &ModelConfig, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    model.validate()?;
    if data.channels() != model.in_channels {
        return Err(Error::Config(format!(
            "dataset has {} channels but the model expects {}",
            data.channels(),
            model.in_channels
        )));
    }
    let train_idx = data.indices(Split::Train);
    let val_idx = data.indices(Split::Val);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Validation("train and val splits must both be non-empty".into()));
    }
    let labels = label_values(&data.labels);
    let mut params: Params<f32> = init_model(model, cfg.seed)?;
    let mut state = AdamState::for_params(&params);
    let mut last_good = params.clone();
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    let mut norm_history = Vec::with_capacity(cfg.epochs);
    let lambda = cfg.lambda;

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg.lr0);
        let mut order = train_idx.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);

        let mut cl_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (cl, mut grads) = loss_and_grad(&params, &data.stacks, &labels, batch)?;
            let cl = cl as f64;
            if !cl.is_finite() {
                return Err(diverged(epoch, format!("classification loss became {cl}"), &last_good));
            }
            if cfg.mode == SparsityMode::Subgradient && lambda > 0.0 {
                let sub = penalty_subgradient(params.conv1().weights.view(), lambda, SUBGRADIENT_EPS);
                grads.conv1_mut().weights += &sub;
            }
            if let Err(e) = adam_step(&mut params, &grads, &mut state, lr, &cfg.adam) {
                return Err(match e {
                    Error::NonFinite(msg) => diverged(epoch, msg, &last_good),
                    other => other,
                });
            }
            if cfg.mode == SparsityMode::Proximal && lambda > 0.0 {
                let w = &mut params.conv1_mut().weights;
                let taus = preconditioned_taus(&state, w.dim(), lr, lambda, &cfg.adam);
                prox_group_in_place(w, &taus);
            }
            cl_sum += cl * batch.len() as f64;
        }
        if !params.all_finite() {
            return Err(diverged(epoch, "parameters became non-finite".into(), &last_good));
        }
        let classification = cl_sum / train_idx.len() as f64;
        let pen = penalty(params.conv1().weights.view(), lambda)?;
        loss_history.push(EpochLoss {
            classification,
            penalty: pen,
            total: classification + pen,
        });
        norm_history.push(group_norms(params.conv1().weights.view()));
        last_good = params.clone();
    }

    let val_auc = auc(&score_split(&params, data, Split::Val)?)?;
    Ok(TrainReport {
        config: cfg.clone(),
        loss_history,
        norm_history,
        final_params: params,
        val_auc,
    })
}

fn image_size(data: &Dataset) -> Result<usize> {
    let s = data.stacks.first().ok_or_else(|| Error::Validation("dataset is empty".into()))?;
    let (_, h, w) = s.dim();
    if h != w {
        return Err(Error::Validation(format!("stacks must be square, got {h}x{w}")));
    }
    Ok(h)
}

/// Phase 1: group-sparse training on the full 48-channel stack.
pub fn train_phase1(data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    if data.channels() != FULL_CHANNELS {
        return Err(Error::Config(format!(
            "phase 1 expects {FULL_CHANNELS} channels, dataset has {}",
            data.channels()
        )));
    }
    train_model(data, &ModelConfig::new(FULL_CHANNELS, image_size(data)?), cfg)
}

/// Thresholds the final conv1 group norms of a phase-1 report.
pub fn select_from_report(report: &TrainReport, data: &Dataset) -> Result<SelectionResult> {
    select_subbands(
        report.final_params.conv1().weights.view(),
        report.config.lambda,
        report.config.threshold,
        report.config.mode,
        &data.paths,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub lambda: f64,
    pub val_auc: Option<f64>,
    pub selected: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub entries: Vec<SweepEntry>,
    pub best_lambda: f64,
    pub best_report: TrainReport,
    pub best_selection: SelectionResult,
}

/// Picks the entry with the highest AUC; equal AUCs go to the larger
/// lambda. Failed entries are skipped.
pub fn best_entry(entries: &[SweepEntry]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, e) in entries.iter().enumerate() {
        let Some(a) = e.val_auc else { continue };
        best = match best {
            None => Some(i),
            Some(j) => {
                let b = entries[j].val_auc.unwrap();
                if a > b || (a == b && e.lambda > entries[j].lambda) {
                    Some(i)
                } else {
                    Some(j)
                }
            }
        };
    }
    best
}

/// Runs phase 1 once per lambda with the same seed and keeps the best run.
pub fn sweep_lambda(data: &Dataset, grid: &[f64], cfg: &TrainConfig) -> Result<SweepOutcome> {
    if grid.is_empty() {
        return Err(Error::Config("lambda grid is empty".into()));
    }
    let mut entries = Vec::with_capacity(grid.len());
    let mut runs: Vec<Option<(TrainReport, SelectionResult)>> = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let run_cfg = TrainConfig { lambda, ..cfg.clone() };
        let outcome = train_phase1(data, &run_cfg).and_then(|r| {
            let sel = select_from_report(&r, data)?;
            Ok((r, sel))
        });
        match outcome {
            Ok((report, sel)) => {
                entries.push(SweepEntry {
                    lambda,
                    val_auc: Some(report.val_auc),
                    selected: Some(sel.selected.len()),
                    error: None,
                });
                runs.push(Some((report, sel)));
            }
            Err(e @ (Error::Config(_) | Error::Validation(_))) if runs.is_empty() && entries.is_empty() => {
                return Err(e);
            }
            Err(e) => {
                entries.push(SweepEntry {
                    lambda,
                    val_auc: None,
                    selected: None,
                    error: Some(e.to_string()),
                });
                runs.push(None);
            }
        }
    }
    let best = best_entry(&entries).ok_or_else(|| Error::NonFinite("every lambda in the sweep failed".into()))?;
    let (best_report, best_selection) = runs.swap_remove(best).expect("best entry succeeded");
    Ok(SweepOutcome {
        best_lambda: entries[best].lambda,
        entries,
        best_report,
        best_selection,
    })
}

/// Phase 2: a fresh unpenalized model on the selected channels of a
/// 48-channel dataset.
pub fn train_phase2(data: &Dataset, selection: &SelectionResult, cfg: &TrainConfig) -> Result<(TrainReport, Dataset)> {
    if cfg.lambda != 0.0 {
        return Err(Error::Config(format!("phase 2 trains without a penalty, got lambda {}", cfg.lambda)));
    }
    if data.channels() != FULL_CHANNELS || selection.norms.len() != FULL_CHANNELS {
        return Err(Error::Config(format!(
            "phase 2 needs a {FULL_CHANNELS}-channel dataset and selection"
        )));
    }
    let base = ModelConfig::new(FULL_CHANNELS, image_size(data)?);
    let model = reduce_input_channels(&base, &selection.selected)?;
    let reduced = data.select_channels(&selection.selected)?;
    if reduced.paths != selection.paths {
        return Err(Error::Config("selection paths do not match the dataset channels".into()));
    }
    Ok((train_model(&reduced, &model, cfg)?, reduced))
}

/// Serializable summary written as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub phase: u8,
    pub config: TrainConfig,
    pub in_channels: usize,
    pub loss_history: Vec<EpochLoss>,
    pub norm_history: Vec<GroupNorms>,
    pub val_auc: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub test: Option<MetricsReport>,
}

impl RunReport {
    pub fn new(phase: u8, report: &TrainReport, test: Option<MetricsReport>) -> Self {
        RunReport {
            phase,
            config: report.config.clone(),
            in_channels: report.final_params.config.in_channels,
            loss_history: report.loss_history.clone(),
            norm_history: report.norm_history.clone(),
            val_auc: report.val_auc,
            test,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// `key=value` text for `config.txt`.
pub fn config_text(cfg: &TrainConfig, extra: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    for (k, v) in cfg.to_kv().iter().chain(extra) {
        let _ = writeln!(out, "{k}={v}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::SubbandPath;
    use ndarray::Array3;

    #[test]
    fn schedule_values() {
        assert_eq!(lr_at(0, 1e-3), 1e-3);
        assert_eq!(lr_at(19, 1e-3), 1e-3);
        assert!((lr_at(20, 1e-3) - 1e-4).abs() < 1e-18);
        assert!((lr_at(149, 1e-3) - 1e-10).abs() < 1e-24);
        for e in 0..200 {
            assert!(lr_at(e + 1, 1e-3) <= lr_at(e, 1e-3));
        }
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut w = [0.5f64, -1.25, 3.0];
        let g = [0.0f64; 3];
        let mut st = AdamState::new(&[3]);
        adam_step_slices(vec![&mut w[..]], vec![&g[..]], &mut st, 1e-3, &AdamConfig::default()).unwrap();
        assert_eq!(w, [0.5, -1.25, 3.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut w = [0.0f64];
        let mut st = AdamState::new(&[1]);
        adam_step_slices(vec![&mut w[..]], vec![&[1.0][..]], &mut st, 1e-3, &AdamConfig::default()).unwrap();
        // m_hat / sqrt(v_hat) = 1, so the step is lr / (1 + eps)
        assert!((w[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15, "{}", w[0]);
        assert!((w[0] + 1e-3).abs() < 1e-10);
    }

    #[test]
    fn adam_five_steps_match_recurrence() {
        let cfg = AdamConfig::default();
        let grads = [0.3, -1.1, 2.0, 0.05, -0.7];
        let lr = 0.01;
        let mut w = [1.0f64];
        let mut st = AdamState::new(&[1]);
        for g in grads {
            adam_step_slices(vec![&mut w[..]], vec![&[g][..]], &mut st, lr, &cfg).unwrap();
        }
        // hand-unrolled oracle
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 1.0f64);
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= lr * mh / (vh.sqrt() + 1e-8);
        }
        assert!((w[0] - x).abs() < 1e-12, "{} vs {x}", w[0]);
        assert_eq!(st.t, 5);
    }

    #[test]
    fn adam_rejects_non_finite_without_mutating() {
        let mut w = [1.0f64, 2.0];
        let mut st = AdamState::new(&[2]);
        let err = adam_step_slices(vec![&mut w[..]], vec![&[0.1, f64::NAN][..]], &mut st, 1e-3, &AdamConfig::default());
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(w, [1.0, 2.0]);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn config_keys_round_trip() {
        let mut cfg = TrainConfig::desk();
        cfg.set("lambda", "0.003").unwrap();
        cfg.set("mode", "subgradient").unwrap();
        cfg.set("batch_size", "16").unwrap();
        assert_eq!(cfg.lambda, 0.003);
        assert_eq!(cfg.mode, SparsityMode::Subgradient);
        assert!(matches!(cfg.set("learning_rate", "1"), Err(Error::Config(_))));
        assert!(matches!(cfg.set("epochs", "many"), Err(Error::Config(_))));
        let mut back = TrainConfig::default();
        for (k, v) in cfg.to_kv() {
            back.set(&k, &v).unwrap();
        }
        assert_eq!(back, cfg);
        assert_eq!(cfg.to_kv().len(), TrainConfig::KEYS.len());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { epochs: 0, ..TrainConfig::desk() },
            TrainConfig { lr0: 0.0, ..TrainConfig::desk() },
            TrainConfig { batch_size: 0, ..TrainConfig::desk() },
            TrainConfig { lambda: -1.0, ..TrainConfig::desk() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn sweep_tie_goes_to_larger_lambda() {
        let e = |lambda, auc: Option<f64>| SweepEntry {
            lambda,
            val_auc: auc,
            selected: None,
            error: None,
        };
        let entries = vec![e(1e-4, Some(0.9)), e(1e-3, Some(0.95)), e(1e-2, Some(0.95)), e(3e-2, None)];
        assert_eq!(best_entry(&entries), Some(2));
        assert_eq!(best_entry(&[e(0.0, None)]), None);
        assert_eq!(best_entry(&[e(0.0, Some(0.5))]), Some(0));
    }

    #[test]
    fn preconditioned_taus_scale_inversely() {
        let mut st = AdamState::new(&[2 * 2 * 9]);
        st.t = 1;
        let adam = AdamConfig { eps: 0.0, ..AdamConfig::default() };
        // group 0 has v = 0.001 * 4, group 1 has v = 0.001 * 16
        for f in 0..2 {
            for t in 0..9 {
                st.v[0][(f * 2) * 9 + t] = 0.001 * 4.0;
                st.v[0][(f * 2 + 1) * 9 + t] = 0.001 * 16.0;
            }
        }
        let taus = preconditioned_taus(&st, (2, 2, 3, 3), 0.1, 0.5, &adam);
        assert!((taus[0] - 0.1 * 0.5 / 2.0).abs() < 1e-12);
        assert!((taus[1] - 0.1 * 0.5 / 4.0).abs() < 1e-12);
    }

    fn tiny_dataset(n_per_split: usize, seed: u64) -> Dataset {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stacks = Vec::new();
        let mut labels = Vec::new();
        let mut splits = Vec::new();
        for split in Split::ALL {
            for i in 0..2 * n_per_split {
                let label = if i % 2 == 0 { Label::BonaFide } else { Label::Morph };
                let shift = if label == Label::Morph { 0.5f32 } else { 0.0 };
                stacks.push(Array3::from_shape_fn((FULL_CHANNELS, 8, 8), |(c, _, _)| {
                    rng.random_range(-0.5f32..0.5) + if c == 47 { shift } else { 0.0 }
                }));
                labels.push(label);
                splits.push(split);
            }
        }
        let n = stacks.len();
        Dataset {
            stacks,
            labels,
            splits,
            sources: vec!["x".into(); n],
            paths: SubbandPath::all(),
        }
    }

    #[test]
    fn lambda_zero_has_zero_penalty_and_is_deterministic() {
        let data = tiny_dataset(6, 1);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            ..TrainConfig::desk()
        };
        let a = train_phase1(&data, &cfg).unwrap();
        let b = train_phase1(&data, &cfg).unwrap();
        assert_eq!(a.loss_history, b.loss_history);
        assert_eq!(a.final_params, b.final_params);
        assert_eq!(a.loss_history.len(), 3);
        for l in &a.loss_history {
            assert_eq!(l.penalty, 0.0);
            assert_eq!(l.total, l.classification);
        }
        assert!((0.0..=1.0).contains(&a.val_auc));
    }

    #[test]
    fn penalized_totals_add_up_and_prox_gives_exact_zeros() {
        let data = tiny_dataset(6, 2);
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 4,
            lambda: 1.0,
            ..TrainConfig::desk()
        };
        let r = train_phase1(&data, &cfg).unwrap();
        for (l, n) in r.loss_history.iter().zip(&r.norm_history) {
            assert!((l.total - (l.classification + l.penalty)).abs() < 1e-9);
            assert!((l.penalty - cfg.lambda * n.sum()).abs() < 1e-9 * l.penalty.max(1.0));
        }
        let last = r.norm_history.last().unwrap();
        assert!(last.0.iter().all(|&v| v == 0.0 || v > 0.0));
        assert!(last.0.iter().any(|&v| v == 0.0), "{last:?}");
    }

    #[test]
    fn phase2_uses_selected_channels() {
        let data = tiny_dataset(4, 3);
        let w = Array4::<f32>::from_shape_fn((32, 48, 3, 3), |(_, c, _, _)| if c % 5 == 0 { 1.0 } else { 0.0 });
        let sel = select_subbands(w.view(), 0.01, 1e-3, SparsityMode::Proximal, &data.paths).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 8,
            ..TrainConfig::desk()
        };
        let (r, reduced) = train_phase2(&data, &sel, &cfg).unwrap();
        assert_eq!(r.final_params.conv1().weights.dim(), (32, sel.selected.len(), 3, 3));
        assert_eq!(reduced.channels(), sel.selected.len());
        assert_eq!(r.final_params.config.selected.as_deref(), Some(&sel.selected[..]));
        let penalized = TrainConfig { lambda: 0.1, ..cfg };
        assert!(matches!(train_phase2(&data, &sel, &penalized), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_singleton_and_wrong_channels() {
        let data = tiny_dataset(4, 4);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 8,
            ..TrainConfig::desk()
        };
        let out = sweep_lambda(&data, &[0.0], &cfg).unwrap();
        assert_eq!(out.best_lambda, 0.0);
        assert_eq!(out.entries.len(), 1);
        assert!(matches!(sweep_lambda(&data, &[], &cfg), Err(Error::Config(_))));
        let small = data.select_channels(&[0, 1]).unwrap();
        assert!(matches!(train_phase1(&small, &cfg), Err(Error::Config(_))));
    }
}
