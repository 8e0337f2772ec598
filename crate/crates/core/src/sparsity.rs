//! Group-Lasso penalty over first-layer channel groups.
//!
//! Group `c` is the weight slice `w[:, c, :, :]`, i.e. every first-layer
//! weight that touches input sub-band `c`. The penalty is
//! `lambda * sum_c ||w[:, c, :, :]||_2`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array4, ArrayView4, Axis};
use serde::{Deserialize, Serialize};

use crate::convnet::Real;
use crate::error::{Error, Result};
use crate::wavelet::SubbandPath;

pub const DEFAULT_THRESHOLD: f64 = 1e-3;
/// Group norms at or below this take the zero subgradient.
pub const SUBGRADIENT_EPS: f64 = 1e-12;

/// How the penalty enters training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SparsityMode {
    /// Penalty subgradient added to the classification gradient.
    Subgradient,
    /// Block soft-thresholding applied after each optimizer step.
    Proximal,
}

impl FromStr for SparsityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subgradient" => Ok(SparsityMode::Subgradient),
            "proximal" => Ok(SparsityMode::Proximal),
            other => Err(Error::Config(format!("unknown sparsity mode '{other}'"))),
        }
    }
}

impl fmt::Display for SparsityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SparsityMode::Subgradient => "subgradient",
            SparsityMode::Proximal => "proximal",
        })
    }
}

/// Euclidean norm of each input-channel group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupNorms(pub Vec<f64>);

impl GroupNorms {
    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Channel indices ordered by decreasing norm (stable for ties).
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.0.len()).collect();
        idx.sort_by(|&a, &b| self.0[b].total_cmp(&self.0[a]));
        idx
    }
}

pub fn group_norms<T: Real>(weights: ArrayView4<T>) -> GroupNorms {
    GroupNorms(
        weights
            .axis_iter(Axis(1))
            .map(|g| {
                g.iter()
                    .map(|v| {
                        let x = v.to_f64().unwrap_or(f64::NAN);
                        x * x
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect(),
    )
}

pub fn penalty<T: Real>(weights: ArrayView4<T>, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(0.0);
    }
    Ok(lambda * group_norms(weights).sum())
}

/// `lambda * w / ||g||` for groups with norm above `eps`, zero otherwise.
pub fn penalty_subgradient<T: Real>(weights: ArrayView4<T>, lambda: f64, eps: f64) -> Array4<T> {
    let norms = group_norms(weights);
    let mut out = Array4::<T>::zeros(weights.raw_dim());
    for (c, (src, mut dst)) in weights.axis_iter(Axis(1)).zip(out.axis_iter_mut(Axis(1))).enumerate() {
        let n = norms.0[c];
        if n > eps {
            let scale = T::from_f64_lossy(lambda / n);
            dst.zip_mut_with(&src, |d, &w| *d = w * scale);
        }
    }
    out
}

/// Block soft-thresholding with one threshold per group, in place. Each
/// group is scaled by `max(0, 1 - tau_c / ||g_c||)`; groups whose norm does
/// not exceed `tau_c` become exactly zero.
pub fn prox_group_in_place<T: Real>(weights: &mut Array4<T>, taus: &[f64]) {
    let norms = group_norms(weights.view());
    for (c, mut g) in weights.axis_iter_mut(Axis(1)).enumerate() {
        let (n, tau) = (norms.0[c], taus[c]);
        if tau <= 0.0 {
            continue;
        }
        if n <= tau {
            g.fill(T::zero());
        } else {
            let scale = T::from_f64_lossy(1.0 - tau / n);
            g.mapv_inplace(|w| w * scale);
        }
    }
}

/// Proximal operator of `tau * sum_c ||g_c||`.
pub fn prox_group<T: Real>(weights: ArrayView4<T>, tau: f64) -> Result<Array4<T>> {
    if !(tau >= 0.0) {
        return Err(Error::Config(format!("tau must be non-negative, got {tau}")));
    }
    let mut out = weights.to_owned();
    let taus = vec![tau; out.len_of(Axis(1))];
    prox_group_in_place(&mut out, &taus);
    Ok(out)
}

/// Outcome of thresholding the first-layer group norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub lambda: f64,
    pub threshold: f64,
    pub mode: SparsityMode,
    pub norms: GroupNorms,
    pub selected: Vec<usize>,
    pub paths: Vec<SubbandPath>,
}

impl SelectionResult {
    /// Paths of the `k` largest groups.
    pub fn top_paths(&self, k: usize, all_paths: &[SubbandPath]) -> Vec<SubbandPath> {
        self.norms.ranking().into_iter().take(k).map(|c| all_paths[c]).collect()
    }
}

/// Keeps every channel whose group norm is at least `threshold`.
/// `paths` names the model's input channels.
pub fn select_subbands<T: Real>(
    weights: ArrayView4<T>,
    lambda: f64,
    threshold: f64,
    mode: SparsityMode,
    paths: &[SubbandPath],
) -> Result<SelectionResult> {
    if !(threshold > 0.0) {
        return Err(Error::Config(format!("threshold must be positive, got {threshold}")));
    }
    let norms = group_norms(weights);
    if paths.len() != norms.len() {
        return Err(Error::Config(format!(
            "{} channel paths for {} weight groups",
            paths.len(),
            norms.len()
        )));
    }
    let selected: Vec<usize> = (0..norms.len()).filter(|&c| norms.0[c] >= threshold).collect();
    if selected.is_empty() {
        return Err(Error::Selection {
            message: format!("no group norm reaches the threshold {threshold}"),
            norms: norms.0,
        });
    }
    Ok(SelectionResult {
        lambda,
        threshold,
        mode,
        paths: selected.iter().map(|&c| paths[c]).collect(),
        norms,
        selected,
    })
}
