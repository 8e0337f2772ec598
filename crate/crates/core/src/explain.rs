//! Grad-CAM over the final conv block and penultimate feature export.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3, ArrayView4, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convnet::{forward_sample, logit_grad_final_maps, Params, Real};
use crate::dataio::{resize_bilinear, write_pgm, Label};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetClass {
    BonaFide,
    Morph,
}

impl std::str::FromStr for TargetClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "morph" => Ok(TargetClass::Morph),
            "bonafide" | "bona-fide" => Ok(TargetClass::BonaFide),
            other => Err(Error::Config(format!("unknown target class '{other}'"))),
        }
    }
}

/// Non-negative class activation map on the final feature-map grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CamMap {
    pub values: Array2<f64>,
    pub target: TargetClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CamIntermediates {
    /// Spatially averaged gradient per feature map.
    pub alpha: Array1<f64>,
    /// Final conv activations `K×H'×W'`.
    pub feature_maps: Array3<f64>,
    /// Number of spatial positions averaged over.
    pub z: usize,
}

/// `ReLU(sum_k alpha_k A^k)`.
pub fn weighted_map(alpha: &Array1<f64>, maps: ArrayView3<f64>) -> Array2<f64> {
    let (_, h, w) = maps.dim();
    let mut acc = Array2::<f64>::zeros((h, w));
    for (a, m) in alpha.iter().zip(maps.outer_iter()) {
        acc.scaled_add(*a, &m);
    }
    acc.mapv_inplace(|v| v.max(0.0));
    acc
}

/// `alpha_k = (1/Z) sum_ij dy/dA^k_ij`.
pub fn channel_weights(grads: ArrayView3<f64>) -> Array1<f64> {
    let (_, h, w) = grads.dim();
    let z = (h * w) as f64;
    grads.outer_iter().map(|g| g.sum() / z).collect()
}

/// Grad-CAM for one input stack. The class score is the logit for Morph
/// and its negation for BonaFide.
pub fn grad_cam<T: Real>(params: &Params<T>, input: ArrayView3<T>, target: TargetClass) -> Result<(CamMap, CamIntermediates)> {
    let act = forward_sample(params, input)?;
    let maps = act.final_maps().mapv(|v| v.to_f64().unwrap_or(f64::NAN));
    let (_, h, w) = maps.dim();
    let sign = match target {
        TargetClass::Morph => 1.0,
        TargetClass::BonaFide => -1.0,
    };
    let grads = logit_grad_final_maps(params, h, w).mapv(|v| sign * v.to_f64().unwrap_or(f64::NAN));
    let alpha = channel_weights(grads.view());
    let values = weighted_map(&alpha, maps.view());
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Grad-CAM produced a non-finite value".into()));
    }
    Ok((
        CamMap { values, target },
        CamIntermediates {
            alpha,
            feature_maps: maps,
            z: h * w,
        },
    ))
}

/// Global-average-pooled final conv activations, one row per sample.
pub fn extract_embeddings<T: Real>(params: &Params<T>, batch: ArrayView4<T>) -> Result<Array2<T>> {
    let views: Vec<ArrayView3<T>> = batch.outer_iter().collect();
    let rows: Vec<Array1<T>> = views
        .into_par_iter()
        .map(|x| forward_sample(params, x).map(|a| a.embedding))
        .collect::<Result<_>>()?;
    let k = params.config.feature_dim();
    let mut out = Array2::<T>::zeros((rows.len(), k));
    for (mut dst, src) in out.outer_iter_mut().zip(&rows) {
        dst.assign(src);
    }
    Ok(out)
}

/// CSV with header `label,f0..f{K-1}`.
pub fn write_embeddings_csv<T: Real, W: Write>(labels: &[Label], embeddings: ArrayView2<T>, mut w: W) -> Result<()> {
    if labels.len() != embeddings.nrows() {
        return Err(Error::Input("label count does not match embedding rows".into()));
    }
    let header: Vec<String> = (0..embeddings.ncols()).map(|i| format!("f{i}")).collect();
    writeln!(w, "label,{}", header.join(","))?;
    for (label, row) in labels.iter().zip(embeddings.outer_iter()) {
        let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{}", *label as u8, vals.join(","))?;
    }
    Ok(())
}

/// Min-max scaling to `[0, 1]`; constant maps (including all-zero) map to
/// zero.
pub fn normalize_cam(values: ArrayView2<f64>) -> Array2<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo > 0.0) {
        return Array2::zeros(values.raw_dim());
    }
    values.mapv(|v| (v - lo) / (hi - lo))
}

/// Upsamples the normalized map to the base image size and writes an
/// overlay PGM (`0.5 * base + 0.5 * heat`) at `out_path`, plus the raw grid
/// as CSV next to it. Returns the upsampled heat map.
pub fn render_cam(cam: &CamMap, base: ArrayView2<f64>, out_path: &Path) -> Result<Array2<f64>> {
    if cam.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cannot render a non-finite map".into()));
    }
    let (h, w) = base.dim();
    let heat = resize_bilinear(normalize_cam(cam.values.view()).view(), h, w);
    let overlay = &base * 0.5 + &heat * 0.5;
    if let Some(parent) = out_path.parent() {
        fs::create_dir_all(parent)?;
    }
    write_pgm(out_path, overlay.view())?;
    let mut csv = String::new();
    for row in cam.values.axis_iter(Axis(0)) {
        let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        csv.push_str(&vals.join(","));
        csv.push('\n');
    }
    fs::write(out_path.with_extension("csv"), csv)?;
    Ok(heat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convnet::{init_model, logit_from_final_maps, ModelConfig};
    use ndarray::{arr1, arr2, Array3, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy() -> Params<f64> {
        let cfg = ModelConfig {
            in_channels: 2,
            image_size: 8,
            conv_channels: vec![3, 4, 5],
            selected: None,
        };
        init_model(&cfg, 21).unwrap()
    }

    fn random_input(c: usize, h: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((c, h, h), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_gradients_give_zero_map() {
        let mut p = toy();
        p.head_weights.fill(0.0);
        let (cam, inter) = grad_cam(&p, random_input(2, 8, 1).view(), TargetClass::Morph).unwrap();
        assert!(inter.alpha.iter().all(|&a| a == 0.0));
        assert!(cam.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_weight_reduces_to_relu_of_map() {
        let a = arr2(&[[1.5, -2.0], [0.0, -0.5]]).insert_axis(Axis(0));
        let grads = Array3::from_elem((1, 2, 2), 1.0);
        let alpha = channel_weights(grads.view());
        assert_eq!(alpha, arr1(&[1.0]));
        assert_eq!(weighted_map(&alpha, a.view()), arr2(&[[1.5, 0.0], [0.0, 0.0]]));
    }

    #[test]
    fn two_maps_by_hand() {
        let maps = ndarray::stack(Axis(0), &[arr2(&[[1.0, 2.0], [3.0, -1.0]]).view(), arr2(&[[0.5, -4.0], [1.0, 2.0]]).view()]).unwrap();
        let grads = ndarray::stack(Axis(0), &[arr2(&[[0.2, 0.2], [0.4, 0.4]]).view(), arr2(&[[-1.0, 0.0], [0.0, -1.0]]).view()]).unwrap();
        let alpha = channel_weights(grads.view());
        assert!((alpha[0] - 0.3).abs() < 1e-15 && (alpha[1] + 0.5).abs() < 1e-15);
        // 0.3*A1 - 0.5*A2 = [[0.05, 2.6], [0.4, -1.3]] -> ReLU
        let cam = weighted_map(&alpha, maps.view());
        let expect = arr2(&[[0.05, 2.6], [0.4, 0.0]]);
        for (x, y) in cam.iter().zip(expect.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_matches_activation_finite_differences() {
        let p = toy();
        let x = random_input(2, 8, 4);
        for target in [TargetClass::Morph, TargetClass::BonaFide] {
            let (_, inter) = grad_cam(&p, x.view(), target).unwrap();
            let sign = if target == TargetClass::Morph { 1.0 } else { -1.0 };
            let maps = inter.feature_maps.clone();
            let eps = 1e-4;
            for k in 0..maps.len_of(Axis(0)) {
                let mut sum = 0.0;
                for ((i, j), _) in maps.index_axis(Axis(0), k).indexed_iter() {
                    let mut plus = maps.clone();
                    plus[[k, i, j]] += eps;
                    let mut minus = maps.clone();
                    minus[[k, i, j]] -= eps;
                    sum += sign * (logit_from_final_maps(&p, plus.view()) - logit_from_final_maps(&p, minus.view())) / (2.0 * eps);
                }
                let fd = sum / inter.z as f64;
                assert!((fd - inter.alpha[k]).abs() <= 1e-4 * inter.alpha[k].abs().max(1e-8));
            }
        }
    }

    #[test]
    fn doubling_gradients_keeps_argmax() {
        let maps = random_input(4, 3, 8).mapv(f64::abs);
        let alpha = arr1(&[0.3, -0.1, 0.5, 0.2]);
        let one = weighted_map(&alpha, maps.view());
        let two = weighted_map(&(&alpha * 2.0), maps.view());
        let argmax = |m: &Array2<f64>| m.indexed_iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(argmax(&one), argmax(&two));
        for (a, b) in one.iter().zip(two.iter()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn embeddings_match_pooling_oracle() {
        let p = toy();
        let x = random_input(2, 8, 2);
        let batch = ndarray::stack(Axis(0), &[x.view(), x.view()]).unwrap();
        let emb = extract_embeddings(&p, batch.view()).unwrap();
        assert_eq!(emb.row(0), emb.row(1));
        let maps = forward_sample(&p, x.view()).unwrap().final_maps();
        for k in 0..5 {
            let plane = maps.index_axis(Axis(0), k);
            let mean = plane.iter().sum::<f64>() / plane.len() as f64;
            assert!((emb[[0, k]] - mean).abs() < 1e-14);
        }

        let mut zero = toy();
        for l in &mut zero.convs {
            l.bias.fill(0.0);
        }
        let z = extract_embeddings(&zero, Array4::zeros((1, 2, 8, 8)).view()).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));

        let mut buf = Vec::new();
        write_embeddings_csv(&[Label::Morph, Label::BonaFide], emb.view(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("label,f0,f1,f2,f3,f4\n1,"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn render_sizes_and_guards() {
        let dir = tempfile::tempdir().unwrap();
        let cam = CamMap {
            values: Array2::from_shape_fn((3, 3), |(i, j)| (i * 3 + j) as f64),
            target: TargetClass::Morph,
        };
        let base = Array2::from_elem((160, 160), 0.5);
        let heat = render_cam(&cam, base.view(), &dir.path().join("cam.pgm")).unwrap();
        assert_eq!(heat.dim(), (160, 160));
        assert!(dir.path().join("cam.csv").exists());
        let pgm = fs::read(dir.path().join("cam.pgm")).unwrap();
        assert!(pgm.starts_with(b"P5\n160 160\n255\n"));

        let flat = CamMap {
            values: Array2::from_elem((3, 3), 2.0),
            target: TargetClass::Morph,
        };
        let heat = render_cam(&flat, base.view(), &dir.path().join("flat.pgm")).unwrap();
        assert!(heat.iter().all(|&v| v == 0.0));
        let pgm = fs::read(dir.path().join("flat.pgm")).unwrap();
        // uniform overlay: 0.5 * 0.5 base -> 64
        assert!(pgm[pgm.len() - 160 * 160..].iter().all(|&b| b == 64));
    }

    #[test]
    fn ramp_upsampling_matches_bilinear_oracle() {
        let cam = arr2(&[[0.0, 1.0], [2.0, 3.0]]);
        let heat = resize_bilinear(normalize_cam(cam.view()).view(), 4, 4);
        for i in 0..4 {
            for j in 0..4 {
                let (y, x) = (i as f64 / 3.0, j as f64 / 3.0);
                let expect = (x * 1.0 + y * 2.0) / 3.0;
                assert!((heat[[i, j]] - expect).abs() < 1e-12);
            }
        }
    }
}
