//! Manifests, image decoding, and the synthetic bona fide / morph generator.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat, ImageReader};
use ndarray::{Array2, Array3, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wavelet::{decompose, SubbandPath, SubbandStack, WaveletSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    BonaFide = 0,
    Morph = 1,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(*self as u8)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(Label::BonaFide),
            1 => Ok(Label::Morph),
            other => Err(serde::de::Error::custom(format!("label must be 0 or 1, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: Label,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn count(&self, split: Split, label: Label) -> usize {
        self.entries
            .iter()
            .filter(|e| e.split == split && e.label == label)
            .count()
    }

    /// Rejects duplicate paths.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(&e.path) {
                return Err(Error::Validation(format!(
                    "duplicate path {} in manifest '{}'",
                    e.path.display(),
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Training needs both labels in every split.
    pub fn validate_for_training(&self) -> Result<()> {
        self.validate()?;
        for split in Split::ALL {
            for label in [Label::BonaFide, Label::Morph] {
                if self.count(split, label) == 0 {
                    return Err(Error::Validation(format!(
                        "manifest '{}' has no {label:?} entries in the {split:?} split",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a JSON-lines manifest. The manifest name is the file stem.
    pub fn read_jsonl(path: &Path) -> Result<DatasetManifest> {
        let file = File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let mut entries = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| Error::Corrupt {
                path: path.to_path_buf(),
                reason: format!("line {}: {e}", lineno + 1),
            })?;
            entries.push(entry);
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let manifest = DatasetManifest { name, entries };
        manifest.validate()?;
        Ok(manifest)
    }
}

/// Concatenates manifests in input order into one "universal" manifest.
pub fn merge_manifests(manifests: &[DatasetManifest], name: &str) -> Result<DatasetManifest> {
    if manifests.is_empty() {
        return Err(Error::Config("at least one manifest is required".into()));
    }
    let merged = DatasetManifest {
        name: name.to_string(),
        entries: manifests.iter().flat_map(|m| m.entries.iter().cloned()).collect(),
    };
    merged.validate()?;
    Ok(merged)
}

/// Bilinear resampling with corner-anchored sample positions, so the four
/// corner pixels of the input map exactly onto the output corners.
pub fn resize_bilinear(src: ArrayView2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    if (h, w) == (out_h, out_w) {
        return src.to_owned();
    }
    let coord = |dst: usize, out: usize, inp: usize| -> (usize, usize, f64) {
        if out <= 1 || inp <= 1 {
            return (0, 0, 0.0);
        }
        let pos = dst as f64 * (inp - 1) as f64 / (out - 1) as f64;
        let lo = (pos.floor() as usize).min(inp - 1);
        let hi = (lo + 1).min(inp - 1);
        (lo, hi, pos - lo as f64)
    };
    Array2::from_shape_fn((out_h, out_w), |(i, j)| {
        let (y0, y1, fy) = coord(i, out_h, h);
        let (x0, x1, fx) = coord(j, out_w, w);
        let top = src[[y0, x0]] * (1.0 - fx) + src[[y0, x1]] * fx;
        let bottom = src[[y1, x0]] * (1.0 - fx) + src[[y1, x1]] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

fn to_gray(img: DynamicImage) -> Array2<f64> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(g) => Array2::from_shape_fn((h, w), |(i, j)| {
            g.get_pixel(j as u32, i as u32)[0] as f64 / 255.0
        }),
        DynamicImage::ImageLuma16(g) => Array2::from_shape_fn((h, w), |(i, j)| {
            g.get_pixel(j as u32, i as u32)[0] as f64 / 65535.0
        }),
        DynamicImage::ImageLumaA8(g) => Array2::from_shape_fn((h, w), |(i, j)| {
            g.get_pixel(j as u32, i as u32)[0] as f64 / 255.0
        }),
        other => {
            let rgb = other.to_rgb8();
            Array2::from_shape_fn((h, w), |(i, j)| {
                let p = rgb.get_pixel(j as u32, i as u32);
                (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0
            })
        }
    }
}

/// Decodes a PNG or binary PGM file to grayscale in `[0, 1]` and resizes it
/// to `size`×`size`.
pub fn load_image(path: &Path, size: usize) -> Result<Array2<f64>> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let reader = ImageReader::open(path)?.with_guessed_format()?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                reason: format!("expected PNG or PGM, detected {other:?}"),
            })
        }
    }
    let img = reader.decode().map_err(|e| Error::Corrupt {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let gray = to_gray(img);
    Ok(resize_bilinear(gray.view(), size, size))
}

/// Writes an 8-bit binary PGM, clamping to `[0, 1]` and rounding.
pub fn write_pgm(path: &Path, img: ArrayView2<f64>) -> Result<()> {
    let (h, w) = img.dim();
    let mut buf = format!("P5\n{w} {h}\n255\n").into_bytes();
    buf.extend(img.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, buf)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub image_size: usize,
    pub n_pairs: usize,
    pub blob_count: usize,
    pub artifact_amplitude: f64,
    pub artifact_period: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_size: 64,
            n_pairs: 200,
            blob_count: 6,
            artifact_amplitude: 0.08,
            artifact_period: 2,
            alpha: 0.5,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_pairs < 2 {
            return Err(Error::Config(format!("n_pairs must be at least 2, got {}", self.n_pairs)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.artifact_period < 2 {
            return Err(Error::Config(format!(
                "artifact_period must be at least 2, got {}",
                self.artifact_period
            )));
        }
        if !(self.artifact_amplitude >= 0.0) {
            return Err(Error::Config("artifact_amplitude must be non-negative".into()));
        }
        if self.image_size < crate::wavelet::MIN_SIDE {
            return Err(Error::Config(format!("image_size must be at least {}", crate::wavelet::MIN_SIDE)));
        }
        if self.blob_count == 0 {
            return Err(Error::Config("blob_count must be positive".into()));
        }
        Ok(())
    }

    /// Number of pairs in each split, 70/15/15 by pair index.
    pub fn split_sizes(&self) -> [usize; 3] {
        let n = self.n_pairs;
        let train = ((n as f64) * 0.70).round() as usize;
        let val = (((n as f64) * 0.15).round() as usize).min(n - train);
        [train, val, n - train - val]
    }
}

/// Smooth synthetic "face": normalized sum of random Gaussian blobs.
pub fn synth_bona_fide(size: usize, blobs: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let s = size as f64;
    let params: Vec<(f64, f64, f64, f64)> = (0..blobs)
        .map(|_| {
            (
                rng.random_range(0.0..s),
                rng.random_range(0.0..s),
                rng.random_range(s / 10.0..s / 4.0),
                rng.random_range(0.5..1.0),
            )
        })
        .collect();
    let raw = Array2::from_shape_fn((size, size), |(i, j)| {
        params
            .iter()
            .map(|&(cy, cx, sigma, amp)| {
                let d2 = (i as f64 - cy).powi(2) + (j as f64 - cx).powi(2);
                amp * (-d2 / (2.0 * sigma * sigma)).exp()
            })
            .sum::<f64>()
    });
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    raw.mapv(|v| 0.1 + 0.8 * (v - lo) / span)
}

/// Sign-alternating square-wave checkerboard with the given period.
pub fn checkerboard(size: usize, period: usize) -> Array2<f64> {
    let wave = |x: usize| if (x % period) * 2 < period { 1.0 } else { -1.0 };
    Array2::from_shape_fn((size, size), |(i, j)| wave(i) * wave(j))
}

/// Alpha blend of two parents plus the high-frequency artifact, unclamped.
pub fn blend_morph(a: ArrayView2<f64>, b: ArrayView2<f64>, alpha: f64, artifact: ArrayView2<f64>, amplitude: f64) -> Array2<f64> {
    let mut out = &a * alpha + &b * (1.0 - alpha);
    out.scaled_add(amplitude, &artifact);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub images: usize,
    pub clamped_fraction: f64,
}

/// Generates `n_pairs` bona fide images and one morph per pair under
/// `out_dir`, writing `images/*.pgm` and `manifest.jsonl`. Manifest paths
/// are relative to `out_dir`.
pub fn synth_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<(DatasetManifest, SynthSummary)> {
    cfg.validate()?;
    let image_dir = out_dir.join("images");
    fs::create_dir_all(&image_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let size = cfg.image_size;

    let bona: Vec<Array2<f64>> = (0..cfg.n_pairs)
        .map(|_| synth_bona_fide(size, cfg.blob_count, &mut rng))
        .collect();

    let [n_train, n_val, _] = cfg.split_sizes();
    let split_of = |i: usize| {
        if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        }
    };
    let split_range = |i: usize| match split_of(i) {
        Split::Train => 0..n_train,
        Split::Val => n_train..n_train + n_val,
        Split::Test => n_train + n_val..cfg.n_pairs,
    };

    let artifact = checkerboard(size, cfg.artifact_period);
    let mut entries = Vec::with_capacity(2 * cfg.n_pairs);
    let mut clamped = 0usize;
    for (i, parent_a) in bona.iter().enumerate() {
        // second parent from the same split when possible, so splits stay disjoint
        let mut range = split_range(i);
        if range.len() < 2 {
            range = 0..cfg.n_pairs;
        }
        let j = loop {
            let j = rng.random_range(range.clone());
            if j != i {
                break j;
            }
        };
        let morph = blend_morph(parent_a.view(), bona[j].view(), cfg.alpha, artifact.view(), cfg.artifact_amplitude);
        clamped += morph.iter().filter(|v| !(0.0..=1.0).contains(*v)).count();

        let split = split_of(i);
        let bona_path = PathBuf::from(format!("images/bonafide_{i:04}.pgm"));
        let morph_path = PathBuf::from(format!("images/morph_{i:04}.pgm"));
        write_pgm(&out_dir.join(&bona_path), parent_a.view())?;
        write_pgm(&out_dir.join(&morph_path), morph.view())?;
        entries.push(ManifestEntry {
            path: bona_path,
            label: Label::BonaFide,
            split,
        });
        entries.push(ManifestEntry {
            path: morph_path,
            label: Label::Morph,
            split,
        });
    }

    let manifest = DatasetManifest {
        name: "synthetic".into(),
        entries,
    };
    manifest.write_jsonl(&out_dir.join("manifest.jsonl"))?;
    let images = 2 * cfg.n_pairs;
    let summary = SynthSummary {
        images,
        clamped_fraction: clamped as f64 / (images * size * size) as f64,
    };
    Ok((manifest, summary))
}

/// In-memory decomposed dataset in training precision.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub stacks: Vec<Array3<f32>>,
    pub labels: Vec<Label>,
    pub splits: Vec<Split>,
    pub sources: Vec<PathBuf>,
    pub paths: Vec<SubbandPath>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.stacks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stacks.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.paths.len()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Restricts every stack to the given channel indices.
    pub fn select_channels(&self, selected: &[usize]) -> Result<Dataset> {
        if selected.is_empty() {
            return Err(Error::Config("channel selection is empty".into()));
        }
        if let Some(&bad) = selected.iter().find(|&&c| c >= self.channels()) {
            return Err(Error::Config(format!(
                "selected channel {bad} exceeds the {}-channel dataset",
                self.channels()
            )));
        }
        Ok(Dataset {
            stacks: self
                .stacks
                .par_iter()
                .map(|s| s.select(ndarray::Axis(0), selected))
                .collect(),
            labels: self.labels.clone(),
            splits: self.splits.clone(),
            sources: self.sources.clone(),
            paths: selected.iter().map(|&c| self.paths[c]).collect(),
        })
    }
}

/// Loads one manifest entry as a sub-band stack. `.sbs` files are read
/// directly, anything else is decoded as an image and decomposed.
pub fn load_stack(path: &Path, spec: &WaveletSpec, image_size: usize) -> Result<SubbandStack> {
    if path.extension().is_some_and(|e| e == "sbs") {
        let file = File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        SubbandStack::read_from(BufReader::new(file), path)
    } else {
        let img = load_image(path, image_size)?;
        decompose(img.view(), spec)
    }
}

/// Loads and decomposes every manifest entry; relative paths resolve
/// against `base_dir`.
pub fn load_dataset(manifest: &DatasetManifest, base_dir: &Path, spec: &WaveletSpec, image_size: usize) -> Result<Dataset> {
    if manifest.entries.is_empty() {
        return Err(Error::Validation(format!("manifest '{}' is empty", manifest.name)));
    }
    let stacks: Vec<SubbandStack> = manifest
        .entries
        .par_iter()
        .map(|e| load_stack(&base_dir.join(&e.path), spec, image_size))
        .collect::<Result<_>>()?;
    let paths = stacks[0].paths.clone();
    if let Some((i, _)) = stacks.iter().enumerate().find(|(_, s)| s.paths != paths || s.data.dim() != stacks[0].data.dim()) {
        return Err(Error::Validation(format!(
            "entry {} has a different channel layout or size than the first entry",
            manifest.entries[i].path.display()
        )));
    }
    Ok(Dataset {
        stacks: stacks.into_iter().map(|s| s.data.mapv(|v| v as f32)).collect(),
        labels: manifest.entries.iter().map(|e| e.label).collect(),
        splits: manifest.entries.iter().map(|e| e.split).collect(),
        sources: manifest.entries.iter().map(|e| e.path.clone()).collect(),
        paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::{build_filters, WaveletFamily};

    fn entry(path: &str, label: Label, split: Split) -> ManifestEntry {
        ManifestEntry {
            path: path.into(),
            label,
            split,
        }
    }

    #[test]
    fn pgm_all_white_loads_as_ones() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("white.pgm");
        let mut bytes = b"P5\n4 3\n255\n".to_vec();
        bytes.extend([255u8; 12]);
        fs::write(&p, bytes).unwrap();
        let img = load_image(&p, 3).unwrap();
        assert_eq!(img.dim(), (3, 3));
        assert!(img.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn png_is_resized_and_converted_to_luma() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("big.png");
        let img = image::RgbImage::from_fn(320, 320, |x, _| image::Rgb([if x < 160 { 255 } else { 0 }, 0, 0]));
        img.save(&p).unwrap();
        let loaded = load_image(&p, 160).unwrap();
        assert_eq!(loaded.dim(), (160, 160));
        assert!((loaded[[0, 0]] - 0.299).abs() < 1e-12);
        assert!(loaded[[0, 159]].abs() < 1e-12);
    }

    #[test]
    fn checkerboard_upscale_matches_bilinear_formula() {
        let src = ndarray::arr2(&[[0.0, 1.0], [1.0, 0.0]]);
        let out = resize_bilinear(src.view(), 4, 4);
        for i in 0..4 {
            for j in 0..4 {
                let (y, x) = (i as f64 / 3.0, j as f64 / 3.0);
                let expect = (1.0 - y) * x + y * (1.0 - x);
                assert!((out[[i, j]] - expect).abs() < 1e-12);
            }
        }
        assert_eq!(out[[0, 0]], 0.0);
        assert_eq!(out[[0, 3]], 1.0);
    }

    #[test]
    fn load_image_error_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.png");
        assert!(matches!(load_image(&missing, 8), Err(Error::NotFound(_))));

        let text = dir.path().join("notes.txt");
        fs::write(&text, "hello, this is not an image").unwrap();
        assert!(matches!(load_image(&text, 8), Err(Error::UnsupportedFormat { .. })));

        let broken = dir.path().join("broken.pgm");
        fs::write(&broken, b"P5\n10 10\n255\n\x01\x02").unwrap();
        assert!(matches!(load_image(&broken, 8), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn merging_preserves_order_and_rejects_duplicates() {
        let a = DatasetManifest {
            name: "a".into(),
            entries: vec![entry("a0", Label::BonaFide, Split::Train), entry("a1", Label::Morph, Split::Train)],
        };
        let b = DatasetManifest {
            name: "b".into(),
            entries: vec![entry("b0", Label::Morph, Split::Train), entry("b1", Label::Morph, Split::Test)],
        };
        let c = DatasetManifest {
            name: "c".into(),
            entries: vec![entry("c0", Label::BonaFide, Split::Train)],
        };
        let one = merge_manifests(std::slice::from_ref(&a), "uni").unwrap();
        assert_eq!(one.entries, a.entries);
        assert_eq!(one.name, "uni");

        let all = merge_manifests(&[a.clone(), b.clone(), c.clone()], "uni").unwrap();
        let train = |m: &DatasetManifest| m.entries.iter().filter(|e| e.split == Split::Train).count();
        assert_eq!(train(&all), train(&a) + train(&b) + train(&c));
        let order: Vec<_> = all.entries.iter().map(|e| e.path.to_string_lossy().into_owned()).collect();
        assert_eq!(order, ["a0", "a1", "b0", "b1", "c0"]);

        assert!(matches!(merge_manifests(&[a.clone(), a], "dup"), Err(Error::Validation(_))));
        assert!(merge_manifests(&[], "none").is_err());
    }

    #[test]
    fn manifest_jsonl_format() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest {
            name: "set".into(),
            entries: vec![entry("x.pgm", Label::Morph, Split::Val)],
        };
        let p = dir.path().join("set.jsonl");
        m.write_jsonl(&p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text, "{\"path\":\"x.pgm\",\"label\":1,\"split\":\"val\"}\n");
        assert_eq!(DatasetManifest::read_jsonl(&p).unwrap(), m);

        fs::write(&p, "{\"path\":\"x\",\"label\":2,\"split\":\"val\"}\n").unwrap();
        assert!(matches!(DatasetManifest::read_jsonl(&p), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn training_validation_requires_both_labels_per_split() {
        let mut m = DatasetManifest {
            name: "m".into(),
            entries: Split::ALL
                .iter()
                .flat_map(|&s| {
                    let tag = format!("{s:?}");
                    [entry(&format!("{tag}0"), Label::BonaFide, s), entry(&format!("{tag}1"), Label::Morph, s)]
                })
                .collect(),
        };
        m.validate_for_training().unwrap();
        m.entries.pop();
        assert!(matches!(m.validate_for_training(), Err(Error::Validation(_))));
    }

    #[test]
    fn synth_config_validation() {
        let bad = SynthConfig {
            n_pairs: 1,
            ..Default::default()
        };
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("n_pairs"));
        assert!(SynthConfig { alpha: 1.5, ..Default::default() }.validate().is_err());
        assert!(SynthConfig { artifact_period: 1, ..Default::default() }.validate().is_err());
        assert_eq!(SynthConfig::default().split_sizes(), [140, 30, 30]);
    }

    #[test]
    fn degenerate_blend_reproduces_first_parent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = synth_bona_fide(16, 3, &mut rng);
        let b = synth_bona_fide(16, 3, &mut rng);
        let art = checkerboard(16, 2);
        assert_eq!(blend_morph(a.view(), b.view(), 1.0, art.view(), 0.0), a);
    }

    #[test]
    fn artifact_energy_concentrates_in_finest_diagonal_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = synth_bona_fide(32, 4, &mut rng);
        let b = synth_bona_fide(32, 4, &mut rng);
        let art = checkerboard(32, 2);
        let spec = build_filters(WaveletFamily::Haar);
        let plain = decompose(blend_morph(a.view(), b.view(), 0.5, art.view(), 0.0).view(), &spec).unwrap();
        let morph = decompose(blend_morph(a.view(), b.view(), 0.5, art.view(), 0.08).view(), &spec).unwrap();
        let diff = &morph.data - &plain.data;
        let energy: Vec<f64> = diff.outer_iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
        let best = (0..48).max_by(|&x, &y| energy[x].total_cmp(&energy[y])).unwrap();
        assert!(morph.paths[best].is_finest_diagonal());
    }

    #[test]
    fn synth_is_deterministic_and_split_70_15_15() {
        let cfg = SynthConfig {
            image_size: 16,
            n_pairs: 20,
            ..Default::default()
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let (m1, s1) = synth_dataset(&cfg, d1.path()).unwrap();
        let (m2, _) = synth_dataset(&cfg, d2.path()).unwrap();
        assert_eq!(m1, m2);
        assert!(s1.clamped_fraction >= 0.0 && s1.clamped_fraction < 0.5);
        for e in &m1.entries {
            let x = fs::read(d1.path().join(&e.path)).unwrap();
            let y = fs::read(d2.path().join(&e.path)).unwrap();
            assert_eq!(x, y);
        }
        assert_eq!(m1.count(Split::Train, Label::Morph), 14);
        assert_eq!(m1.count(Split::Val, Label::BonaFide), 3);
        assert_eq!(m1.count(Split::Test, Label::Morph), 3);
        m1.validate_for_training().unwrap();

        let img = load_image(&d1.path().join(&m1.entries[0].path), 16).unwrap();
        assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn dataset_loading_and_channel_selection() {
        let cfg = SynthConfig {
            image_size: 16,
            n_pairs: 4,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let (m, _) = synth_dataset(&cfg, dir.path()).unwrap();
        let spec = build_filters(WaveletFamily::Haar);
        let data = load_dataset(&m, dir.path(), &spec, 16).unwrap();
        assert_eq!(data.len(), 8);
        assert_eq!(data.stacks[0].dim(), (48, 16, 16));
        let sub = data.select_channels(&[2, 40]).unwrap();
        assert_eq!(sub.stacks[3].dim(), (2, 16, 16));
        assert_eq!(sub.stacks[3].index_axis(ndarray::Axis(0), 1), data.stacks[3].index_axis(ndarray::Axis(0), 40));
        assert!(data.select_channels(&[]).is_err());
        assert!(data.select_channels(&[48]).is_err());
    }
}
