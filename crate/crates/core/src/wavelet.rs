//! Undecimated (à trous) uniform wavelet packet decomposition.
//!
//! An image is split once at level 1, the low-low branch is dropped, and the
//! three remaining detail bands are each split into all four children at
//! levels 2 and 3. Every band keeps the input resolution, giving a fixed
//! 48-channel stack.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of channels in a full decomposition.
pub const FULL_CHANNELS: usize = 48;

/// Smallest accepted side length for [`decompose`].
pub const MIN_SIDE: usize = 8;

const STACK_MAGIC: &[u8; 4] = b"SBS1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveletFamily {
    Haar,
    Db2,
}

impl FromStr for WaveletFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "haar" => Ok(WaveletFamily::Haar),
            "db2" => Ok(WaveletFamily::Db2),
            other => Err(Error::Config(format!("unsupported wavelet family '{other}'"))),
        }
    }
}

impl fmt::Display for WaveletFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WaveletFamily::Haar => f.write_str("haar"),
            WaveletFamily::Db2 => f.write_str("db2"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Periodic,
}

/// Analysis filter pair of an orthonormal two-channel filter bank.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletSpec {
    pub family: WaveletFamily,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub boundary: Boundary,
}

/// Builds the analysis filters for `family`. The high-pass filter is the
/// quadrature mirror of the low-pass: `hi[k] = (-1)^k lo[L-1-k]`.
pub fn build_filters(family: WaveletFamily) -> WaveletSpec {
    let lo = match family {
        WaveletFamily::Haar => {
            let h = std::f64::consts::FRAC_1_SQRT_2;
            vec![h, h]
        }
        WaveletFamily::Db2 => {
            let s3 = 3f64.sqrt();
            let d = 4.0 * std::f64::consts::SQRT_2;
            vec![(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d]
        }
    };
    let len = lo.len();
    let hi = (0..len)
        .map(|k| if k % 2 == 0 { lo[len - 1 - k] } else { -lo[len - 1 - k] })
        .collect();
    WaveletSpec {
        family,
        lo,
        hi,
        boundary: Boundary::Periodic,
    }
}

/// One node label of a filter-bank path, named (row filter, column filter).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Band {
    LL,
    LH,
    HL,
    HH,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::LL, Band::LH, Band::HL, Band::HH];
    pub const DETAIL: [Band; 3] = [Band::LH, Band::HL, Band::HH];

    fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Band::LL => "LL",
            Band::LH => "LH",
            Band::HL => "HL",
            Band::HH => "HH",
        }
    }
}

impl FromStr for Band {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "LL" => Ok(Band::LL),
            "LH" => Ok(Band::LH),
            "HL" => Ok(Band::HL),
            "HH" => Ok(Band::HH),
            other => Err(Error::Input(format!("unknown band '{other}'"))),
        }
    }
}

/// Sequence of bands from level 1 (finest) to level 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubbandPath {
    pub steps: [Band; 3],
}

impl SubbandPath {
    /// All 48 admissible paths in channel order.
    pub fn all() -> Vec<SubbandPath> {
        let mut out = Vec::with_capacity(FULL_CHANNELS);
        for first in Band::DETAIL {
            for second in Band::ALL {
                for third in Band::ALL {
                    out.push(SubbandPath {
                        steps: [first, second, third],
                    });
                }
            }
        }
        out
    }

    /// Channel index of this path in a full decomposition.
    pub fn channel(&self) -> usize {
        (self.steps[0].index() - 1) * 16 + self.steps[1].index() * 4 + self.steps[2].index()
    }

    pub fn from_channel(channel: usize) -> Option<SubbandPath> {
        if channel >= FULL_CHANNELS {
            return None;
        }
        Some(SubbandPath {
            steps: [
                Band::DETAIL[channel / 16],
                Band::ALL[(channel / 4) % 4],
                Band::ALL[channel % 4],
            ],
        })
    }

    /// True when the finest-level step is the diagonal detail band.
    pub fn is_finest_diagonal(&self) -> bool {
        self.steps[0] == Band::HH
    }
}

impl fmt::Display for SubbandPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}.{}.{}",
            self.steps[0].as_str(),
            self.steps[1].as_str(),
            self.steps[2].as_str()
        )
    }
}

impl FromStr for SubbandPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split('.').collect();
        if parts.len() != 3 {
            return Err(Error::Input(format!("path '{s}' must have three steps")));
        }
        let steps = [parts[0].parse()?, parts[1].parse()?, parts[2].parse()?];
        if steps[0] == Band::LL {
            return Err(Error::Input(format!("path '{s}' starts in the discarded LL branch")));
        }
        Ok(SubbandPath { steps })
    }
}

impl Serialize for SubbandPath {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SubbandPath {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// C×H×W stack of same-resolution sub-bands.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandStack {
    pub data: Array3<f64>,
    pub paths: Vec<SubbandPath>,
    pub source_size: (usize, usize),
}

impl SubbandStack {
    pub fn channels(&self) -> usize {
        self.data.len_of(Axis(0))
    }

    /// Keeps only the channels at `selected` (indices into this stack).
    pub fn select(&self, selected: &[usize]) -> Result<SubbandStack> {
        if selected.is_empty() {
            return Err(Error::Input("empty channel selection".into()));
        }
        if let Some(&bad) = selected.iter().find(|&&c| c >= self.channels()) {
            return Err(Error::Input(format!(
                "channel {bad} out of range for a {}-channel stack",
                self.channels()
            )));
        }
        Ok(SubbandStack {
            data: self.data.select(Axis(0), selected),
            paths: selected.iter().map(|&c| self.paths[c]).collect(),
            source_size: self.source_size,
        })
    }

    /// Writes the `SBS1` binary format.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let (c, h, wd) = self.data.dim();
        w.write_all(STACK_MAGIC)?;
        for dim in [c, h, wd] {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(c * h * wd * 4);
        for &v in self.data.iter() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        for p in &self.paths {
            writeln!(w, "{p}")?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R, origin: &std::path::Path) -> Result<SubbandStack> {
        let corrupt = |reason: &str| Error::Corrupt {
            path: origin.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 16 || &bytes[..4] != STACK_MAGIC {
            return Err(Error::UnsupportedFormat {
                path: origin.to_path_buf(),
                reason: "missing SBS1 magic".into(),
            });
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (c, h, w) = (dim(0), dim(1), dim(2));
        let n = c
            .checked_mul(h)
            .and_then(|v| v.checked_mul(w))
            .ok_or_else(|| corrupt("dimension overflow"))?;
        let end = 16 + n * 4;
        if bytes.len() < end {
            return Err(corrupt("truncated coefficient block"));
        }
        let values: Vec<f64> = bytes[16..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        let text = std::str::from_utf8(&bytes[end..]).map_err(|_| corrupt("path block is not UTF-8"))?;
        let paths = text
            .lines()
            .filter(|l| !l.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<SubbandPath>>>()?;
        if paths.len() != c {
            return Err(corrupt("path count does not match channel count"));
        }
        let data = Array3::from_shape_vec((c, h, w), values).map_err(|e| corrupt(&e.to_string()))?;
        Ok(SubbandStack {
            data,
            paths,
            source_size: (h, w),
        })
    }
}

/// Periodic circular convolution of every row (or column) with a filter
/// dilated by `dilation`: `y[n] = sum_k f[k] x[(n - k*dilation) mod len]`.
fn filter_axis(plane: ArrayView2<f64>, taps: &[f64], dilation: usize, axis: Axis) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros(plane.raw_dim());
    let len = plane.len_of(axis);
    for (src, mut dst) in plane.lanes(axis).into_iter().zip(out.lanes_mut(axis)) {
        for n in 0..len {
            let mut acc = 0.0;
            for (k, &f) in taps.iter().enumerate() {
                let shift = (k * dilation) % len;
                acc += f * src[(n + len - shift) % len];
            }
            dst[n] = acc;
        }
    }
    out
}

/// One undecimated analysis step at `level` (filters dilated by
/// `2^(level-1)`). Returns the bands in `[LL, LH, HL, HH]` order, where the
/// first letter is the filter applied along rows and the second along
/// columns.
pub fn analysis_step(plane: ArrayView2<f64>, spec: &WaveletSpec, level: u32) -> Result<[Array2<f64>; 4]> {
    if plane.is_empty() {
        return Err(Error::Input("cannot analyse an empty plane".into()));
    }
    if level == 0 {
        return Err(Error::Input("analysis level must be at least 1".into()));
    }
    let dilation = 1usize << (level - 1);
    // Row filtering runs along each row, i.e. over the column index.
    let row_lo = filter_axis(plane, &spec.lo, dilation, Axis(1));
    let row_hi = filter_axis(plane, &spec.hi, dilation, Axis(1));
    Ok([
        filter_axis(row_lo.view(), &spec.lo, dilation, Axis(0)),
        filter_axis(row_lo.view(), &spec.hi, dilation, Axis(0)),
        filter_axis(row_hi.view(), &spec.lo, dilation, Axis(0)),
        filter_axis(row_hi.view(), &spec.hi, dilation, Axis(0)),
    ])
}

/// Three-level uniform packet decomposition with the level-1 LL branch
/// discarded. Channel order follows [`SubbandPath::all`].
pub fn decompose(image: ArrayView2<f64>, spec: &WaveletSpec) -> Result<SubbandStack> {
    let (h, w) = image.dim();
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(Error::Input(format!(
            "image {h}x{w} is smaller than the {MIN_SIDE}x{MIN_SIDE} minimum"
        )));
    }
    let mut data = Array3::<f64>::zeros((FULL_CHANNELS, h, w));
    let level1 = analysis_step(image, spec, 1)?;
    let mut channel = 0;
    for first in &level1[1..] {
        let level2 = analysis_step(first.view(), spec, 2)?;
        for second in &level2 {
            for third in analysis_step(second.view(), spec, 3)? {
                data.index_axis_mut(Axis(0), channel).assign(&third);
                channel += 1;
            }
        }
    }
    debug_assert_eq!(channel, FULL_CHANNELS);
    Ok(SubbandStack {
        data,
        paths: SubbandPath::all(),
        source_size: (h, w),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(h: usize, w: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((h, w), |_| rng.random::<f64>())
    }

    /// Brute-force 2-D circular convolution with separable dilated taps.
    fn conv2d_oracle(x: &Array2<f64>, row: &[f64], col: &[f64], dilation: usize) -> Array2<f64> {
        let (h, w) = x.dim();
        let mut out = Array2::zeros((h, w));
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for (a, &fc) in col.iter().enumerate() {
                    for (b, &fr) in row.iter().enumerate() {
                        let si = (i as isize - (a * dilation) as isize).rem_euclid(h as isize) as usize;
                        let sj = (j as isize - (b * dilation) as isize).rem_euclid(w as isize) as usize;
                        acc += fc * fr * x[[si, sj]];
                    }
                }
                out[[i, j]] = acc;
            }
        }
        out
    }

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn haar_taps() {
        let s = build_filters(WaveletFamily::Haar);
        assert!((s.lo[0] - 0.70710678).abs() < 1e-8 && (s.lo[1] - 0.70710678).abs() < 1e-8);
        assert!((s.hi[0] - 0.70710678).abs() < 1e-8 && (s.hi[1] + 0.70710678).abs() < 1e-8);
    }

    #[test]
    fn filter_invariants_hold_for_every_family() {
        for fam in [WaveletFamily::Haar, WaveletFamily::Db2] {
            let s = build_filters(fam);
            assert_eq!(s.lo.len(), s.hi.len());
            assert!(s.lo.len() >= 2);
            assert!((s.lo.iter().sum::<f64>() - std::f64::consts::SQRT_2).abs() < 1e-12);
            assert!(s.hi.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn db2_satisfies_daubechies_constraints() {
        let lo = build_filters(WaveletFamily::Db2).lo;
        // sum, unit energy, orthogonality to the shift by two, one extra
        // vanishing moment on the high-pass side
        assert!((lo.iter().sum::<f64>() - 2f64.sqrt()).abs() < 1e-12);
        assert!((lo.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((lo[0] * lo[2] + lo[1] * lo[3]).abs() < 1e-12);
        let moment: f64 = (0..4).map(|k| (k as f64) * if k % 2 == 0 { lo[3 - k] } else { -lo[3 - k] }).sum();
        assert!(moment.abs() < 1e-12);
        // tabulated values
        let table = [0.48296291314453, 0.83651630373781, 0.22414386804201, -0.12940952255126];
        for (a, b) in lo.iter().zip(table) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn family_parsing() {
        assert_eq!("Haar".parse::<WaveletFamily>().unwrap(), WaveletFamily::Haar);
        assert_eq!("db2".parse::<WaveletFamily>().unwrap(), WaveletFamily::Db2);
        assert!(matches!("sym4".parse::<WaveletFamily>(), Err(Error::Config(_))));
    }

    #[test]
    fn constant_plane_step() {
        let plane = Array2::from_elem((8, 8), 0.37);
        for fam in [WaveletFamily::Haar, WaveletFamily::Db2] {
            let spec = build_filters(fam);
            for level in 1..=3 {
                let [ll, lh, hl, hh] = analysis_step(plane.view(), &spec, level).unwrap();
                assert!(ll.iter().all(|v| (v - 0.74).abs() < 1e-10));
                for band in [lh, hl, hh] {
                    assert!(band.iter().all(|v| v.abs() < 1e-10));
                }
            }
        }
    }

    #[test]
    fn empty_plane_rejected() {
        let spec = build_filters(WaveletFamily::Haar);
        let plane = Array2::<f64>::zeros((0, 4));
        assert!(matches!(analysis_step(plane.view(), &spec, 1), Err(Error::Input(_))));
    }

    #[test]
    fn step_is_linear() {
        let spec = build_filters(WaveletFamily::Db2);
        let a = random_plane(12, 10, 1);
        let b = random_plane(12, 10, 2);
        let sum = &a + &b;
        let ra = analysis_step(a.view(), &spec, 2).unwrap();
        let rb = analysis_step(b.view(), &spec, 2).unwrap();
        let rs = analysis_step(sum.view(), &spec, 2).unwrap();
        for k in 0..4 {
            assert!(max_abs_diff(&(&ra[k] + &rb[k]), &rs[k]) < 1e-12);
        }
    }

    #[test]
    fn impulse_response_is_outer_product_of_taps() {
        let spec = build_filters(WaveletFamily::Haar);
        let mut x = Array2::<f64>::zeros((4, 4));
        x[[0, 0]] = 1.0;
        let bands = analysis_step(x.view(), &spec, 1).unwrap();
        let pairs = [(&spec.lo, &spec.lo), (&spec.lo, &spec.hi), (&spec.hi, &spec.lo), (&spec.hi, &spec.hi)];
        for (band, (row, col)) in bands.iter().zip(pairs) {
            let oracle = conv2d_oracle(&x, row, col, 1);
            assert!(max_abs_diff(band, &oracle) < 1e-15);
            // outer product col ⊗ row over the first two taps, zeros elsewhere
            for i in 0..4 {
                for j in 0..4 {
                    let expect = if i < 2 && j < 2 { col[i] * row[j] } else { 0.0 };
                    assert!((band[[i, j]] - expect).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn step_matches_convolution_oracle_at_each_level() {
        let x = random_plane(9, 11, 5);
        for fam in [WaveletFamily::Haar, WaveletFamily::Db2] {
            let spec = build_filters(fam);
            for level in 1..=3u32 {
                let d = 1usize << (level - 1);
                let bands = analysis_step(x.view(), &spec, level).unwrap();
                let pairs = [(&spec.lo, &spec.lo), (&spec.lo, &spec.hi), (&spec.hi, &spec.lo), (&spec.hi, &spec.hi)];
                for (band, (row, col)) in bands.iter().zip(pairs) {
                    assert!(max_abs_diff(band, &conv2d_oracle(&x, row, col, d)) < 1e-12);
                }
            }
        }
    }

    #[test]
    fn level_one_energy_is_four_times_input() {
        for fam in [WaveletFamily::Haar, WaveletFamily::Db2] {
            let spec = build_filters(fam);
            let x = random_plane(16, 16, 9);
            let energy: f64 = x.iter().map(|v| v * v).sum();
            let bands = analysis_step(x.view(), &spec, 1).unwrap();
            let total: f64 = bands.iter().flat_map(|b| b.iter()).map(|v| v * v).sum();
            assert!((total - 4.0 * energy).abs() < 1e-8);
        }
    }

    #[test]
    fn path_layout() {
        let paths = SubbandPath::all();
        assert_eq!(paths.len(), 48);
        assert_eq!(paths[0].to_string(), "LH.LL.LL");
        assert_eq!(paths[47].to_string(), "HH.HH.HH");
        for (i, p) in paths.iter().enumerate() {
            assert_eq!(p.channel(), i);
            assert_eq!(SubbandPath::from_channel(i), Some(*p));
            assert_eq!(p.to_string().parse::<SubbandPath>().unwrap(), *p);
            assert_ne!(p.steps[0], Band::LL);
        }
        assert!(paths.windows(2).all(|w| w[0] < w[1]));
        assert!("LL.HH.HH".parse::<SubbandPath>().is_err());
        assert_eq!(SubbandPath::from_channel(48), None);
    }

    #[test]
    fn decompose_shape_and_constant_image() {
        let spec = build_filters(WaveletFamily::Haar);
        let img = Array2::from_elem((160, 160), 0.8);
        let stack = decompose(img.view(), &spec).unwrap();
        assert_eq!(stack.data.dim(), (48, 160, 160));
        assert_eq!(stack.source_size, (160, 160));
        assert!(stack.data.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn decompose_rejects_small_images() {
        let spec = build_filters(WaveletFamily::Haar);
        let img = Array2::<f64>::zeros((7, 16));
        assert!(matches!(decompose(img.view(), &spec), Err(Error::Input(_))));
    }

    #[test]
    fn decompose_matches_manual_path_composition() {
        let spec = build_filters(WaveletFamily::Haar);
        let img = random_plane(16, 16, 3);
        let stack = decompose(img.view(), &spec).unwrap();
        for (c, path) in SubbandPath::all().iter().enumerate() {
            let mut plane = img.clone();
            for (lvl, band) in path.steps.iter().enumerate() {
                let bands = analysis_step(plane.view(), &spec, lvl as u32 + 1).unwrap();
                plane = bands[band.index()].clone();
            }
            let got = stack.data.index_axis(Axis(0), c).to_owned();
            assert!(max_abs_diff(&got, &plane) < 1e-14, "channel {c}");
        }
    }

    #[test]
    fn checkerboard_energy_lands_in_finest_diagonal_branch() {
        let spec = build_filters(WaveletFamily::Haar);
        let img = Array2::from_shape_fn((16, 16), |(i, j)| if (i + j) % 2 == 0 { 1.0 } else { -1.0 });
        let stack = decompose(img.view(), &spec).unwrap();
        let energies: Vec<f64> = stack.data.outer_iter().map(|b| b.iter().map(|v| v * v).sum()).collect();
        let best = (0..48).max_by(|&a, &b| energies[a].total_cmp(&energies[b])).unwrap();
        assert_eq!(stack.paths[best].to_string(), "HH.LL.LL");
    }

    #[test]
    fn select_and_roundtrip_serialization() {
        let spec = build_filters(WaveletFamily::Db2);
        let img = random_plane(8, 12, 4);
        let stack = decompose(img.view(), &spec).unwrap();
        let sub = stack.select(&[0, 17, 47]).unwrap();
        assert_eq!(sub.channels(), 3);
        assert_eq!(sub.paths[1], SubbandPath::from_channel(17).unwrap());
        assert!(stack.select(&[]).is_err());
        assert!(stack.select(&[48]).is_err());

        let mut buf = Vec::new();
        sub.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"SBS1");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 8);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 12);
        let back = SubbandStack::read_from(buf.as_slice(), std::path::Path::new("mem")).unwrap();
        assert_eq!(back.paths, sub.paths);
        let err = back
            .data
            .iter()
            .zip(sub.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6);

        let bad = SubbandStack::read_from(&b"XXXX0000"[..], std::path::Path::new("mem"));
        assert!(matches!(bad, Err(Error::UnsupportedFormat { .. })));
        let truncated = SubbandStack::read_from(&buf[..40], std::path::Path::new("mem"));
        assert!(matches!(truncated, Err(Error::Corrupt { .. })));
    }
}
