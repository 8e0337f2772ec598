//! `key=value` run configuration shared by every command.

use std::fs;
use std::path::{Path, PathBuf};

use wavesel::dataio::{Split, SynthConfig};
use wavesel::explain::TargetClass;
use wavesel::trainer::{TrainConfig, DEFAULT_LAMBDA_GRID};
use wavesel::wavelet::WaveletFamily;
use wavesel::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub family: WaveletFamily,
    pub grid: Vec<f64>,
    pub split: Split,
    pub target: TargetClass,
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub run: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub selection: Option<PathBuf>,
    pub image: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::desk(),
            synth: SynthConfig::default(),
            family: WaveletFamily::Haar,
            grid: DEFAULT_LAMBDA_GRID.to_vec(),
            split: Split::Test,
            target: TargetClass::Morph,
            manifest: None,
            out: None,
            run: None,
            checkpoint: None,
            selection: None,
            image: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

impl RunConfig {
    /// Applies one setting. `seed` and `image_size` feed both the synthetic
    /// generator and training.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "seed" => {
                self.train.seed = parse(key, value)?;
                self.synth.seed = self.train.seed;
            }
            "image_size" => self.synth.image_size = parse(key, value)?,
            "pairs" => self.synth.n_pairs = parse(key, value)?,
            "blob_count" => self.synth.blob_count = parse(key, value)?,
            "artifact_amplitude" => self.synth.artifact_amplitude = parse(key, value)?,
            "artifact_period" => self.synth.artifact_period = parse(key, value)?,
            "alpha" => self.synth.alpha = parse(key, value)?,
            "family" => self.family = value.parse()?,
            "grid" => {
                self.grid = value
                    .split(',')
                    .map(|s| parse::<f64>(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "split" => self.split = value.parse()?,
            "target" => self.target = value.parse()?,
            "manifest" => self.manifest = Some(value.into()),
            "out" => self.out = Some(value.into()),
            "run" => self.run = Some(value.into()),
            "checkpoint" => self.checkpoint = Some(value.into()),
            "selection" => self.selection = Some(value.into()),
            "image" => self.image = Some(value.into()),
            _ if TrainConfig::KEYS.contains(&key) => self.train.set(key, value)?,
            other => return Err(Error::Config(format!("unknown configuration key '{other}'"))),
        }
        Ok(())
    }

    /// Reads a config file: one `key=value` per line, `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(format!("config file {} not found", path.display())),
            _ => Error::Io(e),
        })?;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{}:{}: expected key=value", path.display(), n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.synth.validate()?;
        if self.grid.is_empty() || self.grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::Config("grid must be a non-empty list of lambdas >= 0".into()));
        }
        Ok(())
    }

    pub fn image_size(&self) -> usize {
        self.synth.image_size
    }

    pub fn require<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
        field
            .as_deref()
            .ok_or_else(|| Error::Config(format!("missing required setting '{name}' (flag --{name})")))
    }

    /// Every setting as `(key, value)` for provenance records.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self.train.to_kv().into_iter().collect();
        let s = &self.synth;
        out.extend([
            ("image_size".into(), s.image_size.to_string()),
            ("pairs".into(), s.n_pairs.to_string()),
            ("blob_count".into(), s.blob_count.to_string()),
            ("artifact_amplitude".into(), s.artifact_amplitude.to_string()),
            ("artifact_period".into(), s.artifact_period.to_string()),
            ("alpha".into(), s.alpha.to_string()),
            ("family".into(), self.family.to_string()),
            (
                "grid".into(),
                self.grid.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(","),
            ),
            ("split".into(), self.split.to_string()),
            (
                "target".into(),
                match self.target {
                    TargetClass::Morph => "morph".into(),
                    TargetClass::BonaFide => "bonafide".into(),
                },
            ),
        ]);
        for (k, v) in [
            ("manifest", &self.manifest),
            ("out", &self.out),
            ("run", &self.run),
            ("checkpoint", &self.checkpoint),
            ("selection", &self.selection),
            ("image", &self.image),
        ] {
            if let Some(p) = v {
                out.push((k.into(), p.display().to_string()));
            }
        }
        out.sort();
        out
    }
}
