//! Morph attack detection error rates.
//!
//! Scores are morph likelihoods. A sample is classified as Morph iff
//! `score >= t`. APCER is the fraction of morphs classified bona fide,
//! BPCER the fraction of bona fides classified morph.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataio::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSample {
    pub score: f64,
    pub label: Label,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    pub entries: Vec<ScoredSample>,
}

impl ScoreSet {
    pub fn new(scores: &[f64], labels: &[Label]) -> Result<ScoreSet> {
        if scores.len() != labels.len() {
            return Err(Error::Metric("score and label counts differ".into()));
        }
        let set = ScoreSet {
            entries: scores
                .iter()
                .zip(labels)
                .map(|(&score, &label)| ScoredSample { score, label })
                .collect(),
        };
        if set.entries.iter().any(|e| !e.score.is_finite()) {
            return Err(Error::Metric("scores must be finite".into()));
        }
        Ok(set)
    }

    /// Separate bona fide and morph score lists.
    pub fn from_parts(bona_fide: &[f64], morph: &[f64]) -> Result<ScoreSet> {
        let scores: Vec<f64> = bona_fide.iter().chain(morph).copied().collect();
        let labels: Vec<Label> = std::iter::repeat_n(Label::BonaFide, bona_fide.len())
            .chain(std::iter::repeat_n(Label::Morph, morph.len()))
            .collect();
        ScoreSet::new(&scores, &labels)
    }

    pub fn count(&self, label: Label) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }

    fn scores_of(&self, label: Label) -> Vec<f64> {
        self.entries.iter().filter(|e| e.label == label).map(|e| e.score).collect()
    }

    fn require(&self, label: Label) -> Result<usize> {
        match self.count(label) {
            0 => Err(Error::Metric(format!("no {label:?} scores"))),
            n => Ok(n),
        }
    }

    fn require_both(&self) -> Result<(usize, usize)> {
        Ok((self.require(Label::BonaFide)?, self.require(Label::Morph)?))
    }

    /// Labels swapped.
    pub fn swapped(&self) -> ScoreSet {
        ScoreSet {
            entries: self
                .entries
                .iter()
                .map(|e| ScoredSample {
                    score: e.score,
                    label: match e.label {
                        Label::BonaFide => Label::Morph,
                        Label::Morph => Label::BonaFide,
                    },
                })
                .collect(),
        }
    }
}

pub fn apcer(scores: &ScoreSet, t: f64) -> Result<f64> {
    let n = scores.require(Label::Morph)?;
    let missed = scores
        .entries
        .iter()
        .filter(|e| e.label == Label::Morph && e.score < t)
        .count();
    Ok(missed as f64 / n as f64)
}

pub fn bpcer(scores: &ScoreSet, t: f64) -> Result<f64> {
    let n = scores.require(Label::BonaFide)?;
    let flagged = scores
        .entries
        .iter()
        .filter(|e| e.label == Label::BonaFide && e.score >= t)
        .count();
    Ok(flagged as f64 / n as f64)
}

/// Operating points over every candidate threshold, ascending: `-inf`,
/// each distinct score, midpoints between consecutive distinct scores, and
/// `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetCurve {
    pub points: Vec<DetPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub threshold: f64,
    pub apcer: f64,
    pub bpcer: f64,
}

impl DetCurve {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "threshold,apcer,bpcer")?;
        for p in &self.points {
            writeln!(w, "{},{},{}", p.threshold, p.apcer, p.bpcer)?;
        }
        Ok(())
    }
}

/// Candidate thresholds in ascending order.
pub fn candidate_thresholds(scores: &ScoreSet) -> Vec<f64> {
    let mut distinct: Vec<f64> = scores.entries.iter().map(|e| e.score).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut out = Vec::with_capacity(2 * distinct.len() + 1);
    out.push(f64::NEG_INFINITY);
    for (i, &s) in distinct.iter().enumerate() {
        if i > 0 {
            out.push(distinct[i - 1] + (s - distinct[i - 1]) / 2.0);
        }
        out.push(s);
    }
    out.push(f64::INFINITY);
    // a midpoint can round onto a neighbour when scores are adjacent floats
    out.dedup();
    out
}

/// Sweeps all candidate thresholds in one pass over the sorted scores.
pub fn det_curve(scores: &ScoreSet) -> Result<DetCurve> {
    let (n_bona, n_morph) = scores.require_both()?;
    let mut morph = scores.scores_of(Label::Morph);
    let mut bona = scores.scores_of(Label::BonaFide);
    morph.sort_by(f64::total_cmp);
    bona.sort_by(f64::total_cmp);
    let (mut im, mut ib) = (0usize, 0usize);
    let points = candidate_thresholds(scores)
        .into_iter()
        .map(|t| {
            // counts of scores strictly below t
            while im < morph.len() && morph[im] < t {
                im += 1;
            }
            while ib < bona.len() && bona[ib] < t {
                ib += 1;
            }
            DetPoint {
                threshold: t,
                apcer: im as f64 / n_morph as f64,
                bpcer: (n_bona - ib) as f64 / n_bona as f64,
            }
        })
        .collect();
    Ok(DetCurve { points })
}

/// Detection equal error rate: mean of APCER and BPCER at the threshold
/// minimizing `|APCER - BPCER|`, smallest threshold on ties.
pub fn d_eer(scores: &ScoreSet) -> Result<f64> {
    let curve = det_curve(scores)?;
    let mut best = curve.points[0];
    for p in &curve.points[1..] {
        if (p.apcer - p.bpcer).abs() < (best.apcer - best.bpcer).abs() {
            best = *p;
        }
    }
    Ok((best.apcer + best.bpcer) / 2.0)
}

/// BPCER at the largest threshold whose APCER does not exceed `target`.
pub fn bpcer_at_apcer(scores: &ScoreSet, target: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::Metric(format!("target APCER {target} outside [0, 1]")));
    }
    let curve = det_curve(scores)?;
    let point = curve
        .points
        .iter()
        .rev()
        .find(|p| p.apcer <= target)
        .expect("APCER is zero at -inf");
    Ok(point.bpcer)
}

/// Mann-Whitney AUC: probability a random morph outscores a random bona
/// fide, ties counted one half. Uses average ranks.
pub fn auc(scores: &ScoreSet) -> Result<f64> {
    let (n_bona, n_morph) = scores.require_both()?;
    let mut order: Vec<&ScoredSample> = scores.entries.iter().collect();
    order.sort_by(|a, b| a.score.total_cmp(&b.score));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && order[j + 1].score == order[i].score {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|e| e.label == Label::Morph).count() as f64;
        i = j + 1;
    }
    let m = n_morph as f64;
    Ok((rank_sum - m * (m + 1.0) / 2.0) / (m * n_bona as f64))
}

/// Summary written as `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub d_eer: f64,
    pub bpcer5: f64,
    pub bpcer10: f64,
    pub auc: f64,
    pub n_bonafide: usize,
    pub n_morph: usize,
    pub d_eer_pct: String,
    pub bpcer5_pct: String,
    pub bpcer10_pct: String,
}

pub fn metrics_report(scores: &ScoreSet) -> Result<MetricsReport> {
    let d = d_eer(scores)?;
    let b5 = bpcer_at_apcer(scores, 0.05)?;
    let b10 = bpcer_at_apcer(scores, 0.10)?;
    let pct = |v: f64| format!("{:.2}", v * 100.0);
    Ok(MetricsReport {
        d_eer: d,
        bpcer5: b5,
        bpcer10: b10,
        auc: auc(scores)?,
        n_bonafide: scores.count(Label::BonaFide),
        n_morph: scores.count(Label::Morph),
        d_eer_pct: pct(d),
        bpcer5_pct: pct(b5),
        bpcer10_pct: pct(b10),
    })
}
