//! Mask overlap metrics, contour distances and survey tallies.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::OpError;
use crate::femur::Region;
use crate::geometry::Point;
use crate::image::{ImageBuffer, FG};
use crate::regions::Contour;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error(transparent)]
    Op(#[from] OpError),
    #[error("contour has no points")]
    EmptyContour,
    #[error("no votes to tally")]
    EmptyVotes,
    #[error("vote {index}: verdict {verdict:?} does not belong to survey {survey}")]
    MixedVerdictDomain { index: usize, survey: String, verdict: String },
    #[error("vote {index}: {reason}")]
    BadVote { index: usize, reason: String },
    #[error("votes CSV: {0}")]
    Csv(String),
}

impl EvalError {
    pub fn name(&self) -> &'static str {
        match self {
            EvalError::Op(e) => e.name(),
            EvalError::EmptyContour => "EmptyContour",
            EvalError::EmptyVotes => "EmptyVotes",
            EvalError::MixedVerdictDomain { .. } => "MixedVerdictDomain",
            EvalError::BadVote { .. } => "BadVote",
            EvalError::Csv(_) => "Csv",
        }
    }
}

fn counts(a: &ImageBuffer, b: &ImageBuffer) -> Result<(usize, usize, usize), EvalError> {
    a.same_dims(b)?;
    a.require_binary()?;
    b.require_binary()?;
    let (mut na, mut nb, mut both) = (0, 0, 0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (p, q) = (x == FG, y == FG);
        na += p as usize;
        nb += q as usize;
        both += (p && q) as usize;
    }
    Ok((na, nb, both))
}

/// `2|a∩b| / (|a|+|b|)`; 1 when both masks are empty.
pub fn dice(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, EvalError> {
    let (na, nb, both) = counts(a, b)?;
    Ok(if na + nb == 0 { 1.0 } else { 2.0 * both as f64 / (na + nb) as f64 })
}

/// `|a∩b| / |a∪b|`; 1 when both masks are empty.
pub fn jaccard(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, EvalError> {
    let (na, nb, both) = counts(a, b)?;
    let union = na + nb - both;
    Ok(if union == 0 { 1.0 } else { both as f64 / union as f64 })
}

/// Dice pooled over paired slices: `2Σ|a∩b| / Σ(|a|+|b|)`.
pub fn volume_dice<'a>(pairs: impl IntoIterator<Item = (&'a ImageBuffer, &'a ImageBuffer)>) -> Result<f64, EvalError> {
    let (mut sum, mut inter) = (0usize, 0usize);
    for (a, b) in pairs {
        let (na, nb, both) = counts(a, b)?;
        sum += na + nb;
        inter += both;
    }
    Ok(if sum == 0 { 1.0 } else { 2.0 * inter as f64 / sum as f64 })
}

fn directed<'a>(a: &'a [Point], b: &'a [Point]) -> impl Iterator<Item = f64> + 'a {
    a.iter().map(move |&(ax, ay)| {
        b.iter()
            .map(|&(bx, by)| ((ax - bx) as f64).powi(2) + ((ay - by) as f64).powi(2))
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    })
}

/// Symmetric Hausdorff distance between point sets, scaled by `spacing` (mm/px).
pub fn hausdorff_points(a: &[Point], b: &[Point], spacing: f64) -> Result<f64, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::EmptyContour);
    }
    let ab = directed(a, b).fold(0.0, f64::max);
    let ba = directed(b, a).fold(0.0, f64::max);
    Ok(ab.max(ba) * spacing)
}

pub fn hausdorff(a: &Contour, b: &Contour, spacing: f64) -> Result<f64, EvalError> {
    hausdorff_points(&a.points, &b.points, spacing)
}

/// Mean of all point-to-nearest-point distances in both directions, mm.
pub fn mean_surface_distance(a: &[Point], b: &[Point], spacing: f64) -> Result<f64, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::EmptyContour);
    }
    let total: f64 = directed(a, b).sum::<f64>() + directed(b, a).sum::<f64>();
    Ok(total / (a.len() + b.len()) as f64 * spacing)
}

/// Foreground pixels with a 4-neighbor outside the mask (frame edge included).
pub fn boundary_points(mask: &ImageBuffer) -> Vec<Point> {
    let (w, h) = mask.dims();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) != FG {
                continue;
            }
            let edge = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || mask.get(x - 1, y) != FG
                || mask.get(x + 1, y) != FG
                || mask.get(x, y - 1) != FG
                || mask.get(x, y + 1) != FG;
            if edge {
                out.push((x as i32, y as i32));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dice: f64,
    pub jaccard: f64,
    pub hausdorff_mm: f64,
    pub mean_surface_distance_mm: f64,
}

/// All metrics for a pair of masks; distances use the mask boundaries.
pub fn compare_masks(a: &ImageBuffer, b: &ImageBuffer, spacing: f64) -> Result<MetricReport, EvalError> {
    let (pa, pb) = (boundary_points(a), boundary_points(b));
    Ok(MetricReport {
        dice: dice(a, b)?,
        jaccard: jaccard(a, b)?,
        hausdorff_mm: hausdorff_points(&pa, &pb, spacing)?,
        mean_surface_distance_mm: mean_surface_distance(&pa, &pb, spacing)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Survey {
    One,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Manual,
    Automatic,
}

/// Survey one: which of two side-by-side delineations is acceptable.
/// Survey two: how much editing a delineation needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Both,
    First,
    Second,
    None,
    NoneNeeded,
    Small,
    Medium,
    Large,
}

impl Verdict {
    pub fn survey(self) -> Survey {
        match self {
            Verdict::Both | Verdict::First | Verdict::Second | Verdict::None => Survey::One,
            _ => Survey::Two,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Verdict::Both => "both",
            Verdict::First => "first",
            Verdict::Second => "second",
            Verdict::None => "none",
            Verdict::NoneNeeded => "none_needed",
            Verdict::Small => "small",
            Verdict::Medium => "medium",
            Verdict::Large => "large",
        }
    }

    pub fn domain(survey: Survey) -> &'static [Verdict] {
        match survey {
            Survey::One => &[Verdict::Both, Verdict::First, Verdict::Second, Verdict::None],
            Survey::Two => &[Verdict::NoneNeeded, Verdict::Small, Verdict::Medium, Verdict::Large],
        }
    }
}

/// One CSV row: `survey,rater,item,region,source,verdict`. `region` may be
/// empty for survey two and `source` for survey one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub survey: Survey,
    pub rater: String,
    pub item: String,
    pub region: Option<Region>,
    pub source: Option<Source>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TallyGroup {
    pub survey: Survey,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region: Option<Region>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<Source>,
    pub total: usize,
    pub counts: BTreeMap<String, usize>,
    /// `100 × count / total` for every verdict in the survey's domain.
    pub percent: BTreeMap<String, f64>,
}

impl TallyGroup {
    pub fn pct(&self, v: Verdict) -> f64 {
        self.percent.get(v.name()).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TallyReport {
    pub v: u32,
    pub groups: Vec<TallyGroup>,
}

impl TallyReport {
    pub fn group(&self, survey: Survey, region: Option<Region>, source: Option<Source>) -> Option<&TallyGroup> {
        self.groups
            .iter()
            .find(|g| g.survey == survey && g.region == region && g.source == source)
    }
}

/// Percentages per group: survey one grouped by region, survey two by source.
pub fn tally_survey(votes: &[VoteRecord]) -> Result<TallyReport, EvalError> {
    if votes.is_empty() {
        return Err(EvalError::EmptyVotes);
    }
    type Key = (Survey, Option<Region>, Option<Source>);
    let mut groups: BTreeMap<Key, BTreeMap<Verdict, usize>> = BTreeMap::new();
    for (index, v) in votes.iter().enumerate() {
        if v.verdict.survey() != v.survey {
            return Err(EvalError::MixedVerdictDomain {
                index,
                survey: format!("{:?}", v.survey).to_lowercase(),
                verdict: v.verdict.name().to_string(),
            });
        }
        let key = match v.survey {
            Survey::One => (
                Survey::One,
                Some(v.region.ok_or_else(|| EvalError::BadVote {
                    index,
                    reason: "survey one votes need a region".into(),
                })?),
                None,
            ),
            Survey::Two => (
                Survey::Two,
                None,
                Some(v.source.ok_or_else(|| EvalError::BadVote {
                    index,
                    reason: "survey two votes need a source".into(),
                })?),
            ),
        };
        *groups.entry(key).or_default().entry(v.verdict).or_default() += 1;
    }
    let groups = groups
        .into_iter()
        .map(|((survey, region, source), tally)| {
            let total: usize = tally.values().sum();
            let domain = Verdict::domain(survey);
            TallyGroup {
                survey,
                region,
                source,
                total,
                counts: domain
                    .iter()
                    .map(|v| (v.name().to_string(), tally.get(v).copied().unwrap_or(0)))
                    .collect(),
                percent: domain
                    .iter()
                    .map(|v| {
                        let c = tally.get(v).copied().unwrap_or(0);
                        (v.name().to_string(), 100.0 * c as f64 / total as f64)
                    })
                    .collect(),
            }
        })
        .collect();
    Ok(TallyReport { v: 1, groups })
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    survey: String,
    rater: String,
    item: String,
    region: String,
    source: String,
    verdict: String,
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> Option<T> {
    serde_json::from_value(serde_json::Value::String(s.trim().to_string())).ok()
}

/// Reads votes from CSV with the header `survey,rater,item,region,source,verdict`.
pub fn read_votes_csv(reader: impl Read) -> Result<Vec<VoteRecord>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let expected = ["survey", "rater", "item", "region", "source", "verdict"];
    let headers = rdr.headers().map_err(|e| EvalError::Csv(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(EvalError::Csv(format!("header must be {}", expected.join(","))));
    }
    let mut out = Vec::new();
    for (index, row) in rdr.deserialize::<CsvRow>().enumerate() {
        let row = row.map_err(|e| EvalError::Csv(e.to_string()))?;
        let bad = |what: &str, v: &str| EvalError::BadVote {
            index,
            reason: format!("unknown {what} {v:?}"),
        };
        let opt = |s: &str| (!s.is_empty()).then_some(s.to_string());
        out.push(VoteRecord {
            survey: parse_enum(&row.survey).ok_or_else(|| bad("survey", &row.survey))?,
            rater: row.rater,
            item: row.item,
            region: match opt(&row.region) {
                None => None,
                Some(r) => Some(parse_enum(&r).ok_or_else(|| bad("region", &r))?),
            },
            source: match opt(&row.source) {
                None => None,
                Some(s) => Some(parse_enum(&s).ok_or_else(|| bad("source", &s))?),
            },
            verdict: parse_enum(&row.verdict).ok_or_else(|| bad("verdict", &row.verdict))?,
        });
    }
    Ok(out)
}

pub fn write_votes_csv(votes: &[VoteRecord], writer: impl std::io::Write) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| EvalError::Csv(e.to_string());
    w.write_record(["survey", "rater", "item", "region", "source", "verdict"]).map_err(err)?;
    let name = |v: serde_json::Value| v.as_str().unwrap_or_default().to_string();
    for v in votes {
        w.write_record([
            name(serde_json::to_value(v.survey).unwrap()),
            v.rater.clone(),
            v.item.clone(),
            v.region.map(|r| name(serde_json::to_value(r).unwrap())).unwrap_or_default(),
            v.source.map(|s| name(serde_json::to_value(s).unwrap())).unwrap_or_default(),
            v.verdict.name().to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| EvalError::Csv(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn dice_examples() {
        let a = synth::rect(20, 20, 0, 0, 10, 10);
        let b = synth::rect(20, 20, 10, 10, 10, 10);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        // |a| = |b| = 100 and |a∩b| = 50
        let c = synth::rect(20, 20, 5, 0, 10, 10);
        assert_eq!(dice(&a, &c).unwrap(), 0.5);
        let e = ImageBuffer::empty_mask(20, 20);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert_eq!(dice(&a, &ImageBuffer::empty_mask(3, 3)).unwrap_err().name(), "DimMismatch");
    }

    #[test]
    fn hausdorff_points_apart() {
        assert_eq!(hausdorff_points(&[(0, 0)], &[(3, 0)], 1.0).unwrap(), 3.0);
        assert_eq!(hausdorff_points(&[(0, 0)], &[(3, 0)], 0.5).unwrap(), 1.5);
        assert_eq!(hausdorff_points(&[], &[(3, 0)], 1.0).unwrap_err(), EvalError::EmptyContour);
    }

    fn vote(survey: Survey, region: Option<Region>, source: Option<Source>, verdict: Verdict) -> VoteRecord {
        VoteRecord {
            survey,
            rater: "r".into(),
            item: "i".into(),
            region,
            source,
            verdict,
        }
    }

    #[test]
    fn tally_errors() {
        assert_eq!(tally_survey(&[]).unwrap_err().name(), "EmptyVotes");
        let v = vote(Survey::One, Some(Region::Distal), None, Verdict::Small);
        assert_eq!(tally_survey(&[v]).unwrap_err().name(), "MixedVerdictDomain");
    }

    #[test]
    fn csv_roundtrip() {
        let votes = vec![
            vote(Survey::One, Some(Region::Proximal), None, Verdict::Both),
            vote(Survey::Two, None, Some(Source::Automatic), Verdict::NoneNeeded),
        ];
        let mut buf = Vec::new();
        write_votes_csv(&votes, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("survey,rater,item,region,source,verdict\n"));
        assert_eq!(read_votes_csv(&buf[..]).unwrap(), votes);
        assert_eq!(read_votes_csv(&b"a,b\n1,2\n"[..]).unwrap_err().name(), "Csv");
    }
}
