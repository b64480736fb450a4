//! SCADA ingestion, cleaning, normalisation, splitting and a synthetic
//! power-curve generator.

use std::io::Write;
use std::path::Path;

use bitflags::bitflags;
use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

/// Margin used to pull exact-bound targets into the open unit interval.
pub const INTERIOR_EPSILON: f64 = 1e-4;
pub const MIN_RECORDS: usize = 10;

bitflags! {
    #[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
    pub struct RecordFlags: u8 {
        const OUTLIER = 1;
        const CURTAILED = 1 << 1;
        const CLIPPED = 1 << 2;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScadaRecord {
    pub wind_speed: f64,
    pub power: f64,
    pub flags: RecordFlags,
}

impl ScadaRecord {
    pub fn new(wind_speed: f64, power: f64) -> Self {
        ScadaRecord { wind_speed, power, flags: RecordFlags::empty() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub power_min: f64,
    pub power_max: f64,
    pub speed_min: f64,
    pub speed_max: f64,
}

impl Normalization {
    pub const IDENTITY: Normalization = Normalization { power_min: 0.0, power_max: 1.0, speed_min: 0.0, speed_max: 1.0 };

    pub fn normalize_power(&self, p: f64) -> f64 {
        (p - self.power_min) / (self.power_max - self.power_min)
    }

    pub fn denormalize_power(&self, p: f64) -> f64 {
        self.power_min + p * (self.power_max - self.power_min)
    }

    pub fn normalize_speed(&self, v: f64) -> f64 {
        (v - self.speed_min) / (self.speed_max - self.speed_min)
    }

    pub fn denormalize_speed(&self, v: f64) -> f64 {
        self.speed_min + v * (self.speed_max - self.speed_min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Validation,
}

/// Generating shape parameters retained by the synthetic generator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruth {
    pub x: f64,
    pub mean: f64,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScadaDataset {
    pub records: Vec<ScadaRecord>,
    /// One entry per record once split; empty before.
    pub split: Vec<Split>,
    pub normalization: Normalization,
    /// Records removed by cleaning, with the flags that removed them.
    pub removed: Vec<ScadaRecord>,
    pub ground_truth: Option<Vec<GroundTruth>>,
}

impl ScadaDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn inputs(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.wind_speed).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.power).collect()
    }

    /// `(wind_speed, power)` of the records in one split.
    pub fn part(&self, which: Split) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.split.len() != self.records.len() {
            return Err(Error::State("dataset has not been split".into()));
        }
        Ok(self
            .records
            .iter()
            .zip(&self.split)
            .filter(|(_, s)| **s == which)
            .map(|(r, _)| (r.wind_speed, r.power))
            .unzip())
    }

    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let count = |s| self.split.iter().filter(|v| **v == s).count();
        (count(Split::Train), count(Split::Test), count(Split::Validation))
    }
}

/// `max(ε, min(1 − ε, p))`, plus whether the value moved.
pub fn to_interior(p: f64, epsilon: f64) -> (f64, bool) {
    let q = p.clamp(epsilon, 1.0 - epsilon);
    (q, q != p)
}

/// Interior-maps a target vector, returning the number of values moved.
pub fn interior_targets(y: &[f64], epsilon: f64) -> (Vec<f64>, usize) {
    let mut moved = 0;
    let out = y
        .iter()
        .map(|&p| {
            let (q, m) = to_interior(p, epsilon);
            moved += m as usize;
            q
        })
        .collect();
    (out, moved)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ingested {
    pub records: Vec<ScadaRecord>,
    /// Rows skipped because a field was missing or not a finite number.
    pub dropped: usize,
}

/// Reads `wind_speed` and `power` columns (header names matched
/// case-insensitively); other columns are ignored.
pub fn load_scada_csv(path: impl AsRef<Path>) -> Result<Ingested> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Ingestion(format!("{}: unreadable header: {e}", path.display())))?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Ingestion(format!("{}: missing column '{name}' in header", path.display())))
    };
    let (si, pi) = (find("wind_speed")?, find("power")?);
    let mut records = Vec::new();
    let mut dropped = 0;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Ingestion(format!("{}: data row {}: {e}", path.display(), row + 1)))?;
        let parse = |i: usize| rec.get(i).and_then(|s| s.parse::<f64>().ok()).filter(|v| v.is_finite());
        match (parse(si), parse(pi)) {
            (Some(s), Some(p)) => records.push(ScadaRecord::new(s, p)),
            _ => dropped += 1,
        }
    }
    if records.is_empty() && dropped == 0 {
        warn!("{} contains a header but no data rows", path.display());
    }
    if dropped > 0 {
        warn!("{}: dropped {dropped} rows with missing or non-finite fields", path.display());
    }
    Ok(Ingested { records, dropped })
}

/// Writes `wind_speed,power`.
pub fn write_records_csv(path: impl AsRef<Path>, records: &[ScadaRecord]) -> Result<()> {
    let mut out = String::from("wind_speed,power\n");
    for r in records {
        out.push_str(&format!("{:?},{:?}\n", r.wind_speed, r.power));
    }
    std::fs::File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

/// Writes `x,m,alpha,beta`.
pub fn write_ground_truth_csv(path: impl AsRef<Path>, truth: &[GroundTruth]) -> Result<()> {
    let mut out = String::from("x,m,alpha,beta\n");
    for g in truth {
        out.push_str(&format!("{:?},{:?},{:?},{:?}\n", g.x, g.mean, g.alpha, g.beta));
    }
    std::fs::File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningRules {
    /// Raw power is divided by this before the tolerance band is applied,
    /// so the band is expressed as a fraction of rated power.
    pub power_scale: f64,
    pub band_low: f64,
    pub band_high: f64,
    /// Records below this power fraction in high wind count as curtailed.
    pub curtail_power: f64,
    /// Quantile of wind speeds among near-rated records that defines "high wind".
    pub curtail_quantile: f64,
    /// Power fraction above which a record counts as near rated.
    pub rated_threshold: f64,
}

impl Default for CleaningRules {
    fn default() -> Self {
        CleaningRules {
            power_scale: 1.0,
            band_low: -0.01,
            band_high: 1.01,
            curtail_power: 0.15,
            curtail_quantile: 0.6,
            rated_threshold: 0.9,
        }
    }
}

impl CleaningRules {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.power_scale.is_finite() && self.power_scale > 0.0) {
            problems.push(format!("cleaning.power_scale must be positive, got {}", self.power_scale));
        }
        if !(self.band_low < self.band_high) {
            problems.push("cleaning.band_low must be below cleaning.band_high".to_string());
        }
        if !(0.0..=1.0).contains(&self.curtail_quantile) {
            problems.push(format!("cleaning.curtail_quantile must lie in [0, 1], got {}", self.curtail_quantile));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Removes outliers and curtailment, then min-max normalises both columns
/// to `[0, 1]`.
pub fn preprocess(records: &[ScadaRecord], rules: &CleaningRules) -> Result<ScadaDataset> {
    rules.validate()?;
    if records.len() < MIN_RECORDS {
        return Err(Error::InsufficientData { available: records.len(), required: MIN_RECORDS });
    }
    let mut scaled: Vec<ScadaRecord> = records
        .iter()
        .map(|r| ScadaRecord { power: r.power / rules.power_scale, ..*r })
        .collect();
    for r in &mut scaled {
        if !(r.power >= rules.band_low && r.power <= rules.band_high) || !r.wind_speed.is_finite() {
            r.flags |= RecordFlags::OUTLIER;
        }
    }
    let mut rated_speeds: Vec<f64> = scaled
        .iter()
        .filter(|r| r.flags.is_empty() && r.power > rules.rated_threshold)
        .map(|r| r.wind_speed)
        .collect();
    if !rated_speeds.is_empty() {
        rated_speeds.sort_by(f64::total_cmp);
        let high_wind = quantile(&rated_speeds, rules.curtail_quantile);
        for r in &mut scaled {
            if r.flags.is_empty() && r.power < rules.curtail_power && r.wind_speed > high_wind {
                r.flags |= RecordFlags::CURTAILED;
            }
        }
    }
    let (kept, removed): (Vec<ScadaRecord>, Vec<ScadaRecord>) = scaled.into_iter().partition(|r| r.flags.is_empty());
    let outliers = removed.iter().filter(|r| r.flags.contains(RecordFlags::OUTLIER)).count();
    info!("cleaning removed {outliers} outliers and {} curtailed records", removed.len() - outliers);
    if kept.len() < MIN_RECORDS {
        return Err(Error::InsufficientData { available: kept.len(), required: MIN_RECORDS });
    }
    let range = |f: fn(&ScadaRecord) -> f64| {
        kept.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (power_min, power_max) = range(|r| r.power);
    let (speed_min, speed_max) = range(|r| r.wind_speed);
    if !(power_min < power_max && speed_min < speed_max) {
        return validation("power and wind speed must each take at least two distinct values");
    }
    let normalization = Normalization { power_min, power_max, speed_min, speed_max };
    let records = kept
        .iter()
        .map(|r| ScadaRecord {
            wind_speed: normalization.normalize_speed(r.wind_speed),
            power: normalization.normalize_power(r.power).clamp(0.0, 1.0),
            flags: r.flags,
        })
        .collect();
    Ok(ScadaDataset { records, split: Vec::new(), normalization, removed, ground_truth: None })
}

/// Seeded shuffle, then contiguous thirds for train, test and validation.
/// The remainder goes to train first, then test.
pub fn split_three(dataset: &ScadaDataset, seed: u64) -> Result<ScadaDataset> {
    let n = dataset.records.len();
    if n < 3 {
        return Err(Error::InsufficientData { available: n, required: 3 });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / 3;
    let rem = n % 3;
    let n_train = base + usize::from(rem > 0);
    let n_test = base + usize::from(rem > 1);
    let mut split = vec![Split::Validation; n];
    for (rank, &i) in order.iter().enumerate() {
        split[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_test {
            Split::Test
        } else {
            Split::Validation
        };
    }
    Ok(ScadaDataset { split, ..dataset.clone() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub cut_in: f64,
    pub rated_onset: f64,
    pub steepness: f64,
    pub concentration_peak: f64,
    pub concentration_floor: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 15_000,
            cut_in: 0.2,
            rated_onset: 0.65,
            steepness: 10.0,
            concentration_peak: 100.0,
            concentration_floor: 10.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n < MIN_RECORDS {
            problems.push(format!("synth.n must be at least {MIN_RECORDS}, got {}", self.n));
        }
        if !(self.cut_in < self.rated_onset) {
            problems.push("synth.cut_in must be below synth.rated_onset".to_string());
        }
        if !(self.steepness > 0.0 && self.steepness.is_finite()) {
            problems.push(format!("synth.steepness must be positive, got {}", self.steepness));
        }
        if !(self.concentration_peak > 2.0) {
            problems.push(format!("synth.concentration_peak must exceed 2, got {}", self.concentration_peak));
        }
        if !(self.concentration_floor > 2.0) {
            problems.push(format!("synth.concentration_floor must exceed 2, got {}", self.concentration_floor));
        }
        if !(self.concentration_floor <= self.concentration_peak) {
            problems.push("synth.concentration_floor must not exceed synth.concentration_peak".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Mean power curve: a logistic rescaled to hit 0.01 at cut-in and 0.99
    /// at rated onset, clamped to `[0.001, 0.999]`.
    pub fn mean_curve(&self, x: f64) -> f64 {
        let mid = 0.5 * (self.cut_in + self.rated_onset);
        let s = |v: f64| 1.0 / (1.0 + (-self.steepness * (v - mid)).exp());
        let (lo, hi) = (s(self.cut_in), s(self.rated_onset));
        let m = 0.01 + 0.98 * (s(x) - lo) / (hi - lo);
        m.clamp(0.001, 0.999)
    }

    /// Beta concentration, highest at the bounds and lowest mid-curve.
    pub fn concentration(&self, m: f64) -> f64 {
        let w = 4.0 * m * (1.0 - m);
        self.concentration_peak - (self.concentration_peak - self.concentration_floor) * w * w
    }

    /// One noisy reading from the Beta distribution described by `truth`.
    pub fn draw(&self, truth: &GroundTruth, rng: &mut impl Rng) -> Result<f64> {
        let dist = Beta::new(truth.alpha, truth.beta).map_err(|e| Error::Validation(format!("beta sampler: {e}")))?;
        Ok(dist.sample(rng).clamp(TINY, 1.0 - f64::EPSILON / 2.0))
    }

    pub fn truth_at(&self, x: f64) -> GroundTruth {
        let mean = self.mean_curve(x);
        let nu = self.concentration(mean);
        GroundTruth { x, mean, alpha: nu * mean, beta: nu * (1.0 - mean) }
    }
}

/// Smallest positive value a synthetic target may take.
const TINY: f64 = 1e-300;

/// Draws `n` noisy power readings from the Beta process described by `cfg`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<ScadaDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(cfg.n);
    let mut truth = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let x: f64 = rng.random();
        let g = cfg.truth_at(x);
        records.push(ScadaRecord::new(x, cfg.draw(&g, &mut rng)?));
        truth.push(g);
    }
    Ok(ScadaDataset {
        records,
        split: Vec::new(),
        normalization: Normalization::IDENTITY,
        removed: Vec::new(),
        ground_truth: Some(truth),
    })
}
