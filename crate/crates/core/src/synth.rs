//! Synthetic claims population with planted latent conditions.
//!
//! Each patient draws conditions independently (logistic age adjustment
//! around age 40), then every active condition emits Poisson claims per
//! enrolled year. Patients carrying two or more chronic conditions have
//! each claim cost multiplied by `comorbidity_factor`, which makes the
//! target-year cost a non-additive function of the condition flags.

use std::path::Path;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bands::AgeBand;
use crate::claims::{
    write_claims, write_members, ClaimRecord, CodeSystem, MemberRecord, Money, Setting, Sex,
};
use crate::error::{Error, Result};

const REFERENCE_AGE: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolCode {
    pub system: CodeSystem,
    pub code: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalCost {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub name: String,
    pub prevalence: f64,
    /// Additive log-odds per decade of age away from 40.
    #[serde(default)]
    pub age_shift: f64,
    pub code_pool: Vec<PoolCode>,
    pub visits_per_year: f64,
    pub cost_per_claim: LogNormalCost,
    pub chronic: bool,
    /// Share of non-drug claims billed as inpatient.
    #[serde(default)]
    pub inpatient_rate: f64,
    /// Share of non-drug claims billed as emergency department.
    #[serde(default)]
    pub ed_rate: f64,
    /// Drug claims of this condition are billed as specialty pharmacy.
    #[serde(default)]
    pub specialty_rx: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandWeight {
    pub band: AgeBand,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub n_patients: usize,
    pub seed: u64,
    #[serde(default = "default_base_year")]
    pub base_year: i32,
    #[serde(default = "default_target_year")]
    pub target_year: i32,
    pub conditions: Vec<ConditionSpec>,
    pub background_visit_rate: f64,
    pub background_code_pool: Vec<PoolCode>,
    pub background_cost: LogNormalCost,
    pub age_distribution: Vec<BandWeight>,
    pub female_fraction: f64,
    /// Probability that a year's enrollment is partial (uniform 1..=12 months).
    #[serde(default = "default_churn")]
    pub churn: f64,
    #[serde(default = "default_comorbidity_factor")]
    pub comorbidity_factor: f64,
}

fn default_base_year() -> i32 {
    2015
}
fn default_target_year() -> i32 {
    2016
}
fn default_churn() -> f64 {
    0.1
}
fn default_comorbidity_factor() -> f64 {
    1.5
}

impl PopulationSpec {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: PopulationSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    /// The population spec shipped as `specs/default_population.json`.
    pub fn default_population() -> Self {
        serde_json::from_str(DEFAULT_POPULATION_JSON).expect("bundled default spec parses")
    }

    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| (0.0..=1.0).contains(&v);
        if !frac(self.female_fraction) {
            return Err(Error::Config("female_fraction must lie in [0, 1]".into()));
        }
        if !frac(self.churn) {
            return Err(Error::Config("churn must lie in [0, 1]".into()));
        }
        if !(self.background_visit_rate >= 0.0) {
            return Err(Error::Config("background_visit_rate must be >= 0".into()));
        }
        if self.background_code_pool.is_empty() {
            return Err(Error::Config(
                "background_code_pool must be non-empty".into(),
            ));
        }
        if !(self.comorbidity_factor > 0.0) {
            return Err(Error::Config("comorbidity_factor must be > 0".into()));
        }
        if self.base_year == self.target_year {
            return Err(Error::Config(
                "base_year and target_year must differ".into(),
            ));
        }
        let total: f64 = self.age_distribution.iter().map(|b| b.weight).sum();
        if self.age_distribution.iter().any(|b| !(b.weight >= 0.0)) || !(total > 0.0) {
            return Err(Error::Config(
                "age_distribution needs non-negative weights with positive total".into(),
            ));
        }
        check_cost(&self.background_cost, "background_cost")?;
        for c in &self.conditions {
            if !frac(c.prevalence) {
                return Err(Error::Config(format!(
                    "{}: prevalence must lie in [0, 1]",
                    c.name
                )));
            }
            if !(c.visits_per_year >= 0.0) {
                return Err(Error::Config(format!(
                    "{}: visits_per_year must be >= 0",
                    c.name
                )));
            }
            if c.code_pool.is_empty() {
                return Err(Error::Config(format!(
                    "{}: code_pool must be non-empty",
                    c.name
                )));
            }
            if !frac(c.inpatient_rate) || !frac(c.ed_rate) || c.inpatient_rate + c.ed_rate > 1.0 {
                return Err(Error::Config(format!(
                    "{}: inpatient_rate + ed_rate must lie in [0, 1]",
                    c.name
                )));
            }
            check_cost(&c.cost_per_claim, &c.name)?;
        }
        Ok(())
    }
}

fn check_cost(c: &LogNormalCost, what: &str) -> Result<()> {
    if !c.mu.is_finite() || !(c.sigma >= 0.0) || !c.sigma.is_finite() {
        return Err(Error::Config(format!(
            "{what}: lognormal needs finite mu and sigma >= 0"
        )));
    }
    Ok(())
}

pub const DEFAULT_POPULATION_JSON: &str = include_str!("../../../specs/default_population.json");

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPopulation {
    pub members: Vec<MemberRecord>,
    pub claims: Vec<ClaimRecord>,
}

impl SyntheticPopulation {
    pub fn claims_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        write_claims(&mut buf, &self.claims)?;
        Ok(String::from_utf8(buf).expect("csv writer emits utf-8"))
    }

    pub fn members_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        write_members(&mut buf, &self.members)?;
        Ok(String::from_utf8(buf).expect("csv writer emits utf-8"))
    }

    /// Writes `claims.csv` and `members.csv` into `dir`, creating it if needed.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let claims = dir.join("claims.csv");
        std::fs::write(&claims, self.claims_csv()?).map_err(|e| Error::io(&claims, e))?;
        let members = dir.join("members.csv");
        std::fs::write(&members, self.members_csv()?).map_err(|e| Error::io(&members, e))?;
        Ok(())
    }
}

struct Patient {
    member: MemberRecord,
    claims: Vec<ClaimRecord>,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn adjusted_prevalence(c: &ConditionSpec, age: i32) -> f64 {
    if c.age_shift == 0.0 || c.prevalence <= 0.0 || c.prevalence >= 1.0 {
        return c.prevalence;
    }
    let z = logit(c.prevalence) + c.age_shift * (age as f64 - REFERENCE_AGE) / 10.0;
    1.0 / (1.0 + (-z).exp())
}

fn draw_poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean)
        .map(|d| d.sample(rng) as u64)
        .unwrap_or(0)
}

fn draw_cost(rng: &mut ChaCha8Rng, c: &LogNormalCost, factor: f64) -> Money {
    let v = if c.sigma == 0.0 {
        c.mu.exp()
    } else {
        LogNormal::new(c.mu, c.sigma)
            .expect("validated")
            .sample(rng)
    };
    Money::from_dollars(v * factor)
}

fn draw_date(rng: &mut ChaCha8Rng, year: i32, months: u8) -> NaiveDate {
    let month = rng.random_range(1..=months as u32);
    let first = NaiveDate::from_ymd_opt(year, month, 1).expect("valid month");
    let next = if month == 12 {
        NaiveDate::from_ymd_opt(year + 1, 1, 1)
    } else {
        NaiveDate::from_ymd_opt(year, month + 1, 1)
    }
    .expect("valid month");
    let days = (next - first).num_days() as u32;
    first + chrono::Days::new(rng.random_range(0..days) as u64)
}

fn draw_band(rng: &mut ChaCha8Rng, bands: &[BandWeight]) -> AgeBand {
    let total: f64 = bands.iter().map(|b| b.weight).sum();
    let mut u = rng.random::<f64>() * total;
    for b in bands {
        if u < b.weight {
            return b.band;
        }
        u -= b.weight;
    }
    bands
        .iter()
        .rev()
        .find(|b| b.weight > 0.0)
        .map(|b| b.band)
        .expect("validated")
}

fn setting_for(rng: &mut ChaCha8Rng, system: CodeSystem, c: Option<&ConditionSpec>) -> Setting {
    match (system, c) {
        (CodeSystem::Ndc, Some(c)) if c.specialty_rx => Setting::SpecialtyRx,
        (CodeSystem::Ndc, _) => Setting::Pharmacy,
        (_, None) => Setting::Outpatient,
        (_, Some(c)) => {
            let u: f64 = rng.random();
            if u < c.inpatient_rate {
                Setting::Inpatient
            } else if u < c.inpatient_rate + c.ed_rate {
                Setting::Ed
            } else {
                Setting::Outpatient
            }
        }
    }
}

fn patient_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn generate_patient(spec: &PopulationSpec, index: usize, width: usize) -> Patient {
    let mut rng = patient_rng(spec.seed, index);
    let patient_id = format!("P{:0width$}", index + 1);
    let band = draw_band(&mut rng, &spec.age_distribution);
    let (lo, hi) = band.age_range();
    let age = rng.random_range(lo..=hi);
    let sex = if rng.random::<f64>() < spec.female_fraction {
        Sex::Female
    } else {
        Sex::Male
    };
    let zip3_black_pct = {
        let v: f64 = LogNormal::new((0.05f64).ln(), 0.8)
            .expect("const")
            .sample(&mut rng);
        (v.min(1.0) * 10_000.0).round() / 10_000.0
    };

    let years = [spec.base_year, spec.target_year];
    let mut enrollment_months = std::collections::BTreeMap::new();
    for &y in &years {
        let m = if rng.random::<f64>() < spec.churn {
            rng.random_range(1..=12u8)
        } else {
            12
        };
        enrollment_months.insert(y, m);
    }

    // Chronic conditions are drawn once at base-year age and persist.
    let chronic: Vec<bool> = spec
        .conditions
        .iter()
        .map(|c| c.chronic && rng.random::<f64>() < adjusted_prevalence(c, age))
        .collect();

    let mut claims = Vec::new();
    for (yi, &year) in years.iter().enumerate() {
        let months = enrollment_months[&year];
        let year_age = age + yi as i32;
        let active: Vec<bool> = spec
            .conditions
            .iter()
            .zip(&chronic)
            .map(|(c, &has)| {
                if c.chronic {
                    has
                } else {
                    rng.random::<f64>() < adjusted_prevalence(c, year_age)
                }
            })
            .collect();
        let n_chronic = spec
            .conditions
            .iter()
            .zip(&active)
            .filter(|(c, &a)| a && c.chronic)
            .count();
        let factor = if n_chronic >= 2 {
            spec.comorbidity_factor
        } else {
            1.0
        };
        let frac = months as f64 / 12.0;

        let n_bg = draw_poisson(&mut rng, spec.background_visit_rate * frac);
        for _ in 0..n_bg {
            let pc =
                &spec.background_code_pool[rng.random_range(0..spec.background_code_pool.len())];
            let setting = setting_for(&mut rng, pc.system, None);
            claims.push(ClaimRecord {
                patient_id: patient_id.clone(),
                service_date: draw_date(&mut rng, year, months),
                code_system: pc.system,
                code: pc.code.clone(),
                allowed_cost: draw_cost(&mut rng, &spec.background_cost, factor),
                setting,
            });
        }
        for (c, _) in spec.conditions.iter().zip(&active).filter(|(_, &a)| a) {
            let n = draw_poisson(&mut rng, c.visits_per_year * frac);
            for _ in 0..n {
                let pc = &c.code_pool[rng.random_range(0..c.code_pool.len())];
                let setting = setting_for(&mut rng, pc.system, Some(c));
                claims.push(ClaimRecord {
                    patient_id: patient_id.clone(),
                    service_date: draw_date(&mut rng, year, months),
                    code_system: pc.system,
                    code: pc.code.clone(),
                    allowed_cost: draw_cost(&mut rng, &c.cost_per_claim, factor),
                    setting,
                });
            }
        }
    }
    claims.sort_by(|a, b| a.service_date.cmp(&b.service_date));

    Patient {
        member: MemberRecord {
            patient_id,
            birth_year: spec.base_year - age,
            sex,
            zip3_black_pct,
            enrollment_months,
        },
        claims,
    }
}

/// Generates the population. Output depends only on `spec` (including its
/// seed); each patient owns an independent ChaCha stream keyed by its index.
pub fn generate(spec: &PopulationSpec) -> Result<SyntheticPopulation> {
    spec.validate()?;
    let width = spec.n_patients.max(1).to_string().len().max(6);
    let patients: Vec<Patient> = (0..spec.n_patients)
        .into_par_iter()
        .map(|i| generate_patient(spec, i, width))
        .collect();
    let mut members = Vec::with_capacity(patients.len());
    let mut claims = Vec::new();
    for p in patients {
        members.push(p.member);
        claims.extend(p.claims);
    }
    Ok(SyntheticPopulation { members, claims })
}

/// Labelled code pairs: `true` for two codes from the same condition pool,
/// `false` for codes from different pools (background included).
pub fn planted_pairs(spec: &PopulationSpec) -> Vec<(String, String, bool)> {
    if spec.conditions.is_empty() {
        return Vec::new();
    }
    let mut pools: Vec<Vec<&str>> = spec
        .conditions
        .iter()
        .map(|c| c.code_pool.iter().map(|p| p.code.as_str()).collect())
        .collect();
    pools.push(
        spec.background_code_pool
            .iter()
            .map(|p| p.code.as_str())
            .collect(),
    );
    let n_conditions = spec.conditions.len();

    let mut out = Vec::new();
    for pool in &pools[..n_conditions] {
        for (i, a) in pool.iter().enumerate() {
            for b in &pool[i + 1..] {
                if a != b {
                    out.push((a.to_string(), b.to_string(), true));
                }
            }
        }
    }
    for (i, left) in pools.iter().enumerate() {
        for right in &pools[i + 1..] {
            for a in left {
                for b in right {
                    if a != b {
                        out.push((a.to_string(), b.to_string(), false));
                    }
                }
            }
        }
    }
    out
}
