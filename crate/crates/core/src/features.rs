//! Engineered baseline features, prospective risk-score labels, and the
//! train/test split.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::claims::{ClaimRecord, CodeSystem, Cohort, PatientDocument, Setting, Sex};
use crate::error::{Error, Result};

pub const FEATURE_NAMES: [&str; 21] = [
    "age",
    "sex",
    "zip3_black_pct",
    "charlson_index",
    "n_inpatient",
    "n_outpatient",
    "n_ed",
    "n_pharmacy",
    "n_specialty_rx",
    "n_distinct_drug_classes",
    "chemo_flag",
    "psychotherapy_flag",
    "obesity_flag",
    "cvd_flag",
    "hypertension_flag",
    "t2dm_flag",
    "mental_flag",
    "substance_flag",
    "lowback_flag",
    "asthma_flag",
    "base_year_cost",
];

/// Concepts backing the ten condition flags, in flag column order.
pub const REQUIRED_CONCEPTS: [&str; 10] = [
    "chemotherapy",
    "psychotherapy",
    "obesity",
    "cvd",
    "hypertension",
    "t2dm",
    "mental",
    "substance",
    "lowback",
    "asthma",
];

/// Leading NDC digits used as a drug-class proxy.
pub const DRUG_CLASS_DIGITS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodePattern {
    pub system: CodeSystem,
    pub prefix: String,
}

impl CodePattern {
    pub fn matches(&self, system: CodeSystem, code: &str) -> bool {
        self.system == system && code.starts_with(&self.prefix)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharlsonCondition {
    pub weight: u32,
    pub codes: Vec<CodePattern>,
}

/// Concept and Charlson code sets, read from JSON:
///
/// ```json
/// {
///   "concepts": { "hypertension": [{"system": "ICD10", "prefix": "I10"}], ... },
///   "charlson": { "congestive_heart_failure": {"weight": 1, "codes": [...]}, ... }
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeSetMap {
    pub concepts: BTreeMap<String, Vec<CodePattern>>,
    #[serde(default)]
    pub charlson: BTreeMap<String, CharlsonCondition>,
}

pub const DEMO_CODE_MAP_JSON: &str = include_str!("../../../specs/demo_code_map.json");

impl CodeSetMap {
    pub fn demo() -> Self {
        serde_json::from_str(DEMO_CODE_MAP_JSON).expect("bundled demo code map parses")
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map: CodeSetMap = serde_json::from_str(&text)?;
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        for c in REQUIRED_CONCEPTS {
            if !self.concepts.contains_key(c) {
                return Err(Error::Config(format!("code map is missing concept `{c}`")));
            }
        }
        Ok(())
    }

    fn concept_matches(&self, concept: &str, claim: &ClaimRecord) -> bool {
        self.concepts[concept]
            .iter()
            .any(|p| p.matches(claim.code_system, &claim.code))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub patient_id: String,
    /// Values in [`FEATURE_NAMES`] order.
    pub values: [f64; 21],
}

impl FeatureRow {
    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.values[i])
    }
}

fn drug_class(code: &str) -> Option<String> {
    let digits: String = code.chars().filter(char::is_ascii_digit).collect();
    (digits.len() >= DRUG_CLASS_DIGITS).then(|| digits[..DRUG_CLASS_DIGITS].to_string())
}

fn features_for(doc: &PatientDocument, base_year: i32, map: &CodeSetMap) -> FeatureRow {
    let base: Vec<&ClaimRecord> = doc
        .claims
        .iter()
        .filter(|c| c.year() == base_year)
        .collect();
    let count =
        |pred: &dyn Fn(&ClaimRecord) -> bool| base.iter().filter(|c| pred(c)).count() as f64;

    let n_inpatient = count(&|c| c.setting == Setting::Inpatient);
    let n_outpatient = count(&|c| c.setting == Setting::Outpatient);
    let n_ed = count(&|c| c.setting == Setting::Ed);
    // all drug claims, specialty included
    let n_pharmacy = count(&|c| matches!(c.setting, Setting::Pharmacy | Setting::SpecialtyRx));
    let n_specialty = count(&|c| c.setting == Setting::SpecialtyRx);
    let classes: BTreeSet<String> = base
        .iter()
        .filter(|c| c.code_system == CodeSystem::Ndc)
        .filter_map(|c| drug_class(&c.code))
        .collect();

    let charlson: u32 = map
        .charlson
        .values()
        .filter(|cond| {
            base.iter()
                .any(|c| cond.codes.iter().any(|p| p.matches(c.code_system, &c.code)))
        })
        .map(|cond| cond.weight)
        .sum();

    let mut values = [0.0; 21];
    values[0] = doc.member.age_in(base_year) as f64;
    values[1] = if doc.member.sex == Sex::Female {
        1.0
    } else {
        0.0
    };
    values[2] = doc.member.zip3_black_pct;
    values[3] = charlson as f64;
    values[4] = n_inpatient;
    values[5] = n_outpatient;
    values[6] = n_ed;
    values[7] = n_pharmacy;
    values[8] = n_specialty;
    values[9] = classes.len() as f64;
    for (k, concept) in REQUIRED_CONCEPTS.iter().enumerate() {
        let hit = base.iter().any(|c| map.concept_matches(concept, c));
        values[10 + k] = if hit { 1.0 } else { 0.0 };
    }
    values[20] = doc.cost_in(base_year).dollars();
    FeatureRow {
        patient_id: doc.patient_id.clone(),
        values,
    }
}

/// Baseline features from base-year claims, one row per cohort document.
pub fn extract_features(cohort: &Cohort, code_map: &CodeSetMap) -> Result<Vec<FeatureRow>> {
    code_map.validate()?;
    Ok(cohort
        .documents
        .iter()
        .map(|d| features_for(d, cohort.base_year, code_map))
        .collect())
}

pub fn write_features<W: Write>(w: W, rows: &[FeatureRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["patient_id"];
    header.extend(FEATURE_NAMES);
    wtr.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.patient_id.clone()];
        rec.extend(r.values.iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<features>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskLabel {
    pub patient_id: String,
    pub annualized_cost: f64,
    pub risk_score: f64,
}

/// Target-year cost annualized by enrollment (`× 12 / months`), optionally
/// capped, then divided by the cohort mean.
pub fn compute_risk_labels(
    cohort: &Cohort,
    target_year: i32,
    cost_cap: Option<f64>,
) -> Result<Vec<RiskLabel>> {
    if cohort.is_empty() {
        return Err(Error::Data("cannot label an empty cohort".into()));
    }
    let mut annualized = Vec::with_capacity(cohort.len());
    for d in &cohort.documents {
        let months = d.member.months_in(target_year);
        if months == 0 {
            return Err(Error::Data(format!(
                "patient `{}` has no enrollment in {target_year}",
                d.patient_id
            )));
        }
        let mut a = d.cost_in(target_year).dollars() * 12.0 / months as f64;
        if let Some(cap) = cost_cap {
            a = a.min(cap);
        }
        annualized.push(a);
    }
    let mean = annualized.iter().sum::<f64>() / annualized.len() as f64;
    if !(mean > 0.0) {
        return Err(Error::Data(
            "mean annualized cost is zero; scores are undefined".into(),
        ));
    }
    Ok(cohort
        .documents
        .iter()
        .zip(annualized)
        .map(|(d, a)| RiskLabel {
            patient_id: d.patient_id.clone(),
            annualized_cost: a,
            risk_score: a / mean,
        })
        .collect())
}

pub fn write_labels<W: Write>(w: W, labels: &[RiskLabel]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["patient_id", "annualized_cost", "risk_score"])?;
    for l in labels {
        wtr.write_record([
            l.patient_id.clone(),
            l.annualized_cost.to_string(),
            l.risk_score.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<labels>", e))?;
    Ok(())
}

pub fn read_labels<R: Read>(r: R) -> Result<Vec<RiskLabel>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

/// Seeded shuffle; the test side takes `ceil((1 - fraction)·N)` ids and the
/// rest go to training. Both halves keep input order.
pub fn split_train_test(
    ids: &[String],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction {fraction} must lie in (0, 1)"
        )));
    }
    // strip representation noise so that 1 - 0.7 counts as 0.3
    let test_fraction = ((1.0 - fraction) * 1e12).round() / 1e12;
    let n_test = ((test_fraction * ids.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let n_train = ids.len() - n_test.min(ids.len());
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_train = vec![false; ids.len()];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let (mut train, mut test) = (Vec::with_capacity(n_train), Vec::new());
    for (id, t) in ids.iter().zip(in_train) {
        if t {
            train.push(id.clone())
        } else {
            test.push(id.clone())
        }
    }
    Ok((train, test))
}

pub fn labels_by_id(labels: &[RiskLabel]) -> HashMap<&str, &RiskLabel> {
    labels.iter().map(|l| (l.patient_id.as_str(), l)).collect()
}
