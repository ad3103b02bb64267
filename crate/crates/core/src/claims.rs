//! Claims and member records, their CSV formats, and cohort assembly.
//!
//! Claims CSV header: `patient_id,service_date,code_system,code,allowed_cost,setting`.
//! Members CSV header: `patient_id,birth_year,sex,zip3_black_pct,enrollment` where
//! `enrollment` is `YYYY:MM;YYYY:MM`.
//!
//! Cohort serialization (JSON lines): the first line is a header object
//! `{"base_year":..,"target_year":..,"n_documents":..}`, followed by one
//! [`PatientDocument`] per line.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const CLAIMS_HEADER: [&str; 6] = [
    "patient_id",
    "service_date",
    "code_system",
    "code",
    "allowed_cost",
    "setting",
];
pub const MEMBERS_HEADER: [&str; 5] = [
    "patient_id",
    "birth_year",
    "sex",
    "zip3_black_pct",
    "enrollment",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CodeSystem {
    #[serde(rename = "ICD9")]
    Icd9,
    #[serde(rename = "ICD10")]
    Icd10,
    #[serde(rename = "CPT")]
    Cpt,
    #[serde(rename = "NDC")]
    Ndc,
}

impl CodeSystem {
    pub fn as_str(self) -> &'static str {
        match self {
            CodeSystem::Icd9 => "ICD9",
            CodeSystem::Icd10 => "ICD10",
            CodeSystem::Cpt => "CPT",
            CodeSystem::Ndc => "NDC",
        }
    }
}

impl FromStr for CodeSystem {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ICD9" => Ok(CodeSystem::Icd9),
            "ICD10" => Ok(CodeSystem::Icd10),
            "CPT" => Ok(CodeSystem::Cpt),
            "NDC" => Ok(CodeSystem::Ndc),
            other => Err(format!("unknown code system `{other}`")),
        }
    }
}

impl fmt::Display for CodeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Inpatient,
    Outpatient,
    Ed,
    Pharmacy,
    SpecialtyRx,
}

impl Setting {
    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Inpatient => "inpatient",
            Setting::Outpatient => "outpatient",
            Setting::Ed => "ed",
            Setting::Pharmacy => "pharmacy",
            Setting::SpecialtyRx => "specialty_rx",
        }
    }
}

impl FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inpatient" => Ok(Setting::Inpatient),
            "outpatient" => Ok(Setting::Outpatient),
            "ed" => Ok(Setting::Ed),
            "pharmacy" => Ok(Setting::Pharmacy),
            "specialty_rx" => Ok(Setting::SpecialtyRx),
            other => Err(format!("unknown setting `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sex {
    #[serde(rename = "M")]
    Male,
    #[serde(rename = "F")]
    Female,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "M",
            Sex::Female => "F",
        }
    }
}

impl FromStr for Sex {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "M" => Ok(Sex::Male),
            "F" => Ok(Sex::Female),
            other => Err(format!("unknown sex `{other}` (expected M or F)")),
        }
    }
}

/// Non-negative US dollar amount held as integer cents.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Money(i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub fn from_cents(cents: i64) -> Self {
        Money(cents)
    }

    pub fn cents(self) -> i64 {
        self.0
    }

    pub fn dollars(self) -> f64 {
        self.0 as f64 / 100.0
    }

    /// Rounds a dollar amount to the nearest cent.
    pub fn from_dollars(dollars: f64) -> Self {
        Money((dollars * 100.0).round() as i64)
    }
}

impl std::ops::Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        self.0 += rhs.0;
    }
}

impl std::iter::Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl FromStr for Money {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (whole, frac) = match body.split_once('.') {
            Some((w, f)) => (w, f),
            None => (body, ""),
        };
        let digits_ok = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
        if whole.is_empty() || !digits_ok(whole) || !digits_ok(frac) {
            return Err(format!("`{s}` is not a decimal amount"));
        }
        if frac.len() > 2 {
            return Err(format!("`{s}` has more than 2 fraction digits"));
        }
        let whole: i64 = whole
            .parse()
            .map_err(|_| format!("`{s}` is out of range"))?;
        let mut cents_part: i64 = if frac.is_empty() {
            0
        } else {
            frac.parse().unwrap_or(0)
        };
        if frac.len() == 1 {
            cents_part *= 10;
        }
        let cents = whole * 100 + cents_part;
        Ok(Money(if neg { -cents } else { cents }))
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub patient_id: String,
    pub service_date: NaiveDate,
    pub code_system: CodeSystem,
    pub code: String,
    pub allowed_cost: Money,
    pub setting: Setting,
}

impl ClaimRecord {
    pub fn year(&self) -> i32 {
        self.service_date.year()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberRecord {
    pub patient_id: String,
    pub birth_year: i32,
    pub sex: Sex,
    pub zip3_black_pct: f64,
    pub enrollment_months: BTreeMap<i32, u8>,
}

impl MemberRecord {
    pub fn months_in(&self, year: i32) -> u8 {
        self.enrollment_months.get(&year).copied().unwrap_or(0)
    }

    pub fn age_in(&self, year: i32) -> i32 {
        year - self.birth_year
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientDocument {
    pub patient_id: String,
    /// Base-year codes in chronological order, one per claim line.
    pub tokens: Vec<String>,
    pub member: MemberRecord,
    pub cost_by_year: BTreeMap<i32, Money>,
    /// Base- and target-year claims, in token sort order.
    pub claims: Vec<ClaimRecord>,
}

impl PatientDocument {
    pub fn cost_in(&self, year: i32) -> Money {
        self.cost_by_year.get(&year).copied().unwrap_or(Money::ZERO)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub base_year: i32,
    pub target_year: i32,
    pub documents: Vec<PatientDocument>,
}

#[derive(Serialize, Deserialize)]
struct CohortHeader {
    base_year: i32,
    target_year: i32,
    n_documents: usize,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn patient_ids(&self) -> Vec<String> {
        self.documents
            .iter()
            .map(|d| d.patient_id.clone())
            .collect()
    }

    /// Keeps only the documents whose ids are in `ids`, preserving cohort order.
    pub fn subset(&self, ids: &[String]) -> Cohort {
        let keep: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        Cohort {
            base_year: self.base_year,
            target_year: self.target_year,
            documents: self
                .documents
                .iter()
                .filter(|d| keep.contains(d.patient_id.as_str()))
                .cloned()
                .collect(),
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = CohortHeader {
            base_year: self.base_year,
            target_year: self.target_year,
            n_documents: self.documents.len(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n").map_err(|e| Error::io("<cohort>", e))?;
        for doc in &self.documents {
            serde_json::to_writer(&mut w, doc)?;
            w.write_all(b"\n").map_err(|e| Error::io("<cohort>", e))?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Cohort> {
        let mut lines = r.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Data("cohort file is empty".into()))?
            .map_err(|e| Error::io("<cohort>", e))?;
        let header: CohortHeader = serde_json::from_str(&header_line)?;
        let mut documents = Vec::with_capacity(header.n_documents);
        for line in lines {
            let line = line.map_err(|e| Error::io("<cohort>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            documents.push(serde_json::from_str(&line)?);
        }
        if documents.len() != header.n_documents {
            return Err(Error::Data(format!(
                "cohort header announces {} documents, found {}",
                header.n_documents,
                documents.len()
            )));
        }
        Ok(Cohort {
            base_year: header.base_year,
            target_year: header.target_year,
            documents,
        })
    }
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let found: Vec<&str> = found.iter().map(str::trim).collect();
    if found != expected {
        return Err(Error::parse(
            1,
            "header",
            format!(
                "expected `{}`, found `{}`",
                expected.join(","),
                found.join(",")
            ),
        ));
    }
    Ok(())
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(r)
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<&'a str> {
    rec.get(idx)
        .map(str::trim)
        .ok_or_else(|| Error::parse(line, name, "missing field"))
}

fn parse_claim_row(rec: &csv::StringRecord, line: u64) -> Result<ClaimRecord> {
    if rec.len() != CLAIMS_HEADER.len() {
        return Err(Error::parse(
            line,
            "row",
            format!(
                "expected {} fields, found {}",
                CLAIMS_HEADER.len(),
                rec.len()
            ),
        ));
    }
    let patient_id = field(rec, 0, "patient_id", line)?;
    if patient_id.is_empty() {
        return Err(Error::parse(line, "patient_id", "empty"));
    }
    let date = field(rec, 1, "service_date", line)?;
    let service_date = NaiveDate::parse_from_str(date, "%Y-%m-%d")
        .map_err(|e| Error::parse(line, "service_date", format!("`{date}`: {e}")))?;
    let code_system = field(rec, 2, "code_system", line)?
        .parse::<CodeSystem>()
        .map_err(|m| Error::parse(line, "code_system", m))?;
    let code = field(rec, 3, "code", line)?;
    if code.is_empty() || code.chars().any(char::is_whitespace) {
        return Err(Error::parse(
            line,
            "code",
            format!("`{code}` must be non-empty without whitespace"),
        ));
    }
    let allowed_cost = field(rec, 4, "allowed_cost", line)?
        .parse::<Money>()
        .map_err(|m| Error::parse(line, "allowed_cost", m))?;
    if allowed_cost < Money::ZERO {
        return Err(Error::parse(line, "allowed_cost", "must be non-negative"));
    }
    let setting = field(rec, 5, "setting", line)?
        .parse::<Setting>()
        .map_err(|m| Error::parse(line, "setting", m))?;
    Ok(ClaimRecord {
        patient_id: patient_id.to_string(),
        service_date,
        code_system,
        code: code.to_string(),
        allowed_cost,
        setting,
    })
}

pub fn read_claims<R: Read>(r: R) -> Result<Vec<ClaimRecord>> {
    let mut rdr = csv_reader(r);
    check_header(rdr.headers()?, &CLAIMS_HEADER)?;
    let mut out = Vec::new();
    let mut rec = csv::StringRecord::new();
    while rdr.read_record(&mut rec)? {
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        out.push(parse_claim_row(&rec, line)?);
    }
    Ok(out)
}

pub fn parse_claims(path: impl AsRef<Path>) -> Result<Vec<ClaimRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_claims(std::io::BufReader::new(file))
}

pub fn write_claims<W: Write>(w: W, claims: &[ClaimRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(CLAIMS_HEADER)?;
    for c in claims {
        wtr.write_record([
            c.patient_id.as_str(),
            &c.service_date.format("%Y-%m-%d").to_string(),
            c.code_system.as_str(),
            c.code.as_str(),
            &c.allowed_cost.to_string(),
            c.setting.as_str(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<claims>", e))?;
    Ok(())
}

fn parse_enrollment(s: &str, line: u64) -> Result<BTreeMap<i32, u8>> {
    let mut out = BTreeMap::new();
    for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (year, months) = part
            .split_once(':')
            .ok_or_else(|| Error::parse(line, "enrollment", format!("`{part}` is not YYYY:MM")))?;
        let year: i32 = year
            .trim()
            .parse()
            .map_err(|_| Error::parse(line, "enrollment", format!("bad year in `{part}`")))?;
        let months: i64 = months.trim().parse().map_err(|_| {
            Error::parse(line, "enrollment", format!("bad month count in `{part}`"))
        })?;
        if !(0..=12).contains(&months) {
            return Err(Error::parse(
                line,
                "enrollment",
                format!("{months} months in {year} is outside [0, 12]"),
            ));
        }
        if out.insert(year, months as u8).is_some() {
            return Err(Error::parse(
                line,
                "enrollment",
                format!("year {year} listed twice"),
            ));
        }
    }
    Ok(out)
}

fn format_enrollment(months: &BTreeMap<i32, u8>) -> String {
    months
        .iter()
        .map(|(y, m)| format!("{y}:{m}"))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn read_members<R: Read>(r: R) -> Result<Vec<MemberRecord>> {
    let mut rdr = csv_reader(r);
    check_header(rdr.headers()?, &MEMBERS_HEADER)?;
    let mut out = Vec::new();
    let mut seen: HashMap<String, u64> = HashMap::new();
    let mut rec = csv::StringRecord::new();
    while rdr.read_record(&mut rec)? {
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != MEMBERS_HEADER.len() {
            return Err(Error::parse(
                line,
                "row",
                format!(
                    "expected {} fields, found {}",
                    MEMBERS_HEADER.len(),
                    rec.len()
                ),
            ));
        }
        let patient_id = field(&rec, 0, "patient_id", line)?;
        if patient_id.is_empty() {
            return Err(Error::parse(line, "patient_id", "empty"));
        }
        if let Some(first) = seen.insert(patient_id.to_string(), line) {
            return Err(Error::parse(
                line,
                "patient_id",
                format!("duplicate id `{patient_id}` (first seen on line {first})"),
            ));
        }
        let by = field(&rec, 1, "birth_year", line)?;
        let birth_year: i32 = by
            .parse()
            .map_err(|_| Error::parse(line, "birth_year", format!("`{by}` is not a year")))?;
        let sex = field(&rec, 2, "sex", line)?
            .parse::<Sex>()
            .map_err(|m| Error::parse(line, "sex", m))?;
        let pct = field(&rec, 3, "zip3_black_pct", line)?;
        let zip3_black_pct: f64 = pct.parse().map_err(|_| {
            Error::parse(line, "zip3_black_pct", format!("`{pct}` is not a number"))
        })?;
        if !(0.0..=1.0).contains(&zip3_black_pct) {
            return Err(Error::parse(line, "zip3_black_pct", "must lie in [0, 1]"));
        }
        let enrollment_months = parse_enrollment(field(&rec, 4, "enrollment", line)?, line)?;
        out.push(MemberRecord {
            patient_id: patient_id.to_string(),
            birth_year,
            sex,
            zip3_black_pct,
            enrollment_months,
        });
    }
    Ok(out)
}

pub fn parse_members(path: impl AsRef<Path>) -> Result<Vec<MemberRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_members(std::io::BufReader::new(file))
}

pub fn write_members<W: Write>(w: W, members: &[MemberRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(MEMBERS_HEADER)?;
    for m in members {
        wtr.write_record([
            m.patient_id.as_str(),
            &m.birth_year.to_string(),
            m.sex.as_str(),
            &m.zip3_black_pct.to_string(),
            &format_enrollment(&m.enrollment_months),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<members>", e))?;
    Ok(())
}

/// Assembles the cohort of patients enrolled and claiming in both years.
///
/// Documents follow member input order. Claims are sorted by
/// `(service_date, code_system, code, input index)`.
pub fn build_cohort(
    claims: &[ClaimRecord],
    members: &[MemberRecord],
    base_year: i32,
    target_year: i32,
) -> Result<Cohort> {
    let index: HashMap<&str, usize> = members
        .iter()
        .enumerate()
        .map(|(i, m)| (m.patient_id.as_str(), i))
        .collect();

    let mut unknown = BTreeSet::new();
    let mut per_member: Vec<Vec<usize>> = vec![Vec::new(); members.len()];
    for (ci, claim) in claims.iter().enumerate() {
        match index.get(claim.patient_id.as_str()) {
            Some(&mi) => per_member[mi].push(ci),
            None => {
                unknown.insert(claim.patient_id.as_str());
            }
        }
    }
    if !unknown.is_empty() {
        return Err(Error::Data(format!(
            "claims reference unknown patient ids: {}",
            unknown.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }

    let mut documents = Vec::new();
    for (member, claim_idx) in members.iter().zip(per_member) {
        if member.months_in(base_year) == 0 || member.months_in(target_year) == 0 {
            continue;
        }
        let mut kept: Vec<usize> = claim_idx
            .into_iter()
            .filter(|&ci| {
                let y = claims[ci].year();
                y == base_year || y == target_year
            })
            .collect();
        let has_base = kept.iter().any(|&ci| claims[ci].year() == base_year);
        let has_target = kept.iter().any(|&ci| claims[ci].year() == target_year);
        if !has_base || !has_target {
            continue;
        }
        kept.sort_by(|&a, &b| {
            let (ca, cb) = (&claims[a], &claims[b]);
            (ca.service_date, ca.code_system, &ca.code, a).cmp(&(
                cb.service_date,
                cb.code_system,
                &cb.code,
                b,
            ))
        });
        let mut cost_by_year = BTreeMap::new();
        let mut tokens = Vec::new();
        let mut doc_claims = Vec::with_capacity(kept.len());
        for ci in kept {
            let c = &claims[ci];
            *cost_by_year.entry(c.year()).or_insert(Money::ZERO) += c.allowed_cost;
            if c.year() == base_year {
                tokens.push(c.code.clone());
            }
            doc_claims.push(c.clone());
        }
        documents.push(PatientDocument {
            patient_id: member.patient_id.clone(),
            tokens,
            member: member.clone(),
            cost_by_year,
            claims: doc_claims,
        });
    }
    Ok(Cohort {
        base_year,
        target_year,
        documents,
    })
}
