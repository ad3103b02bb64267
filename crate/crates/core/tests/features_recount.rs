mod common;

use std::collections::{BTreeMap, BTreeSet};

use claimvec::claims::{build_cohort, ClaimRecord, CodeSystem, Money, Setting, Sex};
use claimvec::features::{
    compute_risk_labels, extract_features, CodeSetMap, FEATURE_NAMES, REQUIRED_CONCEPTS,
};
use claimvec::synth::generate;

use common::{cohort_of, default_spec, rel_close};

fn matches(map: &[claimvec::features::CodePattern], c: &ClaimRecord) -> bool {
    map.iter()
        .any(|p| p.system == c.code_system && c.code.starts_with(p.prefix.as_str()))
}

#[test]
fn features_equal_brute_force_recount() {
    let spec = default_spec(1_400);
    let pop = generate(&spec).unwrap();
    let cohort = build_cohort(&pop.claims, &pop.members, spec.base_year, spec.target_year).unwrap();
    assert!(cohort.len() >= 1_000, "cohort too small: {}", cohort.len());
    let ids: Vec<String> = cohort.patient_ids().into_iter().take(1_000).collect();
    let cohort = cohort.subset(&ids);

    let map = CodeSetMap::demo();
    let rows = extract_features(&cohort, &map).unwrap();
    assert_eq!(rows.len(), 1_000);

    let mut raw: BTreeMap<&str, Vec<&ClaimRecord>> = BTreeMap::new();
    for c in pop.claims.iter().filter(|c| c.year() == spec.base_year) {
        raw.entry(c.patient_id.as_str()).or_default().push(c);
    }
    let members: BTreeMap<&str, _> = pop
        .members
        .iter()
        .map(|m| (m.patient_id.as_str(), m))
        .collect();

    for row in &rows {
        let claims = &raw[row.patient_id.as_str()];
        let m = members[row.patient_id.as_str()];
        let n = |s: &[Setting]| claims.iter().filter(|c| s.contains(&c.setting)).count() as f64;
        let classes: BTreeSet<String> = claims
            .iter()
            .filter(|c| c.code_system == CodeSystem::Ndc)
            .map(|c| {
                c.code
                    .chars()
                    .filter(|ch| ch.is_ascii_digit())
                    .take(5)
                    .collect::<String>()
            })
            .filter(|d| d.len() == 5)
            .collect();
        let charlson: u32 = map
            .charlson
            .values()
            .filter(|cond| claims.iter().any(|c| matches(&cond.codes, c)))
            .map(|cond| cond.weight)
            .sum();
        let cost_cents: i64 = claims.iter().map(|c| c.allowed_cost.cents()).sum();

        let mut expect: BTreeMap<&str, f64> = BTreeMap::new();
        expect.insert("age", (spec.base_year - m.birth_year) as f64);
        expect.insert("sex", if m.sex == Sex::Female { 1.0 } else { 0.0 });
        expect.insert("zip3_black_pct", m.zip3_black_pct);
        expect.insert("charlson_index", charlson as f64);
        expect.insert("n_inpatient", n(&[Setting::Inpatient]));
        expect.insert("n_outpatient", n(&[Setting::Outpatient]));
        expect.insert("n_ed", n(&[Setting::Ed]));
        expect.insert("n_pharmacy", n(&[Setting::Pharmacy, Setting::SpecialtyRx]));
        expect.insert("n_specialty_rx", n(&[Setting::SpecialtyRx]));
        expect.insert("n_distinct_drug_classes", classes.len() as f64);
        for (concept, name) in REQUIRED_CONCEPTS.iter().zip(&FEATURE_NAMES[10..20]) {
            let hit = claims.iter().any(|c| matches(&map.concepts[*concept], c));
            expect.insert(name, if hit { 1.0 } else { 0.0 });
        }
        expect.insert("base_year_cost", Money::from_cents(cost_cents).dollars());

        assert_eq!(expect.len(), 21);
        for name in FEATURE_NAMES {
            assert_eq!(
                row.get(name),
                Some(expect[name]),
                "{} {name}",
                row.patient_id
            );
        }
    }
}

#[test]
fn demo_map_sets_flags_in_synthetic_data() {
    let cohort = cohort_of(&default_spec(2_000));
    let rows = extract_features(&cohort, &CodeSetMap::demo()).unwrap();
    for name in &FEATURE_NAMES[10..20] {
        let hits = rows.iter().filter(|r| r.get(name) == Some(1.0)).count();
        assert!(hits > 0, "{name} never set");
    }
}

#[test]
fn doubling_enrollment_halves_annualized_cost() {
    let mut cohort = cohort_of(&default_spec(300));
    let year = cohort.target_year;
    for d in &mut cohort.documents {
        d.member.enrollment_months.insert(year, 5);
    }
    let short = compute_risk_labels(&cohort, year, None).unwrap();
    for d in &mut cohort.documents {
        d.member.enrollment_months.insert(year, 10);
    }
    let long = compute_risk_labels(&cohort, year, None).unwrap();
    for (s, l) in short.iter().zip(&long) {
        assert!(rel_close(l.annualized_cost, s.annualized_cost / 2.0, 1e-15));
        assert!(rel_close(l.risk_score, s.risk_score, 1e-12));
    }
}

#[test]
fn labels_average_to_one() {
    let cohort = cohort_of(&default_spec(1_000));
    let labels = compute_risk_labels(&cohort, cohort.target_year, None).unwrap();
    let mean = labels.iter().map(|l| l.risk_score).sum::<f64>() / labels.len() as f64;
    assert!((mean - 1.0).abs() < 1e-9);
    assert!(labels.iter().all(|l| l.risk_score >= 0.0));
}
