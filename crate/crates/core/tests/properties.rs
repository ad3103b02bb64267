mod common;

use std::collections::BTreeSet;

use chrono::NaiveDate;
use proptest::prelude::*;

use claimvec::bands::Group;
use claimvec::claims::{
    build_cohort, read_claims, write_claims, ClaimRecord, CodeSystem, Money, Setting, Sex,
};
use claimvec::embed::ModelKind;
use claimvec::eval::{mae, predictive_ratios, select_best, GridEntry, GridPoint};
use claimvec::models::{fit_ridge, DesignMatrix, FittedModel, RidgeOptions, RidgeProblem};
use claimvec::synth::generate;
use claimvec::vocab::build_vocab;

use common::{cohort_of, default_spec, rel_close};

fn code_system() -> impl Strategy<Value = CodeSystem> {
    prop_oneof![
        Just(CodeSystem::Icd9),
        Just(CodeSystem::Icd10),
        Just(CodeSystem::Cpt),
        Just(CodeSystem::Ndc)
    ]
}

fn setting() -> impl Strategy<Value = Setting> {
    prop_oneof![
        Just(Setting::Inpatient),
        Just(Setting::Outpatient),
        Just(Setting::Ed),
        Just(Setting::Pharmacy),
        Just(Setting::SpecialtyRx)
    ]
}

fn claim() -> impl Strategy<Value = ClaimRecord> {
    (
        "[A-Za-z0-9_]{1,10}",
        0i64..3650,
        code_system(),
        "[A-Z0-9.,\"-]{1,12}",
        0i64..10_000_000,
        setting(),
    )
        .prop_map(|(pid, day, system, code, cents, setting)| ClaimRecord {
            patient_id: pid,
            service_date: NaiveDate::from_ymd_opt(2010, 1, 1).unwrap()
                + chrono::Duration::days(day),
            code_system: system,
            code,
            allowed_cost: Money::from_cents(cents),
            setting,
        })
}

fn matrix(n: usize, p: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (
        prop::collection::vec(prop::collection::vec(-10.0f64..10.0, p), n),
        prop::collection::vec(-10.0f64..10.0, n),
    )
}

fn names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("x{j}")).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn group() -> impl Strategy<Value = Group> {
    (prop::bool::ANY, 0i32..100)
        .prop_map(|(f, age)| Group::new(if f { Sex::Female } else { Sex::Male }, age))
}

fn grid_entry() -> impl Strategy<Value = GridEntry> {
    (
        prop::bool::ANY,
        prop::sample::select(vec![100usize, 200, 300]),
        prop::sample::select(vec![10usize, 15, 20]),
        prop::option::of(prop::sample::select(vec![0.1, 0.2, 0.3, 0.4])),
    )
        .prop_map(|(dm, dim, window, cv_r2)| GridEntry {
            point: GridPoint {
                model: if dm {
                    ModelKind::PvDm
                } else {
                    ModelKind::PvDbow
                },
                dim,
                window,
            },
            cv_r2,
            best_lambda: cv_r2.map(|_| 1.0),
            error: cv_r2.is_none().then(|| "failed".to_string()),
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn claims_csv_round_trip(claims in prop::collection::vec(claim(), 0..40)) {
        let mut buf = Vec::new();
        write_claims(&mut buf, &claims).unwrap();
        let back = read_claims(buf.as_slice()).unwrap();
        prop_assert_eq!(back, claims);
    }

    #[test]
    fn removing_a_claim_never_adds_a_patient(seed in 0u64..1000, pick in 0usize..10_000) {
        let mut spec = default_spec(30);
        spec.seed = seed;
        let pop = generate(&spec).unwrap();
        prop_assume!(!pop.claims.is_empty());
        let full = build_cohort(&pop.claims, &pop.members, spec.base_year, spec.target_year).unwrap();
        let mut fewer = pop.claims.clone();
        fewer.remove(pick % fewer.len());
        let reduced = build_cohort(&fewer, &pop.members, spec.base_year, spec.target_year).unwrap();
        let before: BTreeSet<String> = full.patient_ids().into_iter().collect();
        for id in reduced.patient_ids() {
            prop_assert!(before.contains(&id), "{id} appeared after removing a claim");
        }
    }

    #[test]
    fn token_dates_never_decrease(seed in 0u64..1000) {
        let mut spec = default_spec(25);
        spec.seed = seed;
        let cohort = cohort_of(&spec);
        for doc in &cohort.documents {
            let base: Vec<&ClaimRecord> = doc.claims.iter().filter(|c| c.year() == cohort.base_year).collect();
            prop_assert_eq!(base.len(), doc.tokens.len());
            for (c, t) in base.iter().zip(&doc.tokens) {
                prop_assert_eq!(&c.code, t);
            }
            prop_assert!(base.windows(2).all(|w| w[0].service_date <= w[1].service_date));
        }
    }

    #[test]
    fn lower_min_count_keeps_a_superset(seed in 0u64..1000, min_count in 2u64..8) {
        let mut spec = default_spec(25);
        spec.seed = seed;
        let cohort = cohort_of(&spec);
        let all = build_vocab(&cohort, 1, 0.75).unwrap();
        let again = build_vocab(&cohort, 1, 0.75).unwrap();
        prop_assert_eq!(all.tokens(), again.tokens());
        if let Ok(high) = build_vocab(&cohort, min_count, 0.75) {
            for t in high.tokens() {
                prop_assert!(all.id(t).is_some(), "{t} lost at min_count 1");
            }
        }
    }

    #[test]
    fn ridge_shrinks_as_lambda_grows(
        (x, y) in matrix(30, 4),
        l1 in 1e-3f64..1e3,
        factor in 1.0f64..100.0,
    ) {
        let m = DesignMatrix::from_rows(names(4), &x).unwrap();
        let small = fit_ridge(&m, &y, l1).unwrap();
        let large = fit_ridge(&m, &y, l1 * factor).unwrap();
        prop_assert!(norm(&small.coefficients) >= norm(&large.coefficients) * (1.0 - 1e-12));
    }

    #[test]
    fn ridge_meets_residual_bound((x, y) in matrix(25, 5), lambda in 1e-3f64..1e3) {
        let m = DesignMatrix::from_rows(names(5), &x).unwrap();
        let problem = RidgeProblem::new(&m, &y, RidgeOptions::default()).unwrap();
        let model = problem.solve(lambda).unwrap();
        prop_assert!(problem.residual(&model.coefficients, lambda) <= problem.residual_bound());
    }

    #[test]
    fn prediction_ignores_column_order((x, y) in matrix(20, 4), perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle()) {
        let m = DesignMatrix::from_rows(names(4), &x).unwrap();
        let model = FittedModel::Ridge(fit_ridge(&m, &y, 0.5).unwrap());
        let cols = names(4);
        let shuffled: Vec<&str> = perm.iter().map(|&j| cols[j].as_str()).collect();
        let reordered = m.select_columns(&shuffled).unwrap();
        prop_assert_eq!(model.predict(&m).unwrap(), model.predict(&reordered).unwrap());
    }

    #[test]
    fn scaling_costs_leaves_ratios(
        rows in prop::collection::vec((0.0f64..5.0, 0.01f64..1e4, group()), 2..80),
        c in 1e-3f64..1e6,
    ) {
        let predicted: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let actual: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let groups: Vec<Group> = rows.iter().map(|r| r.2).collect();
        prop_assume!(predicted.iter().sum::<f64>() > 0.0);
        let scaled: Vec<f64> = actual.iter().map(|a| a * c).collect();
        let a = predictive_ratios(&predicted, &actual, &groups).unwrap();
        let b = predictive_ratios(&predicted, &scaled, &groups).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (p, q) in a.iter().zip(&b) {
            prop_assert_eq!(p.group, q.group);
            match (p.pr, q.pr) {
                (Some(u), Some(v)) => prop_assert!(rel_close(u, v, 1e-12), "{u} vs {v}"),
                (None, None) => {}
                other => prop_assert!(false, "definedness changed: {other:?}"),
            }
        }
    }

    #[test]
    fn grid_choice_ignores_entry_order(
        entries in prop::collection::vec(grid_entry(), 1..18).prop_shuffle(),
        rotate in 0usize..18,
    ) {
        let mut other = entries.clone();
        other.reverse();
        let k = rotate % other.len();
        other.rotate_left(k);
        prop_assert_eq!(select_best(&entries).map(|e| e.point), select_best(&other).map(|e| e.point));
    }

    #[test]
    fn mae_ignores_row_order(
        pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..50).prop_shuffle(),
    ) {
        let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let yhat: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let mut sorted = pairs.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let ys: Vec<f64> = sorted.iter().map(|p| p.0).collect();
        let yhs: Vec<f64> = sorted.iter().map(|p| p.1).collect();
        prop_assert!(rel_close(mae(&y, &yhat).unwrap(), mae(&ys, &yhs).unwrap(), 1e-12));
    }
}
