use mda_core::corruption::{
    inject_text_noise, make_corruption_plan, mask_missing, selected_count, CorruptionPlan,
    TextSlots,
};
use mda_core::encoders::LatentFeature;
use proptest::prelude::*;

fn ids(n: usize) -> Vec<u64> {
    (0..n as u64).collect()
}

fn vocab() -> Vec<Vec<usize>> {
    vec![
        vec![1, 2, 3],
        vec![4, 5, 6, 7],
        vec![8, 9],
        vec![10, 11, 12],
    ]
}

fn tokens(n: usize) -> Vec<Vec<usize>> {
    (0..n)
        .map(|i| vec![1 + i % 3, 4 + i % 4, 8 + i % 2, 10 + i % 3])
        .collect()
}

#[test]
fn complete_and_noise_free_plan_is_clean() {
    let plan = make_corruption_plan(&ids(50), 1.0, 0.0, 3, 3, None).unwrap();
    assert!(plan.is_clean());
    assert_eq!(plan.len(), 50);
}

#[test]
fn zero_completeness_masks_every_sample_once() {
    let plan = make_corruption_plan(&ids(40), 0.0, 0.0, 3, 3, None).unwrap();
    assert!(plan
        .entries
        .iter()
        .all(|e| matches!(e.masked_modality, Some(m) if m < 3)));
    let per_modality: usize = (0..3)
        .map(|m| plan.mask_flags(m).iter().filter(|&&f| f).count())
        .sum();
    assert_eq!(per_modality, 40);
}

/// log C(n, k)
fn log_choose(n: u64, k: u64) -> f64 {
    (1..=k)
        .map(|i| ((n - k + i) as f64).ln() - (i as f64).ln())
        .sum()
}

/// Smallest and largest counts of the central 99% of Binomial(n, p).
fn binomial_interval(n: u64, p: f64) -> (u64, u64) {
    let pmf =
        |k: u64| (log_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp();
    let mut cdf = 0.0;
    let mut lo = None;
    for k in 0..=n {
        cdf += pmf(k);
        if lo.is_none() && cdf >= 0.005 {
            lo = Some(k);
        }
        if cdf >= 0.995 {
            return (lo.unwrap(), k);
        }
    }
    (lo.unwrap_or(0), n)
}

#[test]
fn thousand_samples_at_seventy_percent() {
    let plan = make_corruption_plan(&ids(1000), 0.7, 0.0, 0, 3, None).unwrap();
    assert_eq!(plan.masked_count(), 300);
    let (lo, hi) = binomial_interval(300, 1.0 / 3.0);
    for m in 0..3 {
        let c = plan.mask_flags(m).iter().filter(|&&f| f).count() as u64;
        assert!(lo <= c && c <= hi, "modality {m}: {c} outside [{lo}, {hi}]");
    }
}

#[test]
fn rates_outside_unit_interval_are_rejected() {
    for (eta, noise) in [(1.1, 0.0), (-0.1, 0.0), (1.0, 1.5), (0.5, f64::NAN)] {
        let err = make_corruption_plan(&ids(5), eta, noise, 0, 2, None).unwrap_err();
        assert_eq!(err.kind(), "validation");
    }
}

#[test]
fn noise_without_text_is_rejected() {
    let err = make_corruption_plan(&ids(10), 1.0, 0.5, 0, 2, None).unwrap_err();
    assert_eq!(err.kind(), "validation");
}

#[test]
fn noise_replacements_come_from_the_slot_and_differ() {
    let (v, t) = (vocab(), tokens(200));
    let plan = make_corruption_plan(
        &ids(200),
        1.0,
        0.2,
        11,
        3,
        Some(TextSlots {
            vocab: &v,
            tokens: &t,
        }),
    )
    .unwrap();
    assert_eq!(plan.noised_count(), 40);
    let noisy = plan.apply_noise(&t).unwrap();
    for ((e, clean), dirty) in plan.entries.iter().zip(&t).zip(&noisy) {
        let diff = clean.iter().zip(dirty).filter(|(a, b)| a != b).count();
        match e.noised_slot {
            Some((slot, rep)) => {
                assert_eq!(diff, 1);
                assert!(v[slot].contains(&rep));
                assert_eq!(dirty[slot], rep);
            }
            None => assert_eq!(diff, 0),
        }
    }
    assert_eq!(plan.apply_noise(&t).unwrap(), noisy);
}

#[test]
fn mask_missing_examples() {
    let f = LatentFeature(vec![0.25, -3.0, 7.5]);
    assert_eq!(mask_missing(&f, false), f);
    let once = mask_missing(&f, true);
    assert_eq!(once.0, vec![1.0; 3]);
    assert_eq!(mask_missing(&once, true), once);
}

#[test]
fn text_noise_contract() {
    let t = vec![1, 5, 9, 10];
    let out = inject_text_noise(&t, 1, 6).unwrap();
    assert_eq!(out, vec![1, 6, 9, 10]);
    assert_eq!(inject_text_noise(&t, 1, 6).unwrap(), out);
    assert_eq!(inject_text_noise(&t, 1, 5).unwrap_err().kind(), "contract");
    assert_eq!(
        inject_text_noise(&t, 4, 5).unwrap_err().kind(),
        "validation"
    );
}

#[test]
fn text_format_parses_without_header() {
    let plan = CorruptionPlan::from_text("0,2,-\n1,-,1:14\n2,-,-\n3,0,0:3\n").unwrap();
    assert_eq!(plan.masked_count(), 2);
    assert_eq!(plan.entries[1].noised_slot, Some((1, 14)));
    assert_eq!(plan.n_modalities, 3);
    assert!((plan.eta - 0.5).abs() < 1e-12);
    assert_eq!(
        CorruptionPlan::from_text("0,x,-").unwrap_err().kind(),
        "format"
    );
}

proptest! {
    #[test]
    fn plans_are_counted_exact_and_reproducible(n in 1usize..300, eta in 0.0f64..=1.0, noise in 0.0f64..=1.0, seed in any::<u64>(), m in 1usize..5) {
        let (v, t) = (vocab(), tokens(n));
        let text = Some(TextSlots { vocab: &v, tokens: &t });
        let a = make_corruption_plan(&ids(n), eta, noise, seed, m, text).unwrap();
        let b = make_corruption_plan(&ids(n), eta, noise, seed, m, text).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.masked_count(), selected_count(1.0 - eta, n));
        prop_assert!((a.masked_count() as f64 - (1.0 - eta) * n as f64).abs() <= 1.0);
        prop_assert!((a.noised_count() as f64 - noise * n as f64).abs() <= 1.0);
        let back = CorruptionPlan::from_text(&a.to_text()).unwrap();
        prop_assert_eq!(back, a);
    }
}
