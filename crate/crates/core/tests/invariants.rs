//! Property tests for the contracts of the functional, statistics, selection
//! and classification stages.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use thinslice::classify::metrics::{balanced_accuracy_present, confusion_matrix, mcc_multiclass};
use thinslice::classify::{aggregate, resample, Hyper, MinMaxScaler, Sampling, TrialResult};
use thinslice::functionals::{featurize, stat_block};
use thinslice::postproc::{ChannelSeries, Segment};
use thinslice::select::{ranks_from_scores, score_features, stability_run, Method, SelectConfig};
use thinslice::split::split_stratified;
use thinslice::stats::{anova_oneway, direction_order, ttest_two_tailed};
use thinslice::{Dataset, RiskLevel};

fn dataset(rows: Vec<(Vec<f64>, usize)>, p: usize) -> Dataset {
    let y = rows.iter().map(|r| r.1).collect();
    let x = rows.into_iter().flat_map(|r| r.0).collect();
    Dataset::new(p, 3, x, y)
}

/// Rows with every class present at least `min_per_class` times.
fn labelled_rows(p: usize, n: std::ops::Range<usize>, min_per_class: usize) -> impl Strategy<Value = Vec<(Vec<f64>, usize)>> {
    prop::collection::vec((prop::collection::vec(-5.0f64..5.0, p), 0usize..3), n).prop_map(move |mut rows| {
        for c in 0..3 {
            for k in 0..min_per_class {
                rows[c * min_per_class + k].1 = c;
            }
        }
        rows
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stat_block_identities(xs in prop::collection::vec(-1e3f64..1e3, 1..200)) {
        let b = stat_block(&xs).unwrap();
        prop_assert_eq!(b.range, b.max - b.min);
        prop_assert!(b.variance >= 0.0);
        prop_assert_eq!(b.std, b.variance.sqrt());
        prop_assert!(b.min <= b.mean && b.mean <= b.max);
        prop_assert!(b.to_array().iter().all(|v| v.is_finite()));
        prop_assert!((b.n_peaks - b.n_valleys).abs() <= 1.0);
    }

    #[test]
    fn featurize_shape_and_purity(
        len in 1usize..120,
        n_channels in 1usize..8,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channels: Vec<ChannelSeries> = (0..n_channels)
            .map(|c| {
                let values: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
                let valid: Vec<bool> = (0..len).map(|_| rng.random_bool(0.9)).collect();
                ChannelSeries::new(format!("ch{c}"), values, valid, 10.0)
            })
            .collect();
        let seg = Segment {
            subject_id: "S".into(),
            risk_label: RiskLevel::Medium,
            segment_index: 0,
            start_s: 0.0,
            end_s: len as f64 / 10.0,
            channels,
            valid_fraction: 1.0,
        };
        let a = featurize(&seg);
        let b = featurize(&seg);
        prop_assert_eq!(a.values.len(), 30 * n_channels);
        prop_assert_eq!(a.names.len(), 30 * n_channels);
        prop_assert!(a.values.iter().all(|v| v.is_finite()));
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a.values), bits(&b.values));
    }

    #[test]
    fn anova_and_ttest_ranges(
        g1 in prop::collection::vec(-10.0f64..10.0, 2..20),
        g2 in prop::collection::vec(-10.0f64..10.0, 2..20),
        g3 in prop::collection::vec(-10.0f64..10.0, 2..20),
    ) {
        let a = anova_oneway(&[&g1, &g2, &g3]).unwrap();
        prop_assert!(a.f >= 0.0);
        prop_assert!((0.0..=1.0).contains(&a.p));
        let t = ttest_two_tailed(&g1, &g2).unwrap();
        let u = ttest_two_tailed(&g2, &g1).unwrap();
        prop_assert!((0.0..=1.0).contains(&t.p));
        prop_assert_eq!(t.t, -u.t);
        prop_assert_eq!(t.p, u.p);
    }

    #[test]
    fn direction_is_descending_permutation(means in prop::array::uniform3(-1.0f64..1.0)) {
        let d = direction_order(means);
        let codes: Vec<char> = d.ordering.split('>').map(|s| s.chars().next().unwrap()).collect();
        let mut sorted = codes.clone();
        sorted.sort();
        prop_assert_eq!(sorted, vec!['H', 'L', 'M']);
        let value = |c: char| means["LMH".find(c).unwrap()];
        prop_assert!(value(codes[0]) >= value(codes[1]) && value(codes[1]) >= value(codes[2]));
    }

    #[test]
    fn ranks_are_a_permutation(scores in prop::collection::vec(-1e3f64..1e3, 1..100)) {
        let mut r = ranks_from_scores(&scores);
        r.sort();
        prop_assert_eq!(r, (1..=scores.len()).collect::<Vec<_>>());
    }

    #[test]
    fn selector_scores_finite(rows in labelled_rows(6, 12..60, 2)) {
        let data = dataset(rows, 6);
        for m in Method::ALL {
            let s = score_features(m, &data).unwrap();
            prop_assert!(s.scores.iter().all(|v| v.is_finite()), "{:?}", m);
            let mut r = s.ranks.clone();
            r.sort();
            prop_assert_eq!(r, (1..=6).collect::<Vec<_>>());
        }
    }

    #[test]
    fn metrics_bounds(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..80)) {
        let truth: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let conf = confusion_matrix(&truth, &pred, 3);
        for (c, row) in conf.iter().enumerate() {
            prop_assert_eq!(row.iter().sum::<usize>(), truth.iter().filter(|&&t| t == c).count());
        }
        let ba = balanced_accuracy_present(&conf);
        let mcc = mcc_multiclass(&conf);
        prop_assert!((0.0..=1.0).contains(&ba));
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&mcc));
    }

    #[test]
    fn stratified_split_partitions(rows in labelled_rows(2, 12..80, 4), seed in any::<u64>()) {
        let data = dataset(rows, 2);
        let (train, test) = split_stratified(&data, 0.25, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort();
        prop_assert_eq!(all, (0..data.len()).collect::<Vec<_>>());
        let again = split_stratified(&data, 0.25, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!((train, test), again);
    }

    #[test]
    fn resampling_balances_classes(rows in labelled_rows(2, 6..60, 1), seed in any::<u64>()) {
        let data = dataset(rows, 2);
        let counts = data.class_counts();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let over = resample(&data, Sampling::Oversample, &mut rng).class_counts();
        let under = resample(&data, Sampling::Undersample, &mut rng).class_counts();
        let (hi, lo) = (*counts.iter().max().unwrap(), *counts.iter().min().unwrap());
        prop_assert_eq!(over, vec![hi; 3]);
        prop_assert_eq!(under, vec![lo; 3]);
        prop_assert_eq!(resample(&data, Sampling::None, &mut rng), data);
    }

    #[test]
    fn scaler_maps_train_into_unit_box(rows in labelled_rows(3, 3..40, 1)) {
        let data = dataset(rows, 3);
        let scaled = MinMaxScaler::fit(&data).unwrap().transform(&data);
        prop_assert!(scaled.x.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
    }

    #[test]
    fn aggregates_recompute_from_trials(accs in prop::collection::vec((0.0f64..1.0, -1.0f64..1.0), 1..12)) {
        let trials: Vec<TrialResult> = accs
            .iter()
            .enumerate()
            .map(|(i, &(a, m))| TrialResult {
                trial_index: i,
                seed: i as u64,
                balanced_accuracy: a,
                mcc: m,
                confusion: vec![vec![0; 3]; 3],
                chosen_hyper: Hyper::SvmLinear { c: 1.0 },
                cv_score: None,
                svm_max_kkt_violation: None,
            })
            .collect();
        let (avg, std, mcc) = aggregate(&trials);
        let n = accs.len() as f64;
        let mean: f64 = accs.iter().map(|a| a.0).sum::<f64>() / n;
        let var: f64 = accs.iter().map(|a| (a.0 - mean).powi(2)).sum::<f64>() / n;
        prop_assert!((avg - mean).abs() <= 1e-12);
        prop_assert!((std - var.sqrt()).abs() <= 1e-12);
        prop_assert!((mcc - accs.iter().map(|a| a.1).sum::<f64>() / n).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn final_set_respects_cap_and_thresholds(rows in labelled_rows(30, 45..70, 6), seed in any::<u64>()) {
        let data = dataset(rows, 30);
        let names: Vec<String> = (0..30).map(|j| format!("f{j}")).collect();
        let cfg = SelectConfig { k_folds: 3, runs: 1, ..SelectConfig::default() };
        let report = stability_run(&data, &names, &cfg, seed).unwrap();
        prop_assert!(report.final_set.len() <= 3);
        for f in &report.final_set {
            let j = names.iter().position(|n| n == f).unwrap();
            prop_assert!(report.bts[j] >= cfg.bts_min);
            prop_assert!(report.votes[j] >= cfg.effective_m_min());
        }
    }
}
