//! Randomized structural invariants.
//!
//! The unit tests pin specific values; these assert the laws *any* input
//! must satisfy: serialization round-trips, cleaning is idempotent and
//! accounts for every row, shuffles and injections conserve what they
//! promise, scores obey their mirror identity, and the chart statistics
//! are pure functions of the data rather than of its presentation order.

use proptest::collection::vec;
use proptest::prelude::*;

use voteshuffle::{
    clean_dataset, exact_cluster_chi2_distribution, inject_irregularities,
    multivariate_hypergeometric_draw, parse_dataset, prediction_interval, sample_election,
    score_table, second_digit_frequencies, serialize_dataset, z_score, zeta_series, Center,
    CenterKind, CleanPolicy, ElectionDataset, FractionLaw, InjectionConfig, Notebook, SeedSpec,
    StreamDomain, SynthError, VoteOption, ZetaForm,
};

/// `(voters, yes, no)` with `1 ≤ yes + no < voters` — at least one valid
/// ballot and one abstention, the shape cleaning lets through and every
/// score is defined on.
fn tidy_counts() -> impl Strategy<Value = (u64, u64, u64)> {
    (3u64..60).prop_flat_map(|voters| {
        (1..voters).prop_flat_map(move |valid| (0..=valid).prop_map(move |yes| (voters, yes, valid - yes)))
    })
}

/// `(voters, yes, no)` with no relationship between register and ballots,
/// so overflowing and empty rows appear.
fn rough_counts() -> impl Strategy<Value = (u64, u64, u64)> {
    (0u64..40, 0u64..30, 0u64..30)
}

fn build(label: &str, centers: Vec<(CenterKind, Vec<(u64, u64, u64)>)>) -> ElectionDataset {
    ElectionDataset {
        label: label.into(),
        centers: centers
            .into_iter()
            .enumerate()
            .map(|(i, (kind, rows))| Center {
                id: format!("c{i:04}"),
                kind,
                notebooks: rows
                    .into_iter()
                    .enumerate()
                    .map(|(j, (voters, yes, no))| Notebook {
                        id: format!("n{j}"),
                        voters,
                        yes,
                        no,
                    })
                    .collect(),
            })
            .collect(),
    }
}

/// Fully computerized centers of well-formed notebooks.
fn tidy_dataset(centers: impl Into<proptest::collection::SizeRange>) -> impl Strategy<Value = ElectionDataset> {
    vec(vec(tidy_counts(), 2..=5), centers).prop_map(|centers| {
        build(
            "tidy",
            centers.into_iter().map(|rows| (CenterKind::Computerized, rows)).collect(),
        )
    })
}

/// Centers of every kind holding arbitrary, possibly impossible, rows.
fn rough_dataset() -> impl Strategy<Value = ElectionDataset> {
    let kind = prop_oneof![
        Just(CenterKind::Computerized),
        Just(CenterKind::Manual),
        Just(CenterKind::Mixed),
    ];
    vec((kind, vec(rough_counts(), 1..=4)), 1..12)
        .prop_map(|centers| build("rough", centers))
}

proptest! {
    #[test]
    fn serialization_round_trips(dataset in rough_dataset()) {
        let text = serialize_dataset(&dataset);
        let back = parse_dataset(&text, dataset.label.clone()).expect("own output must parse");
        prop_assert_eq!(back, dataset);
    }

    #[test]
    fn cleaning_accounts_for_every_row_and_is_idempotent(
        dataset in rough_dataset(),
        computerized_only in any::<bool>(),
        min_notebooks in 1usize..4,
    ) {
        let policy = CleanPolicy { computerized_only, min_notebooks };
        let (cleaned, report) = clean_dataset(&dataset, &policy);

        prop_assert_eq!(report.input_centers, dataset.center_count());
        prop_assert_eq!(report.input_notebooks, dataset.notebook_count());
        prop_assert_eq!(report.retained_centers + report.dropped_centers(), report.input_centers);
        prop_assert_eq!(report.retained_notebooks + report.dropped_notebooks(), report.input_notebooks);
        prop_assert_eq!(cleaned.center_count(), report.retained_centers);
        prop_assert_eq!(cleaned.notebook_count(), report.retained_notebooks);

        let (again, second) = clean_dataset(&cleaned, &policy);
        prop_assert_eq!(again, cleaned);
        prop_assert_eq!(second.dropped_centers(), 0);
        prop_assert_eq!(second.dropped_notebooks(), 0);
    }

    #[test]
    fn shuffles_conserve_every_margin(dataset in tidy_dataset(1..8), seed in any::<u64>()) {
        let shuffled = sample_election(&dataset, SeedSpec::new(seed));
        prop_assert_eq!(shuffled.center_count(), dataset.center_count());
        for (before, after) in dataset.centers.iter().zip(&shuffled.centers) {
            prop_assert_eq!(&after.id, &before.id);
            prop_assert_eq!(after.kind, before.kind);
            for option in VoteOption::ALL {
                prop_assert_eq!(after.total(option), before.total(option));
            }
            for (nb_before, nb_after) in before.notebooks.iter().zip(&after.notebooks) {
                prop_assert_eq!(&nb_after.id, &nb_before.id);
                prop_assert_eq!(nb_after.voters, nb_before.voters);
            }
        }
    }

    #[test]
    fn category_draws_sum_and_respect_bounds(
        categories in vec(0u64..500, 1..6),
        draw_pick in any::<u64>(),
        seed in any::<u64>(),
    ) {
        let pool: u64 = categories.iter().sum();
        let draw = if pool == 0 { 0 } else { draw_pick % (pool + 1) };
        let mut rng = SeedSpec::new(seed).stream(StreamDomain::Shuffle, 0);
        let counts = multivariate_hypergeometric_draw(&mut rng, &categories, draw).unwrap();
        prop_assert_eq!(counts.len(), categories.len());
        prop_assert_eq!(counts.iter().sum::<u64>(), draw);
        for (count, category) in counts.iter().zip(&categories) {
            prop_assert!(count <= category);
        }
    }

    #[test]
    fn paired_notebooks_mirror_each_others_scores(rows in vec(tidy_counts(), 2..=2)) {
        // With two notebooks the pool split is one number seen from both
        // sides: identical variance, negated deviation.
        let dataset = build("pair", vec![(CenterKind::Computerized, rows)]);
        let center = &dataset.centers[0];
        for option in VoteOption::ALL {
            let scores: Vec<_> = center
                .notebooks
                .iter()
                .map(|nb| z_score(nb, center, option))
                .collect();
            if let (Ok(a), Ok(b)) = (&scores[0], &scores[1]) {
                prop_assert!((a + b).abs() <= 1e-9 * (1.0 + a.abs()));
            }
        }
    }

    #[test]
    fn injections_conserve_sizes_and_center_totals(
        dataset in tidy_dataset(2..6),
        count in 1usize..10,
        fraction in 0.0f64..0.3,
        mode in 0u8..3,
        seed in any::<u64>(),
    ) {
        let base = match mode {
            0 => InjectionConfig::neutral(count, fraction),
            1 => InjectionConfig::biased(count, fraction, VoteOption::Yes),
            _ => InjectionConfig::biased(count, fraction, VoteOption::No),
        };
        let config = InjectionConfig {
            fraction_law: Some(FractionLaw::Fixed { value: fraction }),
            ..base
        };
        let outcome = match inject_irregularities(&dataset, &config, SeedSpec::new(seed)) {
            Ok(outcome) => outcome,
            // Tiny worlds can lack the abstention slack to host any event;
            // giving up after the attempt budget is the documented outcome.
            Err(SynthError::InfeasibleEvent { .. }) => return Ok(()),
            Err(other) => panic!("unexpected injection failure: {other}"),
        };

        let settled = outcome
            .log
            .iter()
            .filter(|e| e.status != voteshuffle::EventStatus::Retried)
            .count();
        prop_assert_eq!(settled, count);
        prop_assert!(outcome.log.len() >= count);

        for (before, after) in dataset.centers.iter().zip(&outcome.dataset.centers) {
            for option in VoteOption::ALL {
                prop_assert_eq!(after.total(option), before.total(option));
            }
            for (nb_before, nb_after) in before.notebooks.iter().zip(&after.notebooks) {
                prop_assert_eq!(&nb_after.id, &nb_before.id);
                prop_assert_eq!(nb_after.voters, nb_before.voters);
                // Biased events touch only the favoured option's cards.
                match config.bias_option {
                    Some(VoteOption::Yes) => prop_assert_eq!(nb_after.no, nb_before.no),
                    Some(VoteOption::No) => prop_assert_eq!(nb_after.yes, nb_before.yes),
                    _ => {}
                }
            }
        }
    }

    #[test]
    fn scores_match_their_single_notebook_definition(dataset in tidy_dataset(1..6)) {
        let table = score_table(&dataset);
        prop_assert_eq!(table.len(), dataset.notebook_count());
        for (row, (center, notebook)) in table.rows.iter().zip(dataset.notebooks()) {
            prop_assert_eq!(&row.center_id, &center.id);
            prop_assert_eq!(&row.notebook_id, &notebook.id);
            for option in VoteOption::ALL {
                prop_assert_eq!(row.score(option), z_score(notebook, center, option).ok());
                if let Some(z) = row.score(option) {
                    prop_assert!(z.is_finite());
                }
            }
        }
        // Well-formed notebooks always have a defined abstention score.
        prop_assert_eq!(table.scored_count(VoteOption::Out), table.len());
    }

    #[test]
    fn chart_ignores_presentation_order(dataset in tidy_dataset(104..=112), option_pick in 0u8..3) {
        let option = VoteOption::ALL[option_pick as usize];
        let mut reversed = dataset.clone();
        reversed.centers.reverse();
        for center in &mut reversed.centers {
            center.notebooks.reverse();
        }

        let k_range = (100, 102);
        let straight = zeta_series(&dataset, &score_table(&dataset), k_range, option, ZetaForm::Studentized);
        let mirrored = zeta_series(&reversed, &score_table(&reversed), k_range, option, ZetaForm::Studentized);
        match (straight, mirrored) {
            // The ranking breaks ties by notebook identity and the
            // population sums are integer-exact, so reordering the file
            // must reproduce the chart bit for bit.
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(a), Err(b)) => prop_assert_eq!(a.to_string(), b.to_string()),
            (a, b) => prop_assert!(false, "order changed the outcome: {a:?} vs {b:?}"),
        }

        let interval = prediction_interval(&dataset, &score_table(&dataset), option).unwrap();
        prop_assert!(interval.low <= interval.high);
        prop_assert!((0.0..=1.0).contains(&interval.low));
        prop_assert!((0.0..=1.0).contains(&interval.high));
    }

    #[test]
    fn digit_tallies_account_for_every_value(values in vec(0u64..100_000, 0..200)) {
        let frequencies = second_digit_frequencies(values.iter().copied());
        prop_assert_eq!(frequencies.counts.iter().sum::<u64>(), frequencies.sample_size);
        prop_assert_eq!(frequencies.sample_size + frequencies.skipped, values.len() as u64);
        prop_assert_eq!(frequencies.skipped, values.iter().filter(|v| **v < 10).count() as u64);

        // The decimal expansion is the authority on what digit sits second.
        let mut expected = [0u64; 10];
        for value in &values {
            let text = value.to_string();
            if let Some(digit) = text.as_bytes().get(1) {
                expected[(digit - b'0') as usize] += 1;
            }
        }
        prop_assert_eq!(frequencies.counts, expected);

        if frequencies.sample_size > 0 {
            let sum: f64 = frequencies.frequencies().unwrap().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn exact_statistic_distributions_are_probability_measures(
        sizes in vec(1u64..5, 2..=4),
        yes_pick in any::<u64>(),
    ) {
        // A one-sided pool has no statistic, so keep both options present.
        let total: u64 = sizes.iter().sum();
        let yes = 1 + yes_pick % (total - 1);
        let distribution = exact_cluster_chi2_distribution(&sizes, (yes, total - yes)).unwrap();
        prop_assert!(!distribution.atoms.is_empty());
        let mass: f64 = distribution.atoms.iter().map(|(_, p)| p).sum();
        prop_assert!((mass - 1.0).abs() <= 1e-9);
        for window in distribution.atoms.windows(2) {
            prop_assert!(window[0].0 < window[1].0);
        }
        for (value, probability) in &distribution.atoms {
            prop_assert!(*value >= 0.0 && *probability > 0.0);
        }
        let first = distribution.atoms[0].0;
        prop_assert!((distribution.upper_tail_p(first) - 1.0).abs() <= 1e-9);
    }
}
