use insitu::crash_bench::conformance::{check_concatenation, check_semantics};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn vaccinated_functions_behave_like_originals(seed in any::<u64>()) {
        check_semantics(seed).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn prefix_then_resume_equals_whole_run(seed in any::<u64>()) {
        check_concatenation(seed).map_err(TestCaseError::fail)?;
    }
}

#[test]
fn fixed_seeds_cover_early_exits_and_nested_loops() {
    let mut early = 0;
    for seed in 0..300 {
        let o = check_semantics(seed).unwrap_or_else(|e| panic!("{e}"));
        early += usize::from(o.output.contains("early"));
    }
    assert!(early > 0);
}

#[test]
fn fixed_seeds_split_everywhere() {
    let mut total = 0;
    for seed in 0..300 {
        total += check_concatenation(seed).unwrap_or_else(|e| panic!("{e}")).splits;
    }
    assert!(total > 300);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, ..ProptestConfig::default() })]

    #[test]
    fn decomposition_is_lossless(seed in any::<u64>()) {
        let src = insitu::crash_bench::corpus::entry_function(seed);
        let f = insitu::source::parse_function(&src, "entry").unwrap();
        for g in [insitu::Granularity::Cells, insitu::Granularity::Statements] {
            let d = insitu::decompose(&f, g).unwrap();
            prop_assert_eq!(insitu::vaccinator::reconstruct(&d.tree), f.body.clone());
        }
    }
}
