use ballot_audit::priors::BetaDiscretization;
use ballot_audit::rules::thresholds_closed_form;
use ballot_audit::{AuditRule, Decision, PriorFamily, PriorSource, PriorSpec, RuleSpec};
use proptest::prelude::*;

fn rule_strategy() -> impl Strategy<Value = (RuleSpec, u64)> {
    let ballots = 20u64..400;
    let bound = 0.001f64..0.45;
    prop_oneof![
        (ballots.clone(), bound.clone(), 0.0f64..0.5, 0.51f64..1.0, 0.0f64..0.3).prop_map(|(n, a, p0, p1, b)| {
            (RuleSpec::WaldWithoutReplacement { p0, p1, alpha: a, beta: b, ballots: n }, n)
        }),
        (bound.clone(), 0.0f64..0.5, 0.51f64..0.99, 0.0f64..0.3)
            .prop_map(|(a, p0, p1, b)| (RuleSpec::WaldWithReplacement { p0, p1, alpha: a, beta: b }, 300)),
        (ballots.clone(), bound.clone(), 0.51f64..1.0, 0.0f64..0.3).prop_map(|(n, a, p, b)| {
            (RuleSpec::TraditionalRlaWithoutReplacement { p, alpha: a, beta: b, ballots: n }, n)
        }),
        (ballots.clone(), bound.clone(), 0.2f64..3.0, 0.2f64..3.0).prop_map(|(n, g, a, b)| {
            let family = PriorFamily::Beta { a, b, discretization: BetaDiscretization::Pointwise };
            (RuleSpec::Bayesian { gamma: g, prior: PriorSource::Named(PriorSpec::new(n, family)) }, n)
        }),
        (ballots, bound).prop_map(|(n, a)| {
            let family = PriorFamily::UniformWinning {};
            (RuleSpec::BayesianRla { alpha: a, prior: PriorSource::Named(PriorSpec::new(n, family)) }, n)
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn statistic_is_monotone_in_k((spec, ballots) in rule_strategy(), frac in 0.05f64..1.0) {
        let rule = AuditRule::new(spec).unwrap();
        let n = ((ballots as f64 * frac) as u64).max(1);
        let stats: Vec<f64> = (0..=n).map(|k| rule.extended_log_statistic(n, k)).collect();
        for w in stats.windows(2) {
            // Infinite statistics (a tally ruled out entirely) compare equal.
            prop_assert!(w[1] >= w[0] || w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "{:?}", w);
        }
    }

    #[test]
    fn bisection_matches_scan_and_decide((spec, ballots) in rule_strategy(), frac in 0.05f64..1.0) {
        let rule = AuditRule::new(spec).unwrap();
        let n = ((ballots as f64 * frac) as u64).max(1);
        let row = rule.thresholds(n).unwrap();
        prop_assert_eq!(row, rule.thresholds_by_scan(n).unwrap());
        for k in 0..=n {
            if let Ok(d) = rule.decide(n, k) {
                prop_assert_eq!(d, row.verdict(k), "n={} k={}", n, k);
            }
        }
    }

    #[test]
    fn closed_form_matches_search(p in 0.51f64..0.99, alpha in 0.001f64..0.2, beta in 0.0f64..0.2, n in 1u64..2000) {
        let rule = AuditRule::new(RuleSpec::TraditionalRlaWithReplacement { p, alpha, beta }).unwrap();
        prop_assert_eq!(thresholds_closed_form(p, alpha, beta, n).unwrap(), rule.thresholds(n).unwrap());
    }
}

#[test]
fn stricter_bounds_never_lower_k_plus() {
    let n = 1000;
    let prior = PriorSource::Named(PriorSpec::new(n, PriorFamily::Uniform {}));
    let mut last = vec![0u64; 5];
    for gamma in [0.2, 0.1, 0.05, 0.01, 0.001] {
        let rule = RuleSpec::Bayesian { gamma, prior: prior.clone() }.compile().unwrap();
        let row: Vec<u64> = [20, 50, 100, 200, 400].iter().map(|&s| rule.thresholds(s).unwrap().k_plus_or_unreachable()).collect();
        assert!(row.iter().zip(&last).all(|(a, b)| a >= b), "{gamma}: {row:?} vs {last:?}");
        last = row;
    }
}

#[test]
fn bravo_verdicts_never_escalate() {
    let rule = RuleSpec::bravo(0.6, 0.05).compile().unwrap();
    for n in 1..200 {
        for k in 0..=n {
            assert_ne!(rule.decide(n, k).unwrap(), Decision::StopHandCount);
        }
    }
}
