mod support;

use proptest::prelude::*;

use support::{discourse_oracle, history_of, reward_close, REWARD_CASES};
use xtom_core::aog::{NodeId, Process};
use xtom_core::bubble::{
    classify_discourse, content, dialog_cost, BubbleAction, DialogHistory, Discourse, SIGMA_SCALE,
    SIGMA_SPACE,
};
use xtom_core::policy::{reward, FeedbackRecord};
use xtom_core::ErrorCode;

#[test]
fn content_matches_closed_form_on_all_levels() {
    for s1 in SIGMA_SPACE {
        for s2 in SIGMA_SCALE {
            let expected = 1.0 + 0.5 * (2.0 * std::f64::consts::PI * s1 * s2).powi(2).ln();
            assert!((content(s1, s2).unwrap() - expected).abs() < 1e-9, "({s1}, {s2})");
        }
    }
    assert!(content(3.15, 9.0).unwrap() > content(1.15, 9.0).unwrap());
    assert!(content(1.15, 9.0).unwrap() > content(1.15, 1.0).unwrap());
    assert_eq!(content(0.0, 1.0).unwrap_err().code, ErrorCode::NonpositiveSigma);
    assert_eq!(content(1.0, -2.0).unwrap_err().code, ErrorCode::NonpositiveSigma);
}

fn action(attention: u32, act: usize, space: u8, scale: u8) -> BubbleAction {
    BubbleAction {
        attention: NodeId(attention),
        act: Process::ALL[act],
        space,
        scale,
    }
}

fn arb_action() -> impl Strategy<Value = BubbleAction> {
    (0u32..4, 0usize..3, 0u8..3, 0u8..3).prop_map(|(n, a, s, k)| action(n, a, s, k))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn discourse_agrees_with_rule_oracle(
        hist in prop::collection::vec(arb_action(), 0..10),
        cand in arb_action(),
    ) {
        prop_assert_eq!(classify_discourse(&cand, &history_of(&hist)), discourse_oracle(&cand, &hist));
    }

    #[test]
    fn cost_grows_with_history(hist in prop::collection::vec(arb_action(), 1..10)) {
        let mut prev = 0.0;
        for k in 1..=hist.len() {
            let c = dialog_cost(&history_of(&hist[..k])).unwrap();
            prop_assert!(c >= prev);
            prev = c;
        }
    }

    #[test]
    fn reward_is_monotone_in_feedback(
        cf in 1u8..5, sf in 1u8..=5, cost in 0.05f64..5.0, turn in 1u32..30,
    ) {
        let r = |ss: i8, cf: u8, sf: u8| reward(&FeedbackRecord { ss, cf, sf }, cost, turn).unwrap();
        prop_assert!(r(1, cf + 1, sf) >= r(1, cf, sf));
        prop_assert!(r(-1, cf + 1, sf) <= r(-1, cf, sf));
        let up = r(1, cf, sf);
        prop_assert!(up > 0.0 && up <= (10f64).exp() / turn as f64);
    }
}

#[test]
fn discourse_examples() {
    let arm = |a, s, k| action(5, a, s, k);
    let h = history_of(&[arm(0, 0, 0)]);
    assert_eq!(classify_discourse(&arm(0, 0, 0), &h), Discourse::Recurrence);
    assert_eq!(classify_discourse(&arm(0, 1, 0), &h), Discourse::Elaboration);
    assert_eq!(classify_discourse(&action(6, 0, 0, 0), &h), Discourse::Sequence);
    assert_eq!(classify_discourse(&arm(1, 0, 0), &h), Discourse::Restatement);
    let h = history_of(&[arm(0, 0, 1)]);
    assert_eq!(classify_discourse(&arm(0, 2, 0), &h), Discourse::Summary);
    assert_eq!(classify_discourse(&arm(0, 0, 0), &DialogHistory::default()), Discourse::Sequence);
}

#[test]
fn reward_matches_hand_values() {
    for (ss, cf, sf, cost, turn, expected) in REWARD_CASES {
        let r = reward(&FeedbackRecord { ss, cf, sf }, cost, turn).unwrap();
        assert!(
            reward_close(r, expected),
            "{ss} {cf} {sf} {cost} {turn}: {r} vs {expected}"
        );
    }
}

#[test]
fn reward_rejects_bad_input() {
    let fb = FeedbackRecord { ss: 1, cf: 3, sf: 3 };
    assert_eq!(reward(&fb, 0.0, 1).unwrap_err().code, ErrorCode::ZeroCost);
    assert_eq!(reward(&fb, 1.0, 0).unwrap_err().code, ErrorCode::Range);
    let bad = FeedbackRecord { ss: 0, cf: 3, sf: 3 };
    assert_eq!(reward(&bad, 1.0, 1).unwrap_err().code, ErrorCode::Range);
    let bad = FeedbackRecord { ss: 1, cf: 6, sf: 3 };
    assert_eq!(reward(&bad, 1.0, 1).unwrap_err().code, ErrorCode::Range);
}
