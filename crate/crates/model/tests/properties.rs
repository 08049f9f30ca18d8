mod common;

use common::tiny_model;
use loopforge_model::config::{AnnealConfig, LrSchedule};
use loopforge_model::decode::{EditOp, EditScript, LoopSpec, ScriptedEdit, Target};
use loopforge_model::losses::{kl_anneal, loss_kl, lr_at};
use loopforge_model::{DecodeSession, StopRule};
use proptest::prelude::*;
use std::sync::Arc;

fn arb_points() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec([-2.0f64..2.0, -2.0f64..2.0], 1..5)
}

fn arb_op() -> impl Strategy<Value = EditOp> {
    prop_oneof![
        (-1.0f64..1.0, -1.0f64..1.0).prop_map(|(dx, dy)| EditOp::Translate { dx, dy }),
        (0.01f64..4.0).prop_map(|s| EditOp::Scale { s }),
        (arb_points(), any::<bool>()).prop_map(|(points, level_up)| EditOp::Replace { points, level_up }),
        prop::collection::vec((arb_points(), any::<bool>()), 1..3).prop_map(|loops| EditOp::Insert {
            loops: loops
                .into_iter()
                .map(|(points, level_up)| LoopSpec { points, level_up })
                .collect(),
        }),
        (0usize..50).prop_map(|t| EditOp::FreezePrefix { t }),
    ]
}

fn arb_target() -> impl Strategy<Value = Target> {
    prop_oneof![
        (0usize..100).prop_map(Target::At),
        Just(Target::Keyword(loopforge_model::decode::Keyword::Next)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn edit_scripts_round_trip_through_json(
        edits in prop::collection::vec((arb_target(), arb_op()), 0..6),
        bare in any::<bool>(),
    ) {
        let script = EditScript {
            edits: edits.into_iter().map(|(step, op)| ScriptedEdit { step, op }).collect(),
        };
        let text = if bare {
            serde_json::to_string(&script.edits).unwrap()
        } else {
            serde_json::to_string(&script).unwrap()
        };
        prop_assert_eq!(EditScript::from_json(&text).unwrap(), script);
    }

    #[test]
    fn anneal_is_monotone_and_bounded(step in 0u64..1_000_000, beta in 0.01f64..4.0) {
        let cfg = AnnealConfig::default();
        let a = kl_anneal(step, beta, cfg);
        let b = kl_anneal(step + 1, beta, cfg);
        prop_assert!(a <= b);
        prop_assert!(a >= beta * cfg.eta0 - 1e-12 && b <= beta);
    }

    #[test]
    fn lr_never_increases(warm in 0usize..20, ramp in 1usize..40, epoch in 0usize..80) {
        let sched = LrSchedule { base_lr: 1e-3, warm_epochs: warm, rampdown_epochs: ramp };
        let now = lr_at(epoch, sched);
        prop_assert!(now >= 0.0 && now <= 1e-3);
        prop_assert!(lr_at(epoch + 1, sched) <= now);
    }

    #[test]
    fn kl_loss_respects_its_floor(
        mu in prop::collection::vec(-3.0f64..3.0, 1..16),
        floor in 0.0f64..10.0,
        beta in 0.0f64..2.0,
    ) {
        let lv = vec![0.0; mu.len()];
        let bound = beta * floor / mu.len() as f64;
        prop_assert!(loss_kl(&mu, &lv, beta, floor) >= bound * (1.0 - 1e-14));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn rewinding_and_resuming_reproduces_the_decode(seed in 0u64..500, cut in 0usize..16) {
        let m = Arc::new(tiny_model(seed % 7));
        let stop = StopRule::PlaneCount(4);
        let mut s = DecodeSession::sampled(Arc::clone(&m), seed, stop).unwrap();
        s.run().unwrap();
        let full = s.emitted().to_vec();
        let status = s.status();
        let cut = cut.min(full.len());
        s.rewind(cut).unwrap();
        prop_assert_eq!(s.emitted(), &full[..cut]);
        s.run().unwrap();
        prop_assert_eq!(s.emitted(), full.as_slice());
        prop_assert_eq!(s.status(), status);
    }
}
