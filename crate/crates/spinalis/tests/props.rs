//! Property suites over the file formats, metrics algebra, and clustering.

use proptest::prelude::*;

use spinalis::fcm::{self, FcmConfig};
use spinalis::io;
use spinalis::metrics::{self, Level};
use spinalis::volume::{MaskVolume, Volume};

fn arb_volume() -> impl Strategy<Value = Volume> {
    (1usize..6, 1usize..6, 1usize..4)
        .prop_flat_map(|(w, h, d)| {
            let n = w * h * d;
            (
                Just((w, h, d)),
                proptest::collection::vec(-1000.0f32..1000.0, n),
                0.01f64..10.0,
            )
        })
        .prop_map(|((w, h, d), data, s)| Volume::new(w, h, d, [s, s, s * 3.0], data).unwrap())
}

fn arb_mask_pair() -> impl Strategy<Value = (MaskVolume, MaskVolume)> {
    (1usize..16, 1usize..16).prop_flat_map(|(w, h)| {
        let n = w * h;
        (
            Just((w, h)),
            proptest::collection::vec(proptest::bool::ANY, n),
            proptest::collection::vec(proptest::bool::ANY, n),
        )
            .prop_map(|((w, h), a, b)| {
                let to_mask = |bits: Vec<bool>| {
                    MaskVolume::new(
                        w,
                        h,
                        1,
                        [1.0, 1.0, 1.0],
                        bits.into_iter().map(|b| if b { 100 } else { 0 }).collect(),
                    )
                    .unwrap()
                };
                (to_mask(a), to_mask(b))
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svol_round_trip_is_exact(v in arb_volume()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.svol");
        io::save_volume(&v, &path).unwrap();
        let back = io::load_volume(&path).unwrap();
        prop_assert_eq!(v, back);
    }

    #[test]
    fn dice_iou_algebraic_link(pair in arb_mask_pair()) {
        let (pred, truth) = pair;
        let counts = metrics::confusion_counts(&pred, &truth, Level::Pixel).unwrap();
        let dice = metrics::dice(&pred, &truth).unwrap();
        let iou = metrics::iou(&counts);
        match (dice, iou) {
            (Some(d), Some(i)) => {
                prop_assert!((d - 2.0 * i / (1.0 + i)).abs() < 1e-12);
            }
            (None, None) => {}
            // dice None means both masks empty -> union empty -> iou None,
            // but iou None only needs tp+fp+fn = 0 which implies dice None
            other => prop_assert!(false, "marker mismatch {:?}", other),
        }
        // symmetry
        prop_assert_eq!(metrics::dice(&truth, &pred).unwrap(), dice);
    }

    #[test]
    fn fcm_memberships_are_row_stochastic(
        points in proptest::collection::vec(0.0f64..1.0, 8..40),
        seed in 0u64..500,
    ) {
        let cfg = FcmConfig { c: 3, seed, max_iter: 25, ..Default::default() };
        let model = fcm::fit(&points, 1, &cfg).unwrap();
        for k in 0..points.len() {
            let sum: f64 = model.membership(k).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
        for pair in model.objective_history.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-12);
        }
    }
}
