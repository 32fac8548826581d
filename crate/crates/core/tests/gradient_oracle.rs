mod common;

use common::*;
use lipogate::numerics::{confidence, efficiency_loss, NUM_CLASSES};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn analytic_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..25 {
        let b = random_batch(&mut rng, 8);
        let err = max_fd_error(&b, 0.1, 1e-8, 1e-5);
        assert!(err < 1e-5, "batch {i}: relative error {err:e}");
    }
}

#[test]
fn toxic_efficiency_logits_are_masked() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for i in 0..100 {
        assert!(masking_trial(&mut rng), "trial {i}");
    }
}

#[test]
fn confidence_landmarks() {
    assert!(confidence(&[0.1; NUM_CLASSES]).unwrap().abs() <= 1e-12);
    let mut one_hot = [0.0; NUM_CLASSES];
    one_hot[3] = 1.0;
    assert_eq!(confidence(&one_hot).unwrap(), 1.0);
    let mut two = [0.0; NUM_CLASSES];
    two[0] = 0.5;
    two[9] = 0.5;
    assert!((confidence(&two).unwrap() - 0.698970).abs() <= 1e-6);
    assert!((confidence(&two).unwrap() - (1.0 - 2f64.ln() / 10f64.ln())).abs() <= 1e-12);
}

#[test]
fn all_toxic_batch_has_zero_efficiency_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut b = random_batch(&mut rng, 6);
    b.tox.iter_mut().for_each(|t| *t = true);
    b.eff.iter_mut().for_each(|e| *e = None);
    assert_eq!(efficiency_loss(&b.logits, &b.eff, &b.tox, 1e-8).unwrap(), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradients_hold_for_any_alpha(seed in any::<u64>(), alpha in 0.0f64..1.0) {
        let b = random_batch(&mut ChaCha8Rng::seed_from_u64(seed), 8);
        let err = max_fd_error(&b, alpha, 1e-8, 1e-5);
        prop_assert!(err < 1e-5, "relative error {:e}", err);
    }

    #[test]
    fn confidence_stays_in_unit_interval(w in prop::array::uniform10(0.0f64..1.0)) {
        let s: f64 = w.iter().sum();
        prop_assume!(s > 1e-6);
        let p = w.map(|x| x / s);
        if let Ok(c) = confidence(&p) {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&c));
        }
    }
}
