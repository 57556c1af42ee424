use orpo_core::objectives::{
    delta_term, odds_ratio_loss, or_partials, orpo_loss, DEFAULT_LOGP_CLAMP,
};
use orpo_core::{HyperParams, SeqScore};
use proptest::prelude::*;

fn score(p: f64, len: usize) -> SeqScore {
    SeqScore::from_avg(p.ln(), len)
}

proptest! {
    // Gradient = gate × contrast of the two log-likelihood gradients, each
    // amplified by 1/(1-P); written here with plain odds arithmetic.
    #[test]
    fn or_gradient_factorizes(pw in 0.01f64..0.99, pl in 0.01f64..0.99) {
        let (w, l) = (score(pw, 3), score(pl, 5));
        let (dw, dl) = or_partials(&w, &l, DEFAULT_LOGP_CLAMP).unwrap();
        let ratio = (pw / (1.0 - pw)) / (pl / (1.0 - pl));
        let gate = 1.0 / (1.0 + ratio);
        prop_assert!((dw - (-gate / (1.0 - pw))).abs() <= 1e-9 * (1.0 + dw.abs()));
        prop_assert!((dl - gate / (1.0 - pl)).abs() <= 1e-9 * (1.0 + dl.abs()));
        prop_assert!((delta_term(ratio.ln()) - gate).abs() < 1e-12);
    }

    #[test]
    fn or_loss_is_log_one_plus_inverse_ratio(pw in 0.01f64..0.99, pl in 0.01f64..0.99) {
        let (loss, z) = odds_ratio_loss(&score(pw, 2), &score(pl, 2), DEFAULT_LOGP_CLAMP).unwrap();
        let ratio = (pw / (1.0 - pw)) / (pl / (1.0 - pl));
        prop_assert!((z - ratio.ln()).abs() < 1e-9);
        prop_assert!((loss - (1.0 + 1.0 / ratio).ln()).abs() < 1e-9);
        prop_assert!(loss > 0.0);
    }

    #[test]
    fn orpo_total_is_sft_plus_weighted_penalty(pw in 0.01f64..0.99, pl in 0.01f64..0.99, lambda in 0.0f64..2.0) {
        let (w, l) = (score(pw, 4), score(pl, 4));
        let hp = HyperParams { lambda, ..Default::default() };
        let r = orpo_loss(&w, &l, &hp).unwrap();
        let (l_or, _) = odds_ratio_loss(&w, &l, DEFAULT_LOGP_CLAMP).unwrap();
        prop_assert!((r.l_total - (-pw.ln() + lambda * l_or)).abs() < 1e-9);
    }
}
