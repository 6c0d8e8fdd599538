use dgq_core::attention::{attention_scores, quantize_attention, AttentionScale, AttentionScores};
use dgq_core::tensorio::Tensor;
use proptest::prelude::*;

fn scores() -> impl Strategy<Value = AttentionScores> {
    (1usize..8, 2usize..12, 1usize..6).prop_flat_map(|(n_q, n_k, d)| {
        (
            prop::collection::vec(-3f32..3.0, n_q * d),
            prop::collection::vec(-3f32..3.0, n_k * d),
        )
            .prop_map(move |(q, k)| {
                let q = Tensor::from_matrix(n_q, d, q).unwrap();
                let k = Tensor::from_matrix(n_k, d, k).unwrap();
                attention_scores(&q, &k)
                    .unwrap()
                    .with_start_token(true)
                    .unwrap()
            })
    })
}

proptest! {
    #[test]
    fn ratio_bound_and_anchor(a in scores(), bits in 2u32..=8) {
        let qa = quantize_attention(&a, bits, AttentionScale::Dynamic).unwrap();
        let deq = qa.dequantize().unwrap();
        let p = qa.params().unwrap();
        let n_k = a.n_k();
        let max = a.max_non_start();
        prop_assert_eq!(qa.scale, max);
        let mut anchor_seen = false;
        for (i, (&x, &y)) in a.scores().data().iter().zip(deq.data()).enumerate() {
            if i % n_k == 0 {
                prop_assert_eq!(x.to_bits(), y.to_bits());
                continue;
            }
            let code = qa.codes[(i / n_k) * (n_k - 1) + i % n_k - 1];
            if x == max {
                prop_assert_eq!(code, 0);
                prop_assert_eq!(y, max);
                anchor_seen = true;
            }
            if code < p.max_code() && x > 0.0 && y >= f32::MIN_POSITIVE {
                let r = x as f64 / y as f64;
                prop_assert!(r >= 0.5f64.sqrt() - 1e-12 && r <= 2f64.sqrt() + 1e-12, "ratio {r}");
            }
        }
        prop_assert!(anchor_seen);
    }

    #[test]
    fn codes_ignore_power_of_two_rescaling(a in scores(), bits in 2u32..=8, e in -3i32..=0) {
        let c = 2f32.powi(e);
        let n_k = a.n_k();
        let scaled: Vec<f32> = a
            .scores()
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| if i % n_k == 0 { x } else { c * x })
            .collect();
        let b = AttentionScores::unnormalized(a.scores().with_data(scaled).unwrap(), true).unwrap();
        let qa = quantize_attention(&a, bits, AttentionScale::Dynamic).unwrap();
        let qb = quantize_attention(&b, bits, AttentionScale::Dynamic).unwrap();
        prop_assert_eq!(qa.codes, qb.codes);
    }
}

#[test]
fn static_scale_clamps_larger_scores_to_code_zero() {
    let a = AttentionScores::new(
        Tensor::from_matrix(1, 3, vec![0.5, 0.4, 0.1]).unwrap(),
        true,
    )
    .unwrap();
    let qa = quantize_attention(&a, 4, AttentionScale::Static(0.2)).unwrap();
    assert_eq!(qa.codes, vec![0, 1]);
    assert_eq!(qa.dequantize().unwrap().data(), &[0.5, 0.2, 0.1]);
}
