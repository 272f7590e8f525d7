//! Randomized property tests for the core invariants that must hold for any
//! input, not just the fixtures used in the unit suites.

use proptest::prelude::*;

use vqc::codebook::{perplexity, Assignment, Codebook};
use vqc::numcore::Matrix;
use vqc::report::ReportRow;
use vqc::synthdata::StandardScaler;

fn finite_f64() -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL | prop::num::f64::ZERO
}

proptest! {
    /// Quantization picks a token at least as close as every other token.
    #[test]
    fn quantize_is_argmin(
        s in 1usize..24,
        n in 1usize..64,
        d in 1usize..5,
        seed_vals in prop::collection::vec(-10.0f64..10.0, 24 * 5 + 64 * 5),
    ) {
        let tokens = Matrix::from_vec(s, d, seed_vals[..s * d].to_vec());
        let z = Matrix::from_vec(n, d, seed_vals[24 * 5..24 * 5 + n * d].to_vec());
        let cb = Codebook::from_state(tokens.clone(), tokens.clone(), vec![1.0; s], 0.9, true);
        let (a, q) = cb.quantize(&z).unwrap();
        for j in 0..n {
            let dist = |t: &[f64]| -> f64 {
                z.row(j).iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum()
            };
            let chosen = dist(q.row(j));
            for k in 0..s {
                prop_assert!(chosen <= dist(tokens.row(k)) + 1e-12);
            }
            // tie-break: no lower-indexed token is strictly equal-distance
            for k in 0..a.0[j] {
                prop_assert!(dist(tokens.row(k)) > chosen);
            }
        }
    }

    /// Perplexity stays within [1, min(S, N)] for any assignment.
    #[test]
    fn perplexity_bounds(
        s in 1usize..40,
        indices in prop::collection::vec(0usize..40, 1..200),
    ) {
        let clipped: Vec<usize> = indices.iter().map(|&k| k % s).collect();
        let n = clipped.len();
        let p = perplexity(&Assignment(clipped), s).unwrap();
        prop_assert!(p >= 1.0 - 1e-12);
        prop_assert!(p <= s.min(n) as f64 + 1e-9);
    }

    /// transform followed by inverse_transform is the identity.
    #[test]
    fn scaler_round_trip(
        d in 1usize..6,
        n in 1usize..20,
        vals in prop::collection::vec(-100.0f64..100.0, 6 * 20),
        means in prop::collection::vec(-50.0f64..50.0, 6),
        stds in prop::collection::vec(0.1f64..20.0, 6),
    ) {
        let data = Matrix::from_vec(n, d, vals[..n * d].to_vec());
        let scaler = StandardScaler { means: means[..d].to_vec(), stds: stds[..d].to_vec() };
        let back = scaler.inverse_transform(&scaler.transform(&data));
        for (a, b) in data.as_slice().iter().zip(back.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }

    /// CSV rows parse back to bit-identical metric values.
    #[test]
    fn report_row_csv_round_trip(
        seed in 0u64..1000,
        sweep in 0usize..10_000,
        mse in finite_f64(),
        ppl in finite_f64(),
        entropy in finite_f64(),
        coverage in finite_f64(),
        ood in finite_f64(),
        dead in finite_f64(),
    ) {
        let row = ReportRow {
            experiment: "single-run".into(),
            arm: "baseline".into(),
            seed,
            sweep_value: sweep,
            checkpoint: "final".into(),
            recon_mse: mse,
            perplexity: ppl,
            entropy_ratio: entropy,
            mode_coverage: coverage,
            ood_fraction: ood,
            dead_token_fraction: dead,
        };
        let parsed = ReportRow::parse_csv(&row.to_csv()).unwrap();
        prop_assert_eq!(parsed.recon_mse.to_bits(), row.recon_mse.to_bits());
        prop_assert_eq!(parsed.perplexity.to_bits(), row.perplexity.to_bits());
        prop_assert_eq!(parsed.entropy_ratio.to_bits(), row.entropy_ratio.to_bits());
        prop_assert_eq!(parsed.mode_coverage.to_bits(), row.mode_coverage.to_bits());
        prop_assert_eq!(parsed.ood_fraction.to_bits(), row.ood_fraction.to_bits());
        prop_assert_eq!(parsed.dead_token_fraction.to_bits(), row.dead_token_fraction.to_bits());
        prop_assert_eq!(parsed.seed, row.seed);
        prop_assert_eq!(parsed.sweep_value, row.sweep_value);
    }
}
