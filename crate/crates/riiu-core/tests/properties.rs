//! Property tests over the numeric invariants.

use proptest::prelude::*;
use riiu_core::autophi::{auto_phi_rel, eval_phi_at, PhiConfig, SlidingBuffer};
use riiu_core::eig::sym_eig;
use riiu_core::tensor::{covariance, Matrix, Vector};
use riiu_core::RngStream;

fn vectors(dim: usize, count: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(
        prop::collection::vec(prop::num::f64::NORMAL.prop_map(|x| x % 1e3), dim),
        count,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn phi_stays_in_unit_interval(samples in vectors(6, 0..40), rank in 1usize..6) {
        let samples: Vec<Vector> = samples.into_iter().map(Vector::from_vec).collect();
        let phi = auto_phi_rel(&samples, &PhiConfig::new(rank));
        prop_assert!((0.0..=1.0).contains(&phi), "phi {}", phi);
    }

    #[test]
    fn covariance_is_order_invariant(samples in vectors(5, 2..24), swap_a in 0usize..24, swap_b in 0usize..24) {
        let mut samples: Vec<Vector> = samples.into_iter().map(Vector::from_vec).collect();
        let before = covariance(&samples).unwrap();
        let n = samples.len();
        samples.swap(swap_a % n, swap_b % n);
        samples.reverse();
        let after = covariance(&samples).unwrap();
        let diff = before.sub(&after).unwrap().frobenius_norm();
        prop_assert!(diff <= 1e-9 * (1.0 + before.frobenius_norm()), "diff {}", diff);
    }

    #[test]
    fn eig_reconstructs_and_is_orthonormal(entries in prop::collection::vec(-10.0f64..10.0, 21)) {
        let mut m = Matrix::zeros(6, 6);
        let mut k = 0;
        for i in 0..6 {
            for j in i..6 {
                m.set(i, j, entries[k]);
                m.set(j, i, entries[k]);
                k += 1;
            }
        }
        let e = sym_eig(&m, 1e-10).unwrap();
        let lam = Matrix::from_fn(6, 6, |i, j| if i == j { e.values[i] } else { 0.0 });
        let recon = e.vectors.matmul(&lam).unwrap().matmul(&e.vectors.transpose()).unwrap();
        let err = recon.sub(&m).unwrap().frobenius_norm();
        prop_assert!(err <= 1e-9 * (1.0 + m.frobenius_norm()), "recon {}", err);
        let gram = e.vectors.transpose().matmul(&e.vectors).unwrap();
        let gram_err = gram.sub(&Matrix::identity(6)).unwrap().frobenius_norm();
        prop_assert!(gram_err <= 1e-9, "gram {}", gram_err);
    }

    #[test]
    fn ring_window_matches_list_tail(values in prop::collection::vec(-100.0f64..100.0, 1..80), cap in 1usize..20) {
        let mut buf = SlidingBuffer::new(cap, 1);
        let mut list: Vec<f64> = Vec::new();
        for v in &values {
            buf.push(Vector::from_slice(&[*v])).unwrap();
            list.push(*v);
        }
        let tail: Vec<f64> = list.iter().rev().take(cap).rev().cloned().collect();
        let window: Vec<f64> = buf.window().iter().map(|v| v[0]).collect();
        prop_assert_eq!(window, tail);
    }
}

/// The fixed-subspace gradient matches central finite differences on
/// 100 seeded windows whose rank gap is healthy.
#[test]
fn gradient_matches_finite_differences_on_100_buffers() {
    let cfg = PhiConfig::new(4);
    let h = 1e-6;
    let mut rng = RngStream::new(7100);
    let mut checked = 0;
    let mut attempts = 0;
    while checked < 100 && attempts < 400 {
        attempts += 1;
        let samples: Vec<Vector> = (0..20)
            .map(|_| Vector::from_vec((0..10).map(|_| rng.normal()).collect()))
            .collect();
        let idx = attempts % samples.len();
        let eval = eval_phi_at(&samples, idx, &cfg);
        if eval.eigengap.is_some_and(|g| g < 1e-6) || eval.grad.norm() < 1e-9 {
            continue;
        }
        let mut fd = Vector::zeros(10);
        for i in 0..10 {
            let mut plus = samples.clone();
            plus[idx][i] += h;
            let mut minus = samples.clone();
            minus[idx][i] -= h;
            fd[i] = (auto_phi_rel(&plus, &cfg) - auto_phi_rel(&minus, &cfg)) / (2.0 * h);
        }
        let rel = fd.sub(&eval.grad).norm() / eval.grad.norm();
        assert!(rel < 1e-4, "buffer {attempts}: rel {rel}");
        checked += 1;
    }
    assert_eq!(checked, 100, "not enough well-separated draws");
}
