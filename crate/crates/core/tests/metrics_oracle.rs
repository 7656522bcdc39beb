mod common;

use proptest::prelude::*;
use semguard::harness::{confusion, pca2, roc_auc, trapezoid_auc};
use semguard::nncore::Tensor;
use semguard::rng::seeded;

use common::{gaussian, loop_confusion, max_diff_up_to_sign, pair_auc, svd_pca2};

fn labelled() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..=500).prop_flat_map(|n| {
        (
            // Coarse grid so ties are common.
            prop::collection::vec((0i32..40).prop_map(|v| v as f64 / 8.0), n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auc_equals_pair_counting((scores, mut labels) in labelled()) {
        labels[0] = true;
        labels[1] = false;
        let (curve, auc) = roc_auc(&scores, &labels).unwrap();
        prop_assert!((auc - pair_auc(&scores, &labels)).abs() < 1e-10);
        prop_assert!((auc - trapezoid_auc(&curve)).abs() < 1e-12);
        let last = curve.last().unwrap();
        prop_assert_eq!((curve[0].fpr, curve[0].tpr, last.fpr, last.tpr), (0.0, 0.0, 1.0, 1.0));
        for w in curve.windows(2) {
            prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            prop_assert!(w[1].threshold < w[0].threshold);
        }
    }

    #[test]
    fn confusion_matches_recount((scores, labels) in labelled(), t in -1.0f64..6.0) {
        let c = confusion(&scores, &labels, t);
        prop_assert_eq!(c, loop_confusion(&scores, &labels, t));
        prop_assert_eq!(c.total(), scores.len());
    }

    #[test]
    fn confusion_at_grid_thresholds((scores, labels) in labelled(), k in 0i32..40) {
        let t = k as f64 / 8.0;
        prop_assert_eq!(confusion(&scores, &labels, t), loop_confusion(&scores, &labels, t));
    }
}

#[test]
fn pca_matches_dense_svd() {
    let mut rng = seeded(21);
    for (n, d) in [(50, 20), (400, 20), (10, 3), (200, 5)] {
        // Anisotropic columns keep the top two directions well separated.
        let raw = gaussian(n, d, &mut rng);
        let x = Tensor::from_fn(n, d, |r, c| raw.get(r, c) * (1.0 + 3.0 / (1.0 + c as f64)) + c as f64);
        let p = pca2(&x).unwrap();
        let o = svd_pca2(&x);
        for k in 0..2 {
            assert!(max_diff_up_to_sign(&p.components[k], &o.components[k]) < 1e-8);
            assert!((p.eigenvalues[k] - o.variances[k]).abs() < 1e-8 * o.variances[k].max(1.0));
            let ours: Vec<f64> = (0..n).map(|r| p.coords.get(r, k)).collect();
            let theirs: Vec<f64> = o.coords.iter().map(|c| c[k]).collect();
            assert!(max_diff_up_to_sign(&ours, &theirs) < 1e-8);
        }
    }
}

#[test]
fn pca_sign_convention() {
    let x = gaussian(60, 4, &mut seeded(2));
    let p = pca2(&x).unwrap();
    for c in &p.components {
        let lead = c.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        assert!(lead > 0.0);
    }
}
