mod common;

use common::SmallNet;
use owlgps::numerics::{
    focal_loss, gaussian_kl, gram_schmidt, pca_project, symmetric_eigen, FocalParams, Tensor,
};
use proptest::prelude::*;

#[test]
fn twenty_random_networks_match_finite_differences() {
    for seed in 0..20 {
        let net = SmallNet::random(seed);
        let err = net.max_relative_error(1e-5);
        assert!(err < 1e-4, "network {seed} ({}): relative error {err:e}", net.hidden_act);
    }
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f64..3.0, rows * cols)
        .prop_map(move |v| Tensor::matrix(rows, cols, v).unwrap())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #[test]
    fn gram_schmidt_rows_are_orthonormal_or_zero(m in (1usize..6, 1usize..6).prop_flat_map(|(r, c)| matrix(r, c))) {
        let o = gram_schmidt(&m, 1e-10);
        for i in 0..m.rows() {
            let ri = o.rows.row(i);
            if o.dependent[i] {
                prop_assert!(ri.iter().all(|&x| x == 0.0));
                continue;
            }
            prop_assert!((dot(ri, ri) - 1.0).abs() < 1e-9);
            for j in 0..i {
                prop_assert!(dot(ri, o.rows.row(j)).abs() < 1e-9);
            }
        }
        // never more independent rows than columns
        prop_assert!(o.dependent.iter().filter(|d| !**d).count() <= m.cols());
    }

    #[test]
    fn kl_is_nonnegative(
        mu in prop::collection::vec(-5.0f64..5.0, 1..6),
        log_sigma in prop::collection::vec(-3.0f64..3.0, 6),
    ) {
        let sigma: Vec<f64> = log_sigma[..mu.len()].iter().map(|l| l.exp()).collect();
        prop_assert!(gaussian_kl(&mu, &sigma).unwrap() >= 0.0);
    }

    #[test]
    fn focal_loss_is_bounded_and_ignores_masked(
        pixels in prop::collection::vec((0.0f64..=1.0, 0u8..3), 1..40),
    ) {
        let (probs, labels): (Vec<f64>, Vec<u8>) = pixels.into_iter().unzip();
        let f = focal_loss(&probs, &labels, FocalParams::default()).unwrap();
        prop_assert!(f.value >= 0.0 && f.value.is_finite());
        prop_assert_eq!(f.fully_masked, labels.iter().all(|&y| y == 2));
        // flipping masked probabilities leaves the loss unchanged
        let flipped: Vec<f64> = probs.iter().zip(&labels).map(|(&p, &y)| if y == 2 { 1.0 - p } else { p }).collect();
        let g = focal_loss(&flipped, &labels, FocalParams::default()).unwrap();
        prop_assert_eq!(f.value, g.value);
    }

    #[test]
    fn pca_variances_are_covariance_eigenvalues(m in matrix(12, 4)) {
        let p = pca_project(&m, 4).unwrap();
        let n = m.rows() as f64;
        let mut cov = vec![0.0; 16];
        for a in 0..4 {
            for b in 0..4 {
                cov[a * 4 + b] = (0..m.rows())
                    .map(|i| (m.get(i, a) - p.mean[a]) * (m.get(i, b) - p.mean[b]))
                    .sum::<f64>() / n;
            }
        }
        let (eig, _) = symmetric_eigen(&Tensor::matrix(4, 4, cov).unwrap()).unwrap();
        for (v, e) in p.variances.iter().zip(&eig) {
            prop_assert!((v - e).abs() < 1e-8 * (1.0 + e.abs()));
        }
        // captured variance along each axis equals the eigenvalue
        for c in 0..p.projected.cols() {
            let var = (0..m.rows()).map(|i| p.projected.get(i, c).powi(2)).sum::<f64>() / n;
            prop_assert!((var - p.variances[c]).abs() < 1e-8 * (1.0 + var));
        }
    }
}
