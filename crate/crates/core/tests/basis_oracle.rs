//! pca_basis checked against a cyclic Jacobi eigensolver on XᵀX, written here
//! without any linear-algebra library.

use pas_core::rng::{self, Purpose};
use pas_core::solvers::HistoryBuffer;
use pas_core::subspace::pca_basis;
use pas_core::Vector;
use rand::Rng;

type Mat = Vec<Vec<f64>>;

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue.
fn jacobi_eigen(mut a: Mat) -> Vec<(f64, Vec<f64>)> {
    let n = a.len();
    let mut v: Mat = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n).map(|j| (a[j][j], (0..n).map(|i| v[i][j]).collect())).collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    pairs
}

fn projector(vectors: &[Vec<f64>]) -> Mat {
    // orthonormalize first so the projector is exact
    let mut q: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let mut w = v.clone();
        for _ in 0..2 {
            for u in &q {
                let dot: f64 = w.iter().zip(u).map(|(a, b)| a * b).sum();
                w.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        q.push(w.iter().map(|a| a / norm).collect());
    }
    let n = vectors[0].len();
    (0..n)
        .map(|i| (0..n).map(|j| q.iter().map(|u| u[i] * u[j]).sum()).collect())
        .collect()
}

#[test]
fn basis_spans_direction_plus_leading_principal_axes() {
    let mut rng = rng::stream(99, Purpose::Probe, 0);
    let dim = 8;
    for case in 0..200 {
        let rows = rng.random_range(4..=9);
        let mut data: Vec<Vector> = (0..rows).map(|_| rng::standard_normal_vector(&mut rng, dim)).collect();
        let d = data.pop().unwrap();
        let mut history = HistoryBuffer::new(data[0].clone());
        for r in &data[1..] {
            history.push(r.clone()).unwrap();
        }
        let k = rng.random_range(2..=4);

        // X' = history rows plus d
        let mut xtx = vec![vec![0.0; dim]; dim];
        for r in data.iter().chain(std::iter::once(&d)) {
            for i in 0..dim {
                for j in 0..dim {
                    xtx[i][j] += r[i] * r[j];
                }
            }
        }
        let eig = jacobi_eigen(xtx);
        // skip draws with nearly repeated eigenvalues (subspace ill-defined)
        if (0..k).any(|j| (eig[j].0 - eig[j + 1].0).abs() < 1e-3 * eig[0].0) {
            continue;
        }
        let mut oracle = vec![d.iter().copied().collect::<Vec<f64>>()];
        oracle.extend(eig.iter().take(k - 1).map(|(_, v)| v.clone()));

        let basis = pca_basis(&history, &d, k).unwrap();
        assert_eq!(basis.len(), k, "case {case}");
        let got: Vec<Vec<f64>> = basis.vectors().iter().map(|u| u.iter().copied().collect()).collect();
        let (p, q) = (projector(&got), projector(&oracle));
        let diff = p
            .iter()
            .zip(&q)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        assert!(diff < 1e-8, "case {case}: projector mismatch {diff:e}");
    }
}
