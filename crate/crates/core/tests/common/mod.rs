//! Helpers shared by the integration and acceptance suites: seeded random
//! problem generators and an independent Jacobi eigensolver used as the
//! reference oracle for eigenvalue claims.

#![allow(dead_code)]

use blockprior::{BlockSpec, Scenario, SymMatrix};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn standard_normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    m
}

/// Random orthogonal matrix from the QR factorization of a Gaussian draw.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
    let g = standard_normal_matrix(rng, dim, dim);
    g.qr().q()
}

/// Random well-conditioned positive-definite matrix.
pub fn random_pd(rng: &mut ChaCha8Rng, dim: usize) -> SymMatrix {
    let g = standard_normal_matrix(rng, dim, dim);
    let shift = 0.3 + rng.random::<f64>() * 0.7;
    let scale = 0.5 + 1.5 * rng.random::<f64>();
    let m = (&g * g.transpose()).scale(scale / dim as f64)
        + DMatrix::identity(dim, dim).scale(shift * scale);
    SymMatrix::symmetrized(&m).unwrap()
}

/// Random symmetric matrix with entries of order `scale`.
pub fn random_sym(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> SymMatrix {
    let g = standard_normal_matrix(rng, dim, dim);
    SymMatrix::symmetrized(&g.scale(scale)).unwrap()
}

/// Random positive semi-definite matrix with entries of order `scale`.
pub fn random_psd(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> SymMatrix {
    let g = standard_normal_matrix(rng, dim, dim);
    SymMatrix::symmetrized(&(&g * g.transpose()).scale(scale / dim as f64)).unwrap()
}

pub fn random_blocks(rng: &mut ChaCha8Rng, max_blocks: usize, max_dim: usize) -> Vec<BlockSpec> {
    let n_blocks = 1 + rng.random_range(0..max_blocks);
    (0..n_blocks)
        .map(|i| {
            let dim = 1 + rng.random_range(0..max_dim);
            let labels: Vec<String> = (0..dim).map(|k| format!("p{i}_{k}")).collect();
            let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
            BlockSpec::new(&format!("block{i}"), &refs, random_pd(rng, dim)).unwrap()
        })
        .collect()
}

pub fn random_gradient(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Random scenario; `quadratic` adds a symmetric quadratic mean and a PSD
/// quadratic variance term (so simulation never leaves its validity region).
pub fn random_scenario(
    rng: &mut ChaCha8Rng,
    max_blocks: usize,
    max_dim: usize,
    quadratic: bool,
) -> Scenario {
    let blocks = random_blocks(rng, max_blocks, max_dim);
    let n: usize = blocks.iter().map(|b| b.dim()).sum();
    let gradient = random_gradient(rng, n);
    let phi0: Vec<f64> = (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut builder = Scenario::builder(blocks, gradient)
        .intrinsic_variance(0.5 + 1.5 * rng.random::<f64>())
        .phi0(phi0)
        .theta0(rng.sample::<f64, _>(StandardNormal));
    if quadratic {
        builder = builder
            .quad_mean(random_sym(rng, n, 0.4))
            .quad_var(random_psd(rng, n, 0.3));
    }
    builder.build().unwrap()
}

/// Cyclic Jacobi eigenvalue iteration, independent of the eigensolver the
/// library uses. Returns all eigenvalues in ascending order.
pub fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols());
    let mut a = m.clone();
    let norm = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(a[(p, q)].abs());
            }
        }
        if off <= 1e-15 * norm {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eigs
}

pub fn leq_rel(lhs: f64, rhs: f64, rel: f64) -> bool {
    lhs - rhs <= rel * lhs.abs().max(rhs.abs())
}

pub fn close_rel(a: f64, b: f64, rel: f64, floor: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(floor)
}
