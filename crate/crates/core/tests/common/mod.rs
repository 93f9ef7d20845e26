//! Independent reference computations used by the integration and
//! acceptance tests. Nothing here calls the library's solvers; matrices are
//! plain row-major `Vec<f64>`.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rescal::{FactorModel, SparseAdjacencyTensor};

/// Row-major dense matrix.
#[derive(Clone, Debug)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Dense { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_na(m: &DMatrix<f64>) -> Self {
        let mut d = Dense::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                d.data[i * m.ncols() + j] = m[(i, j)];
            }
        }
        d
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn t(&self) -> Dense {
        let mut out = Dense::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.at(i, j));
            }
        }
        out
    }

    pub fn mul(&self, other: &Dense) -> Dense {
        assert_eq!(self.cols, other.rows);
        let mut out = Dense::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = 0.0;
                for p in 0..self.cols {
                    acc += self.at(i, p) * other.at(p, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    pub fn max_abs_diff(&self, m: &DMatrix<f64>) -> f64 {
        assert_eq!((self.rows, self.cols), m.shape());
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                worst = worst.max((self.at(i, j) - m[(i, j)]).abs());
            }
        }
        worst
    }
}

/// Kronecker product `a (x) b`.
pub fn kron(a: &Dense, b: &Dense) -> Dense {
    let mut out = Dense::zeros(a.rows * b.rows, a.cols * b.cols);
    for i in 0..a.rows {
        for j in 0..a.cols {
            for p in 0..b.rows {
                for q in 0..b.cols {
                    out.set(i * b.rows + p, j * b.cols + q, a.at(i, j) * b.at(p, q));
                }
            }
        }
    }
    out
}

/// Solves the square system `m x = rhs` (one column per right-hand side)
/// by Gaussian elimination with partial pivoting.
pub fn gauss_solve(m: &Dense, rhs: &Dense) -> Dense {
    let n = m.rows;
    assert_eq!(n, m.cols);
    assert_eq!(n, rhs.rows);
    let mut a = m.clone();
    let mut b = rhs.clone();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a.at(x, col).abs().total_cmp(&a.at(y, col).abs()))
            .unwrap();
        assert!(a.at(pivot, col).abs() > 1e-300, "singular system");
        for j in 0..n {
            let tmp = a.at(col, j);
            a.set(col, j, a.at(pivot, j));
            a.set(pivot, j, tmp);
        }
        for j in 0..b.cols {
            let tmp = b.at(col, j);
            b.set(col, j, b.at(pivot, j));
            b.set(pivot, j, tmp);
        }
        for row in col + 1..n {
            let factor = a.at(row, col) / a.at(col, col);
            for j in col..n {
                a.set(row, j, a.at(row, j) - factor * a.at(col, j));
            }
            for j in 0..b.cols {
                b.set(row, j, b.at(row, j) - factor * b.at(col, j));
            }
        }
    }
    let mut x = Dense::zeros(n, b.cols);
    for j in 0..b.cols {
        for row in (0..n).rev() {
            let mut acc = b.at(row, j);
            for p in row + 1..n {
                acc -= a.at(row, p) * x.at(p, j);
            }
            x.set(row, j, acc / a.at(row, row));
        }
    }
    x
}

/// `A` step as an explicit stacked least-squares problem: every row of the
/// new `A` fits the rows of `[X_1, X_1^T, X_2, X_2^T, ...]` against the
/// design `[R_1 A^T, R_1^T A^T, ...]` with a ridge of `lambda`. Solved via
/// the augmented system and Gaussian elimination.
pub fn update_a_oracle(a: &Dense, rs: &[Dense], xs: &[Dense], lambda: f64) -> Dense {
    let n = a.rows;
    let rank = a.cols;
    // design B: rank x (2 N K)
    let mut blocks = Vec::new();
    let mut targets = Vec::new();
    for (r, x) in rs.iter().zip(xs) {
        blocks.push(r.mul(&a.t()));
        blocks.push(r.t().mul(&a.t()));
        targets.push(x.clone());
        targets.push(x.t());
    }
    let width: usize = blocks.iter().map(|b| b.cols).sum();
    let mut design = Dense::zeros(rank, width);
    let mut target = Dense::zeros(n, width);
    let mut off = 0;
    for (b, y) in blocks.iter().zip(&targets) {
        for i in 0..rank {
            for j in 0..b.cols {
                design.set(i, off + j, b.at(i, j));
            }
        }
        for i in 0..n {
            for j in 0..y.cols {
                target.set(i, off + j, y.at(i, j));
            }
        }
        off += b.cols;
    }
    // (B B^T + lambda I) A^T = B Y^T
    let mut gram = design.mul(&design.t());
    for d in 0..rank {
        gram.set(d, d, gram.at(d, d) + lambda);
    }
    let sol = gauss_solve(&gram, &design.mul(&target.t()));
    sol.t()
}

/// Symmetric eigen-decomposition by cyclic Jacobi rotations. Returns the
/// eigenvalues (unsorted) and the eigenvectors as columns.
pub fn jacobi_eigen(m: &Dense) -> (Vec<f64>, Dense) {
    let n = m.rows;
    let mut a = m.clone();
    let mut v = Dense::zeros(n, n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.at(i, j).powi(2))
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.at(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.at(k, p);
                    let akq = a.at(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.at(p, k);
                    let aqk = a.at(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    ((0..n).map(|i| a.at(i, i)).collect(), v)
}

/// Average precision by explicit threshold enumeration: for each distinct
/// score (descending) count the items at or above it, then add
/// `precision * (recall - previous recall)`.
pub fn brute_force_ap(labels: &[bool], scores: &[f64]) -> f64 {
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut area = 0.0;
    let mut recall_prev = 0.0;
    for t in thresholds {
        let predicted: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
        let tp = predicted.iter().filter(|&&i| labels[i]).count() as f64;
        let recall = tp / positives;
        if recall > recall_prev {
            let precision = tp / predicted.len() as f64;
            area += precision * (recall - recall_prev);
            recall_prev = recall;
        }
    }
    area
}

/// Loss of the logistic model written out cell by cell from the definition.
pub fn naive_logit_loss(x: &SparseAdjacencyTensor, m: &FactorModel, lambda_a: f64, lambda_r: f64) -> f64 {
    let n = m.n_entities();
    let mut total = 0.0;
    for k in 0..m.n_relations() {
        for i in 0..n {
            for j in 0..n {
                let mut theta = 0.0;
                for p in 0..m.rank() {
                    for q in 0..m.rank() {
                        theta += m.a()[(i, p)] * m.r_k(k)[(p, q)] * m.a()[(j, q)];
                    }
                }
                // log(1 + e^t) written without cancellation for moderate t
                let log1pexp = |t: f64| if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
                total += if x.get(i, j, k) { log1pexp(-theta) } else { log1pexp(theta) };
            }
        }
    }
    let pa: f64 = m.a().iter().map(|v| v * v).sum();
    let pr: f64 = m.r().iter().flat_map(|r| r.iter()).map(|v| v * v).sum();
    total + lambda_a * pa + lambda_r * pr
}

/// Central finite differences of `f` at `x` with step `h`.
pub fn central_differences(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Model rebuilt from a flat `A`-then-`R_k` row-major vector.
pub fn model_from_flat(v: &[f64], n: usize, k: usize, rank: usize) -> FactorModel {
    let a = DMatrix::from_row_slice(n, rank, &v[..n * rank]);
    let rs = (0..k)
        .map(|idx| {
            let off = n * rank + idx * rank * rank;
            DMatrix::from_row_slice(rank, rank, &v[off..off + rank * rank])
        })
        .collect();
    FactorModel::new(a, rs).unwrap()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, n: usize, k: usize, density: f64) -> SparseAdjacencyTensor {
    let slices = (0..k)
        .map(|_| {
            let mut s = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    if rng.random::<f64>() < density {
                        s.push((i, j));
                    }
                }
            }
            s
        })
        .collect();
    SparseAdjacencyTensor::from_slices(n, slices).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
}

pub fn random_model(rng: &mut ChaCha8Rng, n: usize, k: usize, rank: usize, scale: f64) -> FactorModel {
    let a = random_matrix(rng, n, rank, scale);
    let rs = (0..k).map(|_| random_matrix(rng, rank, rank, scale)).collect();
    FactorModel::new(a, rs).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dense 0/1 slices of `x` as row-major matrices.
pub fn dense_slices(x: &SparseAdjacencyTensor) -> Vec<Dense> {
    (0..x.n_relations())
        .map(|k| {
            let mut d = Dense::zeros(x.n_entities(), x.n_entities());
            for &(i, j) in x.slice(k) {
                d.set(i, j, 1.0);
            }
            d
        })
        .collect()
}

/// Standard normal draw by Box-Muller.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Planted logistic data: a rank-`rank` ground truth with standard-normal
/// `A` and `R_k` entries scaled by `scale`, cells drawn Bernoulli(sigmoid(theta)).
pub fn planted_tensor(seed: u64, n: usize, k: usize, rank: usize, scale: f64) -> (SparseAdjacencyTensor, Vec<Dense>) {
    let mut g = rng(seed);
    let a = Dense {
        rows: n,
        cols: rank,
        data: (0..n * rank).map(|_| normal(&mut g)).collect(),
    };
    let mut thetas = Vec::new();
    let mut slices = Vec::new();
    for _ in 0..k {
        let r = Dense {
            rows: rank,
            cols: rank,
            data: (0..rank * rank).map(|_| scale * normal(&mut g)).collect(),
        };
        let theta = a.mul(&r).mul(&a.t());
        let mut s = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let p = 1.0 / (1.0 + (-theta.at(i, j)).exp());
                if g.random::<f64>() < p {
                    s.push((i, j));
                }
            }
        }
        slices.push(s);
        thetas.push(theta);
    }
    (SparseAdjacencyTensor::from_slices(n, slices).unwrap(), thetas)
}

/// Least-squares solution of `m x = y` (one column per right-hand side) by
/// Householder QR, without forming normal equations.
pub fn householder_lstsq(m: &Dense, y: &Dense) -> Dense {
    let (rows, cols) = (m.rows, m.cols);
    assert!(rows >= cols);
    let mut a = m.clone();
    let mut b = y.clone();
    for col in 0..cols {
        let norm: f64 = (col..rows).map(|i| a.at(i, col).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if a.at(col, col) > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (col..rows).map(|i| a.at(i, col)).collect();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        if vv == 0.0 {
            continue;
        }
        let reflect = |mat: &mut Dense, c: usize| {
            let dot: f64 = (col..rows).map(|i| v[i - col] * mat.at(i, c)).sum();
            let s = 2.0 * dot / vv;
            for i in col..rows {
                mat.set(i, c, mat.at(i, c) - s * v[i - col]);
            }
        };
        for c in col..cols {
            reflect(&mut a, c);
        }
        for c in 0..b.cols {
            reflect(&mut b, c);
        }
    }
    let mut x = Dense::zeros(cols, b.cols);
    for c in 0..b.cols {
        for row in (0..cols).rev() {
            let mut acc = b.at(row, c);
            for p in row + 1..cols {
                acc -= a.at(row, p) * x.at(p, c);
            }
            x.set(row, c, acc / a.at(row, row));
        }
    }
    x
}

/// Ridge solution for `vec(R)` with the Kronecker design `Z = A (x) A`,
/// assembled densely as the stacked system `[Z; sqrt(lambda) I]` and solved
/// by Householder QR. Normal equations would square `cond(Z) = cond(A)^2`.
pub fn ridge_r_oracle(a: &Dense, x: &Dense, lambda: f64) -> Dense {
    let z = kron(a, a);
    let p = z.cols;
    let extra = if lambda > 0.0 { p } else { 0 };
    let mut stacked = Dense::zeros(z.rows + extra, p);
    let mut target = Dense::zeros(z.rows + extra, 1);
    for i in 0..z.rows {
        for j in 0..p {
            stacked.set(i, j, z.at(i, j));
        }
        target.set(i, 0, x.data[i]);
    }
    for d in 0..extra {
        stacked.set(z.rows + d, d, lambda.sqrt());
    }
    let sol = householder_lstsq(&stacked, &target);
    Dense { rows: a.cols, cols: a.cols, data: sol.data }
}

/// 2-norm condition number of a tall matrix from the eigenvalues of `m^T m`.
pub fn condition_number(m: &Dense) -> f64 {
    let (values, _) = jacobi_eigen(&m.t().mul(m));
    let max = values.iter().cloned().fold(f64::MIN, f64::max);
    let min = values.iter().cloned().fold(f64::MAX, f64::min);
    (max / min.max(0.0)).sqrt()
}
