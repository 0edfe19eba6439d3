//! Short-iterative Lanczos time stepping, Lanczos ground states and a dense
//! matrix-exponential reference.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{inner, norm_sqr, HilbertSpace, StateVector, C64};
use crate::model::Operator;

/// Largest dimension accepted by [`dense_expm_reference`].
pub const DENSE_MAX: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KrylovConfig {
    pub dt: f64,
    /// Maximum Krylov dimension per step.
    pub krylov_dim: usize,
    /// Bound on the a-posteriori error estimate of one step.
    pub tol: f64,
    /// Freeze H at t + dt/2 instead of t.
    pub midpoint: bool,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        KrylovConfig {
            dt: 0.02,
            krylov_dim: 12,
            tol: 1e-10,
            midpoint: true,
        }
    }
}

impl KrylovConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: format!("must be positive, got {}", self.dt),
            });
        }
        if !(2..=40).contains(&self.krylov_dim) {
            return Err(Error::InvalidParameter {
                name: "krylov_dim",
                reason: format!("must lie in [2, 40], got {}", self.krylov_dim),
            });
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter {
                name: "tol",
                reason: format!("must be positive, got {}", self.tol),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    /// Krylov vectors actually used.
    pub dim_used: usize,
    pub error_estimate: f64,
    /// The Krylov space became invariant; the step is exact.
    pub breakdown: bool,
}

/// Reusable workspace for Krylov steps on one dimension.
#[derive(Clone, Debug)]
pub struct KrylovPropagator {
    cfg: KrylovConfig,
    basis: Vec<Vec<C64>>,
    w: Vec<C64>,
}

impl KrylovPropagator {
    pub fn new(cfg: KrylovConfig, dim: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(KrylovPropagator {
            cfg,
            basis: Vec::with_capacity(cfg.krylov_dim),
            w: vec![C64::default(); dim],
        })
    }

    pub fn config(&self) -> &KrylovConfig {
        &self.cfg
    }

    /// Replaces `psi` by exp(−i H dt)|psi⟩. `dt` may be negative.
    pub fn step<A: Operator + ?Sized>(&mut self, op: &A, psi: &mut [C64], dt: f64) -> Result<StepInfo> {
        let n = psi.len();
        if op.dim() != n || self.w.len() != n {
            return Err(Error::ShapeMismatch {
                expected: op.dim(),
                actual: n,
            });
        }
        let beta0 = norm_sqr(psi).sqrt();
        if beta0 == 0.0 {
            return Ok(StepInfo {
                dim_used: 0,
                error_estimate: 0.0,
                breakdown: true,
            });
        }
        let m = self.cfg.krylov_dim.min(n);
        while self.basis.len() < m {
            self.basis.push(vec![C64::default(); n]);
        }
        let inv = 1.0 / beta0;
        self.basis[0].iter_mut().zip(psi.iter()).for_each(|(v, p)| *v = p * inv);

        let mut alpha = Vec::with_capacity(m);
        let mut beta: Vec<f64> = Vec::with_capacity(m);
        let mut scale = 0.0f64;
        let mut info = StepInfo {
            dim_used: 0,
            error_estimate: f64::INFINITY,
            breakdown: false,
        };
        let mut coeffs = Vec::new();

        for k in 0..m {
            op.apply(&self.basis[k], &mut self.w);
            let a = inner(&self.basis[k], &self.w).re;
            {
                let (w, v) = (&mut self.w, &self.basis[k]);
                w.iter_mut().zip(v).for_each(|(w, v)| *w -= a * v);
            }
            if k > 0 {
                let b = beta[k - 1];
                let (w, v) = (&mut self.w, &self.basis[k - 1]);
                w.iter_mut().zip(v).for_each(|(w, v)| *w -= b * v);
            }
            // full reorthogonalization
            for i in 0..=k {
                let h = inner(&self.basis[i], &self.w);
                let v = &self.basis[i];
                self.w.iter_mut().zip(v).for_each(|(w, v)| *w -= h * v);
            }
            let b = norm_sqr(&self.w).sqrt();
            alpha.push(a);
            scale = scale.max(a.abs() + b + beta.last().copied().unwrap_or(0.0));

            coeffs = tridiagonal_expm_e1(&alpha, &beta, dt);
            let last = coeffs.last().map_or(0.0, |c| c.norm());
            let estimate = b * last;
            let breakdown = b <= 1e-14 * scale.max(1.0);
            info = StepInfo {
                dim_used: k + 1,
                error_estimate: if breakdown { 0.0 } else { estimate },
                breakdown,
            };
            if breakdown || estimate < self.cfg.tol {
                break;
            }
            if k + 1 == m {
                return Err(Error::KrylovNotConverged {
                    estimate,
                    tol: self.cfg.tol,
                    dim: m,
                });
            }
            beta.push(b);
            let inv = 1.0 / b;
            let (w, v) = (&self.w, &mut self.basis[k + 1]);
            v.iter_mut().zip(w).for_each(|(v, w)| *v = w * inv);
        }

        psi.iter_mut().for_each(|p| *p = C64::default());
        for (c, v) in coeffs.iter().zip(&self.basis) {
            let c = c * beta0;
            psi.iter_mut().zip(v).for_each(|(p, v)| *p += c * v);
        }
        Ok(info)
    }
}

/// exp(−i T dt) e₁ for the symmetric tridiagonal T(alpha, beta).
fn tridiagonal_expm_e1(alpha: &[f64], beta: &[f64], dt: f64) -> Vec<C64> {
    let k = alpha.len();
    let t = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    let q = &eig.eigenvectors;
    let phases: Vec<C64> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(j, &d)| C64::from_polar(q[(0, j)], -d * dt))
        .collect();
    (0..k).map(|i| (0..k).map(|j| phases[j] * q[(i, j)]).sum()).collect()
}

/// Single Krylov step on an owned state.
pub fn krylov_step<A: Operator + ?Sized>(op: &A, state: &[C64], cfg: &KrylovConfig) -> Result<Vec<C64>> {
    let mut prop = KrylovPropagator::new(*cfg, state.len())?;
    let mut psi = state.to_vec();
    prop.step(op, &mut psi, cfg.dt)?;
    Ok(psi)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundStateConfig {
    /// Target for ‖Hψ − Eψ‖.
    pub tol: f64,
    /// Lanczos vectors kept before an explicit restart.
    pub basis_size: usize,
    pub max_restarts: usize,
}

impl Default for GroundStateConfig {
    fn default() -> Self {
        GroundStateConfig {
            tol: 1e-9,
            basis_size: 160,
            max_restarts: 60,
        }
    }
}

/// Starting vector for Lanczos.
#[derive(Clone, Debug)]
pub enum SeedPolicy {
    Random(u64),
    Vector(Vec<C64>),
}

#[derive(Clone, Debug)]
pub struct GroundStateResult {
    pub energy: f64,
    pub state: StateVector,
    pub residual: f64,
    pub iterations: usize,
}

/// Lowest eigenpair of a time-independent Hermitian operator.
pub fn ground_state<A: Operator + ?Sized>(
    op: &A,
    space: &HilbertSpace,
    seed: SeedPolicy,
    cfg: &GroundStateConfig,
) -> Result<GroundStateResult> {
    let n = space.dim();
    if op.dim() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            actual: op.dim(),
        });
    }
    let mut v = match seed {
        SeedPolicy::Random(s) => {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            (0..n)
                .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect::<Vec<_>>()
        }
        SeedPolicy::Vector(v) => {
            if v.len() != n {
                return Err(Error::ShapeMismatch {
                    expected: n,
                    actual: v.len(),
                });
            }
            v
        }
    };
    normalize(&mut v);

    let kmax = cfg.basis_size.max(2).min(n);
    let mut basis: Vec<Vec<C64>> = Vec::with_capacity(kmax);
    let mut w = vec![C64::default(); n];
    let mut iterations = 0;
    let mut best = f64::INFINITY;

    for _ in 0..=cfg.max_restarts {
        basis.clear();
        basis.push(v.clone());
        let mut alpha = Vec::new();
        let mut beta = Vec::new();
        for k in 0..kmax {
            op.apply(&basis[k], &mut w);
            iterations += 1;
            let a = inner(&basis[k], &w).re;
            alpha.push(a);
            for vi in &basis {
                let h = inner(vi, &w);
                w.iter_mut().zip(vi).for_each(|(w, v)| *w -= h * v);
            }
            // second pass keeps the basis orthonormal to working precision
            for vi in &basis {
                let h = inner(vi, &w);
                w.iter_mut().zip(vi).for_each(|(w, v)| *w -= h * v);
            }
            let b = norm_sqr(&w).sqrt();
            let scale = alpha.iter().fold(1.0f64, |s, a| s.max(a.abs()));
            if b <= 1e-13 * scale || k + 1 == kmax {
                break;
            }
            // cheap convergence check on the lowest Ritz pair
            if k % 10 == 9 {
                let (_, y) = lowest_ritz(&alpha, &beta);
                if b * y[k].abs() < 0.1 * cfg.tol {
                    break;
                }
            }
            beta.push(b);
            let inv = 1.0 / b;
            basis.push(w.iter().map(|x| x * inv).collect());
        }
        let (_, y) = lowest_ritz(&alpha, &beta[..alpha.len() - 1]);
        let mut x = vec![C64::default(); n];
        for (yi, vi) in y.iter().zip(&basis) {
            x.iter_mut().zip(vi).for_each(|(x, v)| *x += *yi * v);
        }
        normalize(&mut x);
        op.apply(&x, &mut w);
        let energy = inner(&x, &w).re;
        let residual = w
            .iter()
            .zip(&x)
            .map(|(hw, x)| (hw - energy * x).norm_sqr())
            .sum::<f64>()
            .sqrt();
        best = best.min(residual);
        if residual < cfg.tol {
            return Ok(GroundStateResult {
                energy,
                state: StateVector {
                    shape: *space.shape(),
                    amplitudes: x,
                },
                residual,
                iterations,
            });
        }
        v = x;
    }
    Err(Error::LanczosNotConverged {
        iterations,
        residual: best,
    })
}

fn lowest_ritz(alpha: &[f64], beta: &[f64]) -> (f64, Vec<f64>) {
    let k = alpha.len();
    let t = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    let (imin, &theta) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty tridiagonal");
    (theta, eig.eigenvectors.column(imin).iter().copied().collect())
}

fn normalize(v: &mut [C64]) {
    let n = norm_sqr(v).sqrt();
    if n > 0.0 {
        let inv = 1.0 / n;
        v.iter_mut().for_each(|x| *x *= inv);
    }
}

/// Real symmetric form [[Re H, −Im H], [Im H, Re H]] of a Hermitian H, acting
/// on (Re ψ, Im ψ). Each eigenvalue of H appears twice.
pub fn real_embedding(h: &DMatrix<C64>) -> DMatrix<f64> {
    let n = h.nrows();
    DMatrix::from_fn(2 * n, 2 * n, |i, j| {
        let z = h[(i % n, j % n)];
        match (i < n, j < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

/// exp(−i H dt)|state⟩ by full eigendecomposition of a dense Hermitian H,
/// done on the real embedding. Eigenspaces of the embedding are invariant
/// under multiplication by i, so on each one exp(−iλdt) = cos(λdt) − sin(λdt)·i.
pub fn dense_expm_reference(h: &DMatrix<C64>, state: &[C64], dt: f64) -> Result<Vec<C64>> {
    let n = h.nrows();
    if n > DENSE_MAX {
        return Err(Error::OversizedDense { n, max: DENSE_MAX });
    }
    if h.ncols() != n || state.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            actual: state.len(),
        });
    }
    let eig = SymmetricEigen::new(real_embedding(h));
    let q = &eig.eigenvectors;
    let v = DVector::from_iterator(2 * n, state.iter().map(|z| z.re).chain(state.iter().map(|z| z.im)));
    let jv = DVector::from_iterator(2 * n, state.iter().map(|z| -z.im).chain(state.iter().map(|z| z.re)));
    let (a, b) = (q.tr_mul(&v), q.tr_mul(&jv));
    let c = DVector::from_iterator(
        2 * n,
        eig.eigenvalues
            .iter()
            .enumerate()
            .map(|(k, &e)| (e * dt).cos() * a[k] - (e * dt).sin() * b[k]),
    );
    let out = q * c;
    Ok((0..n).map(|i| C64::new(out[i], out[i + n])).collect())
}

/// Dense matrix of an operator, column by column.
pub fn dense_matrix<A: Operator + ?Sized>(op: &A) -> Result<DMatrix<C64>> {
    let n = op.dim();
    if n > DENSE_MAX {
        return Err(Error::OversizedDense { n, max: DENSE_MAX });
    }
    let mut m = DMatrix::zeros(n, n);
    let mut e = vec![C64::default(); n];
    let mut col = vec![C64::default(); n];
    for k in 0..n {
        e[k] = C64::new(1.0, 0.0);
        op.apply(&e, &mut col);
        e[k] = C64::default();
        m.set_column(k, &DVector::from_column_slice(&col));
    }
    Ok(m)
}

/// Random Hermitian matrix with entries of unit scale divided by √n, so its
/// spectrum stays O(1) for any n.
pub fn random_hermitian<R: Rng>(n: usize, rng: &mut R) -> DMatrix<C64> {
    let s = 1.0 / (n as f64).sqrt();
    let a = DMatrix::from_fn(n, n, |_, _| {
        C64::new(rng.gen_range(-1.0..1.0) * s, rng.gen_range(-1.0..1.0) * s)
    });
    (&a + a.adjoint()) * C64::new(0.5, 0.0)
}

pub fn random_state<R: Rng>(n: usize, rng: &mut R) -> Vec<C64> {
    let mut v: Vec<C64> = (0..n)
        .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    normalize(&mut v);
    v
}

/// Maximum deviation between Krylov and dense propagation on one random instance.
pub fn oracle_deviation(n: usize, dt: f64, cfg: &KrylovConfig, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = random_hermitian(n, &mut rng);
    let psi = random_state(n, &mut rng);
    let reference = dense_expm_reference(&h, &psi, dt)?;
    let mut prop = KrylovPropagator::new(*cfg, n)?;
    let mut k = psi;
    prop.step(&h, &mut k, dt)?;
    Ok(k.iter()
        .zip(&reference)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt())
}
