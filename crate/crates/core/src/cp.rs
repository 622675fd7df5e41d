//! Non-negative CANDECOMP/PARAFAC decomposition by multiplicative updates.
//!
//! Each sweep applies the Lee–Seung update to the three factor matrices in
//! order `A`, `B`, `C`:
//!
//! ```text
//! A <- A * [X(1) (C ⊙ B)] / [A ((C ⊙ B)ᵀ (C ⊙ B)) + guard]
//! ```
//!
//! and the analogous rules for `B` and `C`. The Gram matrix of a Khatri-Rao
//! product is the Hadamard product of the factor Grams, so the denominators
//! never materialize the Khatri-Rao block. Iteration stops once the norm of
//! the approximation moves by at most `epsilon` between sweeps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Mode, Tensor3};

/// The three non-negative CP factor matrices of a rank-`R` model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "FactorSetJson", try_from = "FactorSetJson")]
pub struct FactorSet {
    a: Matrix,
    b: Matrix,
    c: Matrix,
}

impl FactorSet {
    /// `a` is `I x R`, `b` is `J x R`, `c` is `K x R`; every entry must be
    /// finite and non-negative.
    pub fn new(a: Matrix, b: Matrix, c: Matrix) -> Result<Self> {
        let rank = a.cols();
        if b.cols() != rank || c.cols() != rank {
            return Err(Error::DimensionMismatch(format!(
                "factor column counts differ: {}, {}, {}",
                a.cols(),
                b.cols(),
                c.cols()
            )));
        }
        for (name, m) in [("A", &a), ("B", &b), ("C", &c)] {
            if m.as_slice().iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "factor {name} must be finite and non-negative"
                )));
            }
        }
        Ok(Self { a, b, c })
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.a.rows(), self.b.rows(), self.c.rows()]
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }

    /// `x̂(i,j,k) = Σ_r A(i,r) B(j,r) C(k,r)`.
    pub fn reconstruct(&self) -> Tensor3 {
        let dims = self.dims();
        let slabs: Vec<Vec<f64>> = (0..dims[2])
            .into_par_iter()
            .map(|k| self.reconstruct_slab(k))
            .collect();
        Tensor3::from_raw(dims, slabs.concat())
    }

    fn reconstruct_slab(&self, k: usize) -> Vec<f64> {
        let [ni, nj, _] = self.dims();
        let rank = self.rank();
        let mut out = vec![0.0; ni * nj];
        for j in 0..nj {
            let col = &mut out[j * ni..(j + 1) * ni];
            for r in 0..rank {
                let w = self.b.get(j, r) * self.c.get(k, r);
                if w == 0.0 {
                    continue;
                }
                for (i, o) in col.iter_mut().enumerate() {
                    *o += self.a.get(i, r) * w;
                }
            }
        }
        out
    }

    /// Column `rank` (1-based) of the time factor `C`, in time order.
    pub fn time_factor(&self, rank: usize) -> Result<Vec<f64>> {
        if rank == 0 || rank > self.rank() {
            return Err(Error::InvalidInput(format!(
                "rank index {rank} out of range 1..={}",
                self.rank()
            )));
        }
        Ok(self.c.column(rank - 1))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&FactorSetJson::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: FactorSetJson = serde_json::from_str(s)?;
        raw.try_into()
    }
}

/// Wire form: dims, rank and the three matrices as row-major nested arrays.
#[derive(Serialize, Deserialize)]
struct FactorSetJson {
    dims: [usize; 3],
    rank: usize,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
}

impl From<&FactorSet> for FactorSetJson {
    fn from(f: &FactorSet) -> Self {
        Self {
            dims: f.dims(),
            rank: f.rank(),
            a: f.a.to_rows(),
            b: f.b.to_rows(),
            c: f.c.to_rows(),
        }
    }
}

impl From<FactorSet> for FactorSetJson {
    fn from(f: FactorSet) -> Self {
        Self::from(&f)
    }
}

impl TryFrom<FactorSetJson> for FactorSet {
    type Error = Error;

    fn try_from(raw: FactorSetJson) -> Result<Self> {
        let f = FactorSet::new(
            Matrix::from_rows(&raw.a)?,
            Matrix::from_rows(&raw.b)?,
            Matrix::from_rows(&raw.c)?,
        )?;
        if f.dims() != raw.dims || f.rank() != raw.rank {
            return Err(Error::DimensionMismatch(format!(
                "factor json declares dims {:?} rank {}, matrices give {:?} rank {}",
                raw.dims,
                raw.rank,
                f.dims(),
                f.rank()
            )));
        }
        Ok(f)
    }
}

/// Solver settings. `epsilon == 0` disables the norm-difference stop so the
/// solver always runs `max_iters` sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub rank: usize,
    pub epsilon: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub denom_guard: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rank: 5,
            epsilon: 1e-3,
            max_iters: 1000,
            seed: 0,
            denom_guard: 1e-12,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Config("solver rank must be at least 1".into()));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.denom_guard > 0.0 && self.denom_guard.is_finite()) {
            return Err(Error::Config(format!(
                "denom_guard must be positive, got {}",
                self.denom_guard
            )));
        }
        Ok(())
    }
}

/// Per-sweep record of a decomposition run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    /// Norm of the initial approximation, before the first sweep.
    pub initial_norm: f64,
    /// `‖X̂‖` after each sweep.
    pub norms: Vec<f64>,
    /// `‖X − X̂‖ / ‖X‖` after each sweep (absolute error when `‖X‖ = 0`).
    pub relative_errors: Vec<f64>,
    pub final_relative_error: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Matricized tensor times Khatri-Rao product, `X(n)` times the Khatri-Rao
/// product of the other two factors (`C ⊙ B`, `C ⊙ A` or `B ⊙ A`).
///
/// Work is split over frontal slabs and reduced in slab order, so the result
/// does not depend on the rayon pool size.
pub fn mttkrp(x: &Tensor3, a: &Matrix, b: &Matrix, c: &Matrix, mode: Mode) -> Matrix {
    let [ni, nj, nk] = x.dims();
    let rank = a.cols();
    match mode {
        Mode::One => {
            let partials: Vec<Vec<f64>> = (0..nk)
                .into_par_iter()
                .map(|k| {
                    let slab = x.frontal_slice(k);
                    // column-major I x R
                    let mut p = vec![0.0; ni * rank];
                    for j in 0..nj {
                        let xs = &slab[j * ni..(j + 1) * ni];
                        for r in 0..rank {
                            let w = b.get(j, r) * c.get(k, r);
                            if w == 0.0 {
                                continue;
                            }
                            for (o, &v) in p[r * ni..(r + 1) * ni].iter_mut().zip(xs) {
                                *o += v * w;
                            }
                        }
                    }
                    p
                })
                .collect();
            let mut out = Matrix::zeros(ni, rank);
            for p in &partials {
                for r in 0..rank {
                    for i in 0..ni {
                        out.as_mut_slice()[i * rank + r] += p[r * ni + i];
                    }
                }
            }
            out
        }
        Mode::Two => {
            let partials: Vec<Vec<f64>> = (0..nk)
                .into_par_iter()
                .map(|k| {
                    let slab = x.frontal_slice(k);
                    let mut p = vec![0.0; nj * rank];
                    for j in 0..nj {
                        let xs = &slab[j * ni..(j + 1) * ni];
                        for r in 0..rank {
                            let ck = c.get(k, r);
                            if ck == 0.0 {
                                continue;
                            }
                            let dot: f64 = xs.iter().enumerate().map(|(i, &v)| v * a.get(i, r)).sum();
                            p[j * rank + r] = dot * ck;
                        }
                    }
                    p
                })
                .collect();
            let mut out = Matrix::zeros(nj, rank);
            for p in &partials {
                for (o, v) in out.as_mut_slice().iter_mut().zip(p) {
                    *o += v;
                }
            }
            out
        }
        Mode::Three => {
            let rows: Vec<Vec<f64>> = (0..nk)
                .into_par_iter()
                .map(|k| {
                    let slab = x.frontal_slice(k);
                    let mut row = vec![0.0; rank];
                    for j in 0..nj {
                        let xs = &slab[j * ni..(j + 1) * ni];
                        for (r, o) in row.iter_mut().enumerate() {
                            let bj = b.get(j, r);
                            if bj == 0.0 {
                                continue;
                            }
                            let dot: f64 = xs.iter().enumerate().map(|(i, &v)| v * a.get(i, r)).sum();
                            *o += dot * bj;
                        }
                    }
                    row
                })
                .collect();
            Matrix::new(nk, rank, rows.concat()).expect("shape is consistent")
        }
    }
}

/// One multiplicative update of `factor` given its MTTKRP numerator and the
/// Hadamard product of the other two Gram matrices.
fn multiplicative_update(factor: &mut Matrix, numerator: &Matrix, gram: &Matrix, guard: f64) {
    let rank = factor.cols();
    let denom = factor.matmul(gram).expect("gram is R x R");
    let num = numerator.as_slice();
    let den = denom.as_slice();
    for (idx, v) in factor.as_mut_slice().iter_mut().enumerate() {
        debug_assert!(idx / rank < numerator.rows());
        *v *= num[idx] / (den[idx] + guard);
    }
}

/// `(‖X̂‖, ‖X − X̂‖)` computed entry by entry, reduced in slab order.
fn fit_norms(x: &Tensor3, f: &FactorSet) -> (f64, f64) {
    let per_slab: Vec<(f64, f64)> = (0..x.dims()[2])
        .into_par_iter()
        .map(|k| {
            let approx = f.reconstruct_slab(k);
            let mut sq_hat = 0.0;
            let mut sq_res = 0.0;
            for (&v, &h) in x.frontal_slice(k).iter().zip(&approx) {
                sq_hat += h * h;
                sq_res += (v - h) * (v - h);
            }
            (sq_hat, sq_res)
        })
        .collect();
    let (hat, res) = per_slab
        .iter()
        .fold((0.0, 0.0), |(h, r), (dh, dr)| (h + dh, r + dr));
    (hat.sqrt(), res.sqrt())
}

fn relative(err: f64, norm_x: f64) -> f64 {
    if norm_x > 0.0 {
        err / norm_x
    } else {
        err
    }
}

/// Seeded uniform(0, 1) starting factors, filled `A`, then `B`, then `C`.
pub fn initial_factors(dims: [usize; 3], rank: usize, seed: u64) -> FactorSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |rows: usize| {
        let data = (0..rows * rank).map(|_| rng.gen::<f64>()).collect();
        Matrix::new(rows, rank, data).expect("positive dims")
    };
    let a = draw(dims[0]);
    let b = draw(dims[1]);
    let c = draw(dims[2]);
    FactorSet { a, b, c }
}

/// Fits a non-negative rank-`cfg.rank` CP model to `x`.
///
/// Not converging within `max_iters` is not an error; check
/// [`FitTrace::converged`].
pub fn nncp_decompose(x: &Tensor3, cfg: &SolverConfig) -> Result<(FactorSet, FitTrace)> {
    cfg.validate()?;
    let dims = x.dims();
    let mut f = initial_factors(dims, cfg.rank, cfg.seed);
    let norm_x = x.frobenius_norm();
    let (initial_norm, _) = fit_norms(x, &f);

    let mut trace = FitTrace {
        initial_norm,
        norms: Vec::new(),
        relative_errors: Vec::new(),
        final_relative_error: f64::NAN,
        iterations: 0,
        converged: false,
    };
    let mut prev_norm = initial_norm;

    for _ in 0..cfg.max_iters {
        let gram = f.c.gram().hadamard(&f.b.gram())?;
        let num = mttkrp(x, &f.a, &f.b, &f.c, Mode::One);
        multiplicative_update(&mut f.a, &num, &gram, cfg.denom_guard);

        let gram = f.c.gram().hadamard(&f.a.gram())?;
        let num = mttkrp(x, &f.a, &f.b, &f.c, Mode::Two);
        multiplicative_update(&mut f.b, &num, &gram, cfg.denom_guard);

        let gram = f.b.gram().hadamard(&f.a.gram())?;
        let num = mttkrp(x, &f.a, &f.b, &f.c, Mode::Three);
        multiplicative_update(&mut f.c, &num, &gram, cfg.denom_guard);

        let (norm_hat, err) = fit_norms(x, &f);
        if !norm_hat.is_finite() || !err.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite fit after sweep {}",
                trace.iterations + 1
            )));
        }
        trace.iterations += 1;
        trace.norms.push(norm_hat);
        trace.relative_errors.push(relative(err, norm_x));

        if cfg.epsilon > 0.0 && (norm_hat - prev_norm).abs() <= cfg.epsilon {
            trace.converged = true;
            break;
        }
        prev_norm = norm_hat;
    }
    trace.final_relative_error = *trace.relative_errors.last().expect("max_iters >= 1");
    Ok((f, trace))
}
