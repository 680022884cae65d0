//! Soft-margin kernel SVM trained by sequential minimal optimization.
//!
//! The solver works on the dual
//!
//! ```text
//! max  Σ α_i − ½ Σ_ij α_i α_j y_i y_j K(x_i, x_j)
//! s.t. 0 ≤ α_i ≤ C,  Σ α_i y_i = 0
//! ```
//!
//! and updates two multipliers per step. The working pair is the maximal
//! violating `i` together with the `j` that gives the largest second-order
//! decrease of the objective (Fan, Chen & Lin, 2005). Selection is fully
//! deterministic: ties go to the lowest index and no random numbers are used.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Multipliers at or below this are dropped from the model.
pub const ALPHA_EPS: f64 = 1e-12;
pub const DEFAULT_TOL: f64 = 1e-3;
pub const DEFAULT_MAX_PASSES: usize = 200;

const TAU: f64 = 1e-12;
/// Above this many samples the Gram matrix is not precomputed.
const GRAM_CACHE_LIMIT: usize = 2048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SvmError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training data contains a single class")]
    SingleClass,
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("{features} feature vectors but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("labels must be +1 or -1, got {0}")]
    InvalidLabel(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("no convergence after {iterations} iterations (KKT gap {gap:.3e})")]
    NonConvergence {
        iterations: usize,
        gap: f64,
        best: Box<SvmModel>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Rbf,
}

impl KernelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelKind::Linear => "linear",
            KernelKind::Rbf => "rbf",
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = SvmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(KernelKind::Linear),
            "rbf" => Ok(KernelKind::Rbf),
            other => Err(SvmError::InvalidParameter(format!("unknown kernel {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelRepr", into = "KernelRepr")]
pub enum KernelSpec {
    Linear,
    Rbf { gamma: f64 },
}

#[derive(Serialize, Deserialize)]
struct KernelRepr {
    kind: KernelKind,
    gamma: Option<f64>,
}

impl From<KernelSpec> for KernelRepr {
    fn from(k: KernelSpec) -> Self {
        match k {
            KernelSpec::Linear => KernelRepr {
                kind: KernelKind::Linear,
                gamma: None,
            },
            KernelSpec::Rbf { gamma } => KernelRepr {
                kind: KernelKind::Rbf,
                gamma: Some(gamma),
            },
        }
    }
}

impl TryFrom<KernelRepr> for KernelSpec {
    type Error = SvmError;

    fn try_from(r: KernelRepr) -> Result<Self, Self::Error> {
        match r.kind {
            KernelKind::Linear => Ok(KernelSpec::Linear),
            KernelKind::Rbf => KernelSpec::rbf(r.gamma.ok_or_else(|| {
                SvmError::InvalidParameter("rbf kernel requires gamma".into())
            })?),
        }
    }
}

impl KernelSpec {
    pub fn rbf(gamma: f64) -> Result<Self, SvmError> {
        if gamma.is_finite() && gamma > 0.0 {
            Ok(KernelSpec::Rbf { gamma })
        } else {
            Err(SvmError::InvalidParameter(format!("gamma must be positive, got {gamma}")))
        }
    }

    pub fn kind(&self) -> KernelKind {
        match self {
            KernelSpec::Linear => KernelKind::Linear,
            KernelSpec::Rbf { .. } => KernelKind::Rbf,
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match *self {
            KernelSpec::Linear => None,
            KernelSpec::Rbf { gamma } => Some(gamma),
        }
    }

    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
            KernelSpec::Rbf { gamma } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64, SvmError> {
    if x.len() != y.len() {
        return Err(SvmError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(spec.eval_unchecked(x, y))
}

/// A trained binary SVM: `f(x) = Σ coef_j K(sv_j, x) + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    kernel: KernelSpec,
    support_vectors: Vec<Vec<f64>>,
    coefs: Vec<f64>,
    bias: f64,
    c: f64,
    dim: usize,
}

impl SvmModel {
    /// Assembles a model, checking every structural invariant.
    pub fn new(
        kernel: KernelSpec,
        support_vectors: Vec<Vec<f64>>,
        coefs: Vec<f64>,
        bias: f64,
        c: f64,
    ) -> Result<Self, SvmError> {
        if !(c.is_finite() && c > 0.0) {
            return Err(SvmError::InvalidModel(format!("C must be positive, got {c}")));
        }
        if support_vectors.is_empty() || support_vectors.len() != coefs.len() {
            return Err(SvmError::InvalidModel(format!(
                "{} support vectors with {} coefficients",
                support_vectors.len(),
                coefs.len()
            )));
        }
        let dim = support_vectors[0].len();
        if let Some(bad) = support_vectors.iter().find(|v| v.len() != dim) {
            return Err(SvmError::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        if support_vectors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SvmError::InvalidModel("non-finite support vector entry".into()));
        }
        if let Some(bad) = coefs.iter().find(|a| !(a.abs() > 0.0 && a.abs() <= c)) {
            return Err(SvmError::InvalidModel(format!(
                "coefficient {bad} violates 0 < |coef| <= C = {c}"
            )));
        }
        if !bias.is_finite() {
            return Err(SvmError::InvalidModel("non-finite bias".into()));
        }
        Ok(Self {
            kernel,
            support_vectors,
            coefs,
            bias,
            c,
            dim,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn support_vectors(&self) -> &[Vec<f64>] {
        &self.support_vectors
    }

    /// Signed multipliers `α_j y_j`.
    pub fn coefs(&self) -> &[f64] {
        &self.coefs
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn with_bias(mut self, bias: f64) -> Self {
        self.bias = bias;
        self
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64, SvmError> {
        if x.len() != self.dim {
            return Err(SvmError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let s: f64 = self
            .support_vectors
            .iter()
            .zip(&self.coefs)
            .map(|(sv, a)| a * self.kernel.eval_unchecked(sv, x))
            .sum();
        Ok(s + self.bias)
    }
}

pub fn decision(model: &SvmModel, x: &[f64]) -> Result<f64, SvmError> {
    model.decision(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoParams {
    pub c: f64,
    pub kernel: KernelSpec,
    /// Stopping threshold on the maximal KKT violating-pair gap.
    pub tol: f64,
    /// One pass is `n` pair updates; the solver gives up after
    /// `max_passes * n` updates.
    pub max_passes: usize,
}

impl SmoParams {
    pub fn new(c: f64, kernel: KernelSpec) -> Self {
        Self {
            c,
            kernel,
            tol: DEFAULT_TOL,
            max_passes: DEFAULT_MAX_PASSES,
        }
    }
}

fn validate_training_set(features: &[Vec<f64>], labels: &[f64]) -> Result<usize, SvmError> {
    if features.len() != labels.len() {
        return Err(SvmError::LengthMismatch {
            features: features.len(),
            labels: labels.len(),
        });
    }
    if features.len() < 2 {
        return Err(SvmError::TooFewSamples(features.len()));
    }
    let dim = features[0].len();
    if let Some(bad) = features.iter().find(|v| v.len() != dim) {
        return Err(SvmError::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
        return Err(SvmError::InvalidLabel(bad));
    }
    if labels.iter().all(|&y| y == 1.0) || labels.iter().all(|&y| y == -1.0) {
        return Err(SvmError::SingleClass);
    }
    Ok(dim)
}

/// Kernel rows, either precomputed or evaluated on demand.
struct KernelRows<'a> {
    features: &'a [Vec<f64>],
    kernel: KernelSpec,
    gram: Option<Vec<f64>>,
    diag: Vec<f64>,
}

impl<'a> KernelRows<'a> {
    fn new(features: &'a [Vec<f64>], kernel: KernelSpec) -> Self {
        let n = features.len();
        let diag = features.iter().map(|x| kernel.eval_unchecked(x, x)).collect();
        let gram = (n <= GRAM_CACHE_LIMIT).then(|| {
            let mut g = vec![0.0; n * n];
            for i in 0..n {
                for j in i..n {
                    let k = kernel.eval_unchecked(&features[i], &features[j]);
                    g[i * n + j] = k;
                    g[j * n + i] = k;
                }
            }
            g
        });
        Self {
            features,
            kernel,
            gram,
            diag,
        }
    }

    fn row(&self, i: usize, buf: &mut Vec<f64>) {
        let n = self.features.len();
        buf.clear();
        match &self.gram {
            Some(g) => buf.extend_from_slice(&g[i * n..(i + 1) * n]),
            None => buf.extend(
                self.features
                    .iter()
                    .map(|x| self.kernel.eval_unchecked(&self.features[i], x)),
            ),
        }
    }
}

struct Solver<'a> {
    y: &'a [f64],
    c: f64,
    alpha: Vec<f64>,
    /// Gradient of the minimized dual objective: `(Qα)_t − 1`.
    grad: Vec<f64>,
}

impl Solver<'_> {
    fn in_up(&self, t: usize) -> bool {
        if self.y[t] > 0.0 {
            self.alpha[t] < self.c
        } else {
            self.alpha[t] > 0.0
        }
    }

    fn in_low(&self, t: usize) -> bool {
        if self.y[t] > 0.0 {
            self.alpha[t] > 0.0
        } else {
            self.alpha[t] < self.c
        }
    }

    /// Maximal violator in I_up and the current gap `m(α) − M(α)`.
    fn select_i(&self) -> (Option<usize>, f64, f64) {
        let mut gmax = f64::NEG_INFINITY;
        let mut gmin = f64::INFINITY;
        let mut best = None;
        for t in 0..self.y.len() {
            let v = -self.y[t] * self.grad[t];
            if self.in_up(t) && v > gmax {
                gmax = v;
                best = Some(t);
            }
            if self.in_low(t) && v < gmin {
                gmin = v;
            }
        }
        (best, gmax, gmin)
    }

    fn select_j(&self, i: usize, gmax: f64, k_i: &[f64], diag: &[f64]) -> Option<usize> {
        let mut best = None;
        let mut best_obj = f64::INFINITY;
        for t in 0..self.y.len() {
            if !self.in_low(t) {
                continue;
            }
            let b = gmax + self.y[t] * self.grad[t];
            if b <= 0.0 {
                continue;
            }
            let mut a = diag[i] + diag[t] - 2.0 * k_i[t];
            if a <= 0.0 {
                a = TAU;
            }
            let obj = -(b * b) / a;
            if obj < best_obj {
                best_obj = obj;
                best = Some(t);
            }
        }
        best
    }

    /// Analytic two-variable update; returns the multiplier changes.
    fn update_pair(&mut self, i: usize, j: usize, k_i: &[f64], diag: &[f64]) -> (f64, f64) {
        let (yi, yj, c) = (self.y[i], self.y[j], self.c);
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let (gi, gj) = (self.grad[i], self.grad[j]);
        let mut quad = diag[i] + diag[j] - 2.0 * k_i[j];
        if quad <= 0.0 {
            quad = TAU;
        }
        let (mut ai, mut aj);
        if yi != yj {
            let delta = (-gi - gj) / quad;
            let diff = old_i - old_j;
            ai = old_i + delta;
            aj = old_j + delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let delta = (gi - gj) / quad;
            let sum = old_i + old_j;
            ai = old_i - delta;
            aj = old_j + delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        self.alpha[i] = ai;
        self.alpha[j] = aj;
        (ai - old_i, aj - old_j)
    }

    /// Bias `b` of `f(x) = Σ α_j y_j K(x_j, x) + b`.
    fn bias(&self) -> f64 {
        let mut free_sum = 0.0;
        let mut free_n = 0usize;
        let mut ub = f64::INFINITY;
        let mut lb = f64::NEG_INFINITY;
        for t in 0..self.y.len() {
            let yg = self.y[t] * self.grad[t];
            let a = self.alpha[t];
            if a >= self.c {
                if self.y[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if a <= 0.0 {
                if self.y[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free_n += 1;
                free_sum += yg;
            }
        }
        let rho = if free_n > 0 {
            free_sum / free_n as f64
        } else {
            (ub + lb) / 2.0
        };
        -rho
    }

    fn model(&self, features: &[Vec<f64>], kernel: KernelSpec) -> SvmModel {
        let mut svs = Vec::new();
        let mut coefs = Vec::new();
        for (t, &a) in self.alpha.iter().enumerate() {
            if a > ALPHA_EPS {
                svs.push(features[t].clone());
                coefs.push(a * self.y[t]);
            }
        }
        SvmModel {
            kernel,
            dim: features[0].len(),
            support_vectors: svs,
            coefs,
            bias: self.bias(),
            c: self.c,
        }
    }
}

/// Trains a binary SVM. Labels must be ±1 with both classes present.
pub fn smo_train(
    features: &[Vec<f64>],
    labels: &[f64],
    params: &SmoParams,
) -> Result<SvmModel, SvmError> {
    validate_training_set(features, labels)?;
    let c = params.c;
    if !(c.is_finite() && c > 0.0) {
        return Err(SvmError::InvalidParameter(format!("C must be positive, got {c}")));
    }
    if params.tol.is_nan() || params.tol <= 0.0 {
        return Err(SvmError::InvalidParameter(format!("tol must be positive, got {}", params.tol)));
    }
    if let KernelSpec::Rbf { gamma } = params.kernel {
        KernelSpec::rbf(gamma)?;
    }

    let n = features.len();
    let rows = KernelRows::new(features, params.kernel);
    let mut solver = Solver {
        y: labels,
        c,
        alpha: vec![0.0; n],
        grad: vec![-1.0; n],
    };
    let max_iter = params.max_passes.saturating_mul(n);
    let mut k_i = Vec::with_capacity(n);
    let mut k_j = Vec::with_capacity(n);

    let mut iter = 0usize;
    loop {
        let (i, gmax, gmin) = solver.select_i();
        let gap = gmax - gmin;
        let Some(i) = i.filter(|_| gap >= params.tol) else {
            break;
        };
        if iter >= max_iter {
            return Err(SvmError::NonConvergence {
                iterations: iter,
                gap,
                best: Box::new(solver.model(features, params.kernel)),
            });
        }
        rows.row(i, &mut k_i);
        let Some(j) = solver.select_j(i, gmax, &k_i, &rows.diag) else {
            break;
        };
        rows.row(j, &mut k_j);
        let (di, dj) = solver.update_pair(i, j, &k_i, &rows.diag);
        let (yi, yj) = (labels[i], labels[j]);
        for t in 0..n {
            solver.grad[t] += labels[t] * (yi * k_i[t] * di + yj * k_j[t] * dj);
        }
        iter += 1;
    }

    Ok(solver.model(features, params.kernel))
}

/// Recovers each training point's multiplier from the model's support
/// vectors, which are stored in training order.
fn training_alphas(model: &SvmModel, features: &[Vec<f64>], labels: &[f64]) -> Vec<f64> {
    let mut alphas = vec![0.0; features.len()];
    let mut next = 0;
    for (t, (x, &y)) in features.iter().zip(labels).enumerate() {
        if next < model.coefs.len()
            && model.support_vectors[next] == *x
            && model.coefs[next].signum() == y.signum()
        {
            alphas[t] = model.coefs[next].abs();
            next += 1;
        }
    }
    alphas
}

/// Largest KKT violation over the training set, measured on the margin
/// `y f(x)`: points with α = 0 need `y f ≥ 1`, points with α = C need
/// `y f ≤ 1`, and free points need `y f = 1`.
///
/// `tol` is the tolerance used to classify a multiplier as sitting at a
/// bound, relative to `c`.
pub fn kkt_max_violation(
    model: &SvmModel,
    features: &[Vec<f64>],
    labels: &[f64],
    c: f64,
    tol: f64,
) -> Result<f64, SvmError> {
    if features.len() != labels.len() {
        return Err(SvmError::LengthMismatch {
            features: features.len(),
            labels: labels.len(),
        });
    }
    let alphas = training_alphas(model, features, labels);
    let bound_eps = (tol * c).min(1e-6 * c).max(ALPHA_EPS);
    let mut worst = 0.0f64;
    for ((x, &y), &a) in features.iter().zip(labels).zip(&alphas) {
        let margin = y * model.decision(x)?;
        let v = if a <= bound_eps {
            (1.0 - margin).max(0.0)
        } else if a >= c - bound_eps {
            (margin - 1.0).max(0.0)
        } else {
            (margin - 1.0).abs()
        };
        worst = worst.max(v);
    }
    Ok(worst)
}
