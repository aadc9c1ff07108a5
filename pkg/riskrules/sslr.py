"""
Stabilized Sparse Logistic Regression (SSLR).

Objective (labels in {0,1}, f(x) = w0 + w.x):

    L = L0 + lam * sum_i ( alpha*|w_i| + (1-alpha)/2 * (w_i - sum_j S_ij w_j)^2 )
    L0 = -sum_d log P(y_d | x_d)

alpha = 1 is the plain lasso.  The intercept is left out of the penalty
unless penalize_intercept is set; then it gets the same penalty with an
all-zero similarity row (l1 + ridge toward 0).

Solver: proximal gradient.
  1. Step t = 1 / L where L bounds the smooth part's curvature
     (power iteration on [1 X]'[1 X]/4 and on (I-S)'(I-S)).
  2. Gradient step on the smooth part, soft-threshold by t*lam*alpha.
  3. Halve t until the quadratic upper bound holds (so the objective
     never goes up), keep the smaller t for later iterations.
  4. Stop when the relative objective decrease is below tolerance and the
     gradient-mapping residual is below tolerance * (1 + |grad|_inf).
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit
from sklearn.exceptions import ConvergenceWarning

from riskrules.dataset import Dataset
from riskrules.errors import ConfigError, DataError, FitError
from riskrules.similarity import SimilarityMatrix

# expit saturates to exactly 0/1 in float64; predictions are kept inside.
# The low end only underflows near -745, so it is floored at the smallest normal.
PROB_EPS = np.finfo(float).eps
PROB_FLOOR = np.finfo(float).tiny

POWER_ITERATIONS = 100
MAX_HALVINGS = 60


@dataclass(frozen=True)
class SslrConfig:
    lam: float = 5.0
    alpha: float = 0.5
    max_iterations: int = 10000
    tolerance: float = 1e-8
    penalize_intercept: bool = False
    standardize: bool = False

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must be in [0,1]")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise ConfigError("max_iterations must be a positive integer")
        if not self.tolerance > 0:
            raise ConfigError("tolerance must be > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


@dataclass(frozen=True)
class ModelWeights:
    intercept: float
    coefficients: np.ndarray
    feature_names: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        coef = np.array(self.coefficients, dtype=float).reshape(-1)
        if not np.isfinite(self.intercept) or not np.all(np.isfinite(coef)):
            raise FitError("model weights must be finite")
        if self.feature_names and len(self.feature_names) != coef.size:
            raise DataError(
                f"{coef.size} coefficients but {len(self.feature_names)} feature names")
        coef.setflags(write=False)
        object.__setattr__(self, "intercept", float(self.intercept))
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def p(self) -> int:
        return self.coefficients.size

    @classmethod
    def zeros(cls, p: int, feature_names: Sequence[str] = ()) -> "ModelWeights":
        return cls(0.0, np.zeros(p), tuple(feature_names))

    def to_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "coefficients": self.coefficients.tolist(),
            "feature_names": list(self.feature_names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelWeights":
        try:
            return cls(float(d["intercept"]), np.asarray(d["coefficients"], dtype=float),
                       tuple(d.get("feature_names", ())))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed model weights: {exc}") from exc


# =====================================================================
# 1.  Prediction
# =====================================================================

def _as_rows(m: ModelWeights, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (m.p,):
        raise DataError(f"dimension mismatch: model has {m.p} features, x has shape {x.shape}")
    return x


def linear_score(m: ModelWeights, x):
    """w0 + w.x for one row (float) or a matrix of rows (array)."""
    x = _as_rows(m, x)
    f = x @ m.coefficients + m.intercept
    return float(f) if np.ndim(f) == 0 else f


def stable_sigmoid(f):
    return np.clip(expit(f), PROB_FLOOR, 1.0 - PROB_EPS)


def predict_proba(m: ModelWeights, x):
    p = stable_sigmoid(linear_score(m, x))
    return float(p) if np.ndim(p) == 0 else p


# =====================================================================
# 2.  Objective and gradient
# =====================================================================

def _check_problem(m: ModelWeights, ds: Dataset, S: SimilarityMatrix) -> None:
    if m.p != ds.p or S.p != ds.p:
        raise DataError(
            f"dimension mismatch: model {m.p}, data {ds.p}, similarity {S.p}")


def _neg_log_likelihood(f: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum(np.logaddexp(0.0, f) - y * f))


def _roughness(w: np.ndarray, S: np.ndarray) -> np.ndarray:
    """w_i - sum_j S_ij w_j"""
    return w - S @ w


def objective(m: ModelWeights, ds: Dataset, S: SimilarityMatrix, cfg: SslrConfig) -> float:
    _check_problem(m, ds, S)
    w = m.coefficients
    f = ds.values @ w + m.intercept
    d = _roughness(w, S.entries)
    a = cfg.alpha
    total = _neg_log_likelihood(f, ds.labels)
    total += cfg.lam * float(np.sum(a * np.abs(w) + 0.5 * (1.0 - a) * d * d))
    if cfg.penalize_intercept:
        w0 = m.intercept
        total += cfg.lam * (a * abs(w0) + 0.5 * (1.0 - a) * w0 * w0)
    return total


def lasso_objective(m: ModelWeights, ds: Dataset, lam: float,
                    penalize_intercept: bool = False) -> float:
    """L0 + lam * sum|w_i| (the alpha = 1 case, written independently)."""
    if m.p != ds.p:
        raise DataError(f"dimension mismatch: model {m.p}, data {ds.p}")
    w = m.coefficients
    f = ds.values @ w + m.intercept
    total = _neg_log_likelihood(f, ds.labels)
    total += lam * float(np.sum(np.abs(w)))
    if penalize_intercept:
        total += lam * abs(m.intercept)
    return total


def smooth_objective(m: ModelWeights, ds: Dataset, S: SimilarityMatrix,
                     cfg: SslrConfig) -> float:
    """Objective without the l1 term."""
    _check_problem(m, ds, S)
    w = m.coefficients
    f = ds.values @ w + m.intercept
    d = _roughness(w, S.entries)
    ridge = 0.5 * (1.0 - cfg.alpha) * cfg.lam
    total = _neg_log_likelihood(f, ds.labels) + ridge * float(d @ d)
    if cfg.penalize_intercept:
        total += ridge * m.intercept ** 2
    return total


def smooth_gradient(m: ModelWeights, ds: Dataset, S: SimilarityMatrix,
                    cfg: SslrConfig) -> tuple[float, np.ndarray]:
    """
    Gradient of the smooth part as (d/dw0, d/dw).

    L0 contributes X'(sigmoid(f) - y); the similarity term contributes
    lam*(1-alpha)*(I-S)'(I-S)w.  The l1 term is left to the prox step.
    """
    _check_problem(m, ds, S)
    w = m.coefficients
    r = expit(ds.values @ w + m.intercept) - ds.labels
    g0 = float(np.sum(r))
    g = ds.values.T @ r
    ridge = (1.0 - cfg.alpha) * cfg.lam
    if ridge:
        d = _roughness(w, S.entries)
        g = g + ridge * (d - S.entries.T @ d)
        if cfg.penalize_intercept:
            g0 += ridge * m.intercept
    return g0, g


def soft_threshold(v, t: float):
    """sign(v) * max(|v| - t, 0); works on scalars and arrays."""
    if t < 0:
        raise ConfigError("threshold must be >= 0")
    out = np.sign(v) * np.maximum(np.abs(v) - t, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def stationarity_violation(m: ModelWeights, ds: Dataset, S: SimilarityMatrix,
                           cfg: SslrConfig) -> float:
    """
    Largest violation of the subgradient optimality conditions.

    Zero coefficients need |grad_i| <= lam*alpha; nonzero ones need
    grad_i + lam*alpha*sign(w_i) = 0.  An unpenalized intercept needs grad_0 = 0.
    """
    g0, g = smooth_gradient(m, ds, S, cfg)
    t = cfg.lam * cfg.alpha

    def _viol(grad, w):
        return np.where(w == 0, np.maximum(np.abs(grad) - t, 0.0),
                        np.abs(grad + t * np.sign(w)))

    worst = float(np.max(_viol(g, m.coefficients), initial=0.0))
    if cfg.penalize_intercept:
        worst = max(worst, float(_viol(np.array([g0]), np.array([m.intercept]))[0]))
    else:
        worst = max(worst, abs(g0))
    return worst


# =====================================================================
# 3.  Solver
# =====================================================================

class _Problem:
    """Flat-vector view of one SSLR fit: theta = [w0, w1..wp]."""

    def __init__(self, X: np.ndarray, y: np.ndarray, S: np.ndarray, cfg: SslrConfig):
        self.X = X
        self.y = y.astype(float)
        self.S = S
        self.cfg = cfg
        self.ridge = (1.0 - cfg.alpha) * cfg.lam
        self.l1 = cfg.alpha * cfg.lam

    def smooth(self, theta: np.ndarray) -> float:
        w0, w = theta[0], theta[1:]
        f = self.X @ w + w0
        d = _roughness(w, self.S)
        val = _neg_log_likelihood(f, self.y) + 0.5 * self.ridge * float(d @ d)
        if self.cfg.penalize_intercept:
            val += 0.5 * self.ridge * w0 * w0
        return val

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        w0, w = theta[0], theta[1:]
        r = expit(self.X @ w + w0) - self.y
        g = np.empty_like(theta)
        g[0] = np.sum(r)
        g[1:] = self.X.T @ r
        if self.ridge:
            d = _roughness(w, self.S)
            g[1:] += self.ridge * (d - self.S.T @ d)
            if self.cfg.penalize_intercept:
                g[0] += self.ridge * w0
        return g

    def l1_term(self, theta: np.ndarray) -> float:
        body = float(np.sum(np.abs(theta[1:])))
        if self.cfg.penalize_intercept:
            body += abs(theta[0])
        return self.l1 * body

    def prox(self, theta: np.ndarray, t: float) -> np.ndarray:
        out = np.empty_like(theta)
        out[1:] = soft_threshold(theta[1:], t * self.l1)
        out[0] = soft_threshold(theta[0], t * self.l1) if self.cfg.penalize_intercept else theta[0]
        return out

    def lipschitz(self) -> float:
        X, S = self.X, self.S
        n, p = X.shape

        def data_op(v):
            u = X @ v[1:] + v[0]
            out = np.empty_like(v)
            out[0] = u.sum()
            out[1:] = X.T @ u
            return out

        L = _power_iteration(data_op, p + 1) / 4.0
        if self.ridge:
            def rough_op(v):
                d = _roughness(v, S)
                return d - S.T @ d

            curv = _power_iteration(rough_op, p) if p else 0.0
            if self.cfg.penalize_intercept:
                curv = max(curv, 1.0)
            L += self.ridge * curv
        return L


def _power_iteration(matvec: Callable[[np.ndarray], np.ndarray], dim: int,
                     iterations: int = POWER_ITERATIONS) -> float:
    """Largest eigenvalue of a symmetric PSD operator (deterministic start)."""
    v = np.ones(dim) / np.sqrt(dim)
    est = 0.0
    for _ in range(iterations):
        u = matvec(v)
        norm = float(np.linalg.norm(u))
        if norm == 0.0:
            return 0.0
        v = u / norm
        if abs(norm - est) <= 1e-10 * norm:
            est = norm
            break
        est = norm
    return float(v @ matvec(v))


def _standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (X - mu) / sd, mu, sd


def fit_sslr(
    ds: Dataset,
    S: SimilarityMatrix,
    cfg: SslrConfig,
    init: ModelWeights | None = None,
    callback: Callable[[int, float], None] | None = None,
) -> ModelWeights:
    """
    Minimize the SSLR objective by proximal gradient with backtracking.

    callback(iteration, objective) is called after every accepted step
    (iteration 0 is the starting point).
    """
    if ds.n == 0:
        raise DataError("empty dataset")
    if S.p != ds.p:
        raise DataError(f"dimension mismatch: data {ds.p}, similarity {S.p}")
    if init is not None and init.p != ds.p:
        raise DataError(f"dimension mismatch: data {ds.p}, init {init.p}")

    X = ds.values
    mu = sd = None
    if cfg.standardize:
        X, mu, sd = _standardize(X)

    theta = np.zeros(ds.p + 1)
    if init is not None:
        theta[0], theta[1:] = init.intercept, init.coefficients
        if cfg.standardize:
            theta[0] = init.intercept + float(init.coefficients @ mu)
            theta[1:] = init.coefficients * sd

    prob = _Problem(X, ds.labels, S.entries, cfg)
    smooth_val = prob.smooth(theta)
    F = smooth_val + prob.l1_term(theta)
    if not np.isfinite(F):
        raise FitError("non-finite objective at the starting point; check feature scaling")
    if callback is not None:
        callback(0, F)

    L = prob.lipschitz()
    t = 1.0 / L if L > 0 else 1.0
    converged = False

    for it in range(1, cfg.max_iterations + 1):
        grad = prob.gradient(theta)
        slack = 4.0 * np.finfo(float).eps * max(1.0, abs(smooth_val))

        for _ in range(MAX_HALVINGS):
            cand = prob.prox(theta - t * grad, t)
            diff = cand - theta
            cand_smooth = prob.smooth(cand)
            bound = smooth_val + float(grad @ diff) + float(diff @ diff) / (2.0 * t)
            if cand_smooth <= bound + slack:
                break
            t *= 0.5
        else:
            # no representable progress left at this point
            converged = True
            break

        F_new = cand_smooth + prob.l1_term(cand)
        if not np.isfinite(F_new):
            raise FitError("non-finite objective encountered; check feature scaling")

        decrease = F - F_new
        residual = float(np.max(np.abs(diff))) / t
        grad_scale = 1.0 + float(np.max(np.abs(grad)))

        theta, smooth_val, F_old, F = cand, cand_smooth, F, F_new
        if callback is not None:
            callback(it, F)

        if decrease / max(1.0, abs(F_old)) < cfg.tolerance and residual <= cfg.tolerance * grad_scale:
            converged = True
            break

    if not converged:
        warnings.warn(
            f"SSLR did not converge in {cfg.max_iterations} iterations",
            ConvergenceWarning, stacklevel=2)

    w0, w = float(theta[0]), theta[1:].copy()
    if cfg.standardize:
        w = w / sd
        w0 = w0 - float(w @ mu)
    return ModelWeights(w0, w, ds.feature_names)
