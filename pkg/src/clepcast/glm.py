"""Poisson GLM and least-squares fitting used by every predictor."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import gammaln

logger = logging.getLogger(__name__)

_ETA_CLIP = 700.0  # exp overflows just above 709


@dataclass(frozen=True)
class FitConfig:
    """Solver settings for :func:`fit_poisson_glm`.

    ``l1`` and ``l2`` are per-observation penalty weights on the slope
    coefficients (the intercept is never penalised); the objective is
    ``-loglik / n + l1 * |b|_1 + l2 / 2 * |b|^2``.
    """

    max_iter: int = 100
    grad_tol: float = 1e-8
    coef_cap: float = 30.0
    step_halving: bool = True
    l1: float = 0.0
    l2: float = 0.0


@dataclass(frozen=True)
class Standardization:
    mean: np.ndarray
    scale: np.ndarray
    constant: np.ndarray  # bool mask

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return (X - self.mean) / self.scale

    def invert(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.scale + self.mean

    @classmethod
    def identity(cls, p: int) -> "Standardization":
        return cls(np.zeros(p), np.ones(p), np.zeros(p, dtype=bool))


def standardize(X) -> tuple[np.ndarray, Standardization]:
    """Center and scale columns to mean 0 and sample sd 1 (n-1 denominator).

    Constant columns come back as exact zeros and are flagged; their stored
    scale is 1 so re-applying the transform only centers new values.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not np.isfinite(X).all():
        raise ValueError("design matrix contains NaN or inf")
    n = X.shape[0]
    mean = X.mean(axis=0)
    sd = X.std(axis=0, ddof=1) if n > 1 else np.zeros(X.shape[1])
    constant = ~(sd > 1e-12 * np.maximum(1.0, np.abs(mean)))
    scale = np.where(constant, 1.0, sd)
    Z = (X - mean) / scale
    Z[:, constant] = 0.0
    return Z, Standardization(mean, scale, constant)


@dataclass
class GlmFit:
    intercept: float
    coef: np.ndarray
    converged: bool
    iterations: int
    deviance: float
    diverged: bool = False
    dropped: tuple[int, ...] = ()
    history: list[float] = field(default_factory=list, repr=False)

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([[self.intercept], self.coef])

    def linear_predictor(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return self.intercept + X @ self.coef

    def predict(self, X) -> np.ndarray:
        return np.exp(np.minimum(self.linear_predictor(X), _ETA_CLIP))


def poisson_loglik_eta(y, eta) -> float:
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    return float(np.sum(y * eta - np.exp(eta) - gammaln(y + 1.0)))


def poisson_loglik(X, y, beta) -> float:
    """Poisson log-likelihood; ``beta[0]`` is the intercept."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    beta = np.asarray(beta, dtype=float)
    return poisson_loglik_eta(y, beta[0] + X @ beta[1:])


def poisson_score(X, y, beta) -> np.ndarray:
    """Gradient of :func:`poisson_loglik` with respect to ``beta``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Xa = np.column_stack([np.ones(X.shape[0]), X])
    mu = np.exp(Xa @ np.asarray(beta, dtype=float))
    return Xa.T @ (np.asarray(y, dtype=float) - mu)


def poisson_deviance(y, mu) -> float:
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(y / mu), 0.0)
    return float(2.0 * np.sum(term - (y - mu)))


def _independent_columns(X: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Indices of a maximal set of columns independent of each other and of 1."""
    p = X.shape[1]
    if p == 0:
        return np.arange(0)
    Xc = X - X.mean(axis=0)
    norms = np.linalg.norm(Xc, axis=0)
    keep: list[int] = []
    for j in range(p):
        if norms[j] <= tol * max(1.0, np.abs(X[:, j]).max()):
            continue
        col = Xc[:, j] / norms[j]
        if keep:
            basis = Xc[:, keep] / norms[keep]
            coef, *_ = np.linalg.lstsq(basis, col, rcond=None)
            col = col - basis @ coef
        if np.linalg.norm(col) > 1e-8:
            keep.append(j)
    return np.asarray(keep, dtype=int)


def _soft(x, lam):
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def fit_poisson_glm(X, y, config: FitConfig | None = None) -> GlmFit:
    """Maximum-likelihood Poisson regression with a log link.

    Newton/IRLS steps with step-halving on the penalised objective. An
    intercept is always included and should not be present in `X`. Columns
    that are linearly dependent on earlier ones (or on the intercept) are
    dropped and get coefficient 0. If any coefficient runs past
    ``config.coef_cap`` the fit is clipped and marked diverged.
    """
    config = config or FitConfig()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if len(y) != n:
        raise ValueError("X and y have different numbers of rows")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("non-finite values in GLM inputs")
    if (y < 0).any():
        raise ValueError("Poisson response must be non-negative")

    keep = _independent_columns(X)
    dropped = tuple(int(j) for j in range(p) if j not in set(keep.tolist()))
    Xa = np.column_stack([np.ones(n), X[:, keep]])
    q = Xa.shape[1]

    pen_mask = np.ones(q, dtype=bool)
    pen_mask[0] = False
    l1 = config.l1 * n
    l2 = config.l2 * n

    def objective(b):
        eta = np.minimum(Xa @ b, _ETA_CLIP)
        val = -float(np.sum(y * eta - np.exp(eta)))
        if l1 or l2:
            bp = b[pen_mask]
            val += l1 * np.abs(bp).sum() + 0.5 * l2 * bp @ bp
        return val

    beta = np.zeros(q)
    ybar = y.mean() if n else 0.0
    beta[0] = np.log(ybar) if ybar > 0 else -10.0
    f = objective(beta)
    history = []
    converged = diverged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        eta = np.minimum(Xa @ beta, _ETA_CLIP)
        mu = np.exp(eta)
        history.append(poisson_deviance(y, mu))
        grad = Xa.T @ (y - mu)
        H = Xa.T @ (mu[:, None] * Xa)
        if l2:
            grad[pen_mask] -= l2 * beta[pen_mask]
            H[pen_mask, pen_mask] += l2
        if l1:
            new = _prox_newton_direction(beta, grad, H, l1, pen_mask)
            step = new - beta
            # optimality of the l1 problem: proximal step vanishes
            if np.max(np.abs(step)) < config.grad_tol:
                converged = True
                break
        else:
            try:
                step = linalg.solve(H, grad, assume_a="pos")
            except (linalg.LinAlgError, ValueError):
                step = np.linalg.lstsq(H, grad, rcond=None)[0]
            # a tiny gradient alone is not enough: along a direction with no
            # finite optimum the gradient decays like exp(eta) while the
            # Newton step stays O(1)
            if np.max(np.abs(grad)) < config.grad_tol and np.max(np.abs(step)) < 1e-6:
                converged = True
                break

        t = 1.0
        cand = beta + step
        f_new = objective(cand)
        if config.step_halving:
            halvings = 0
            while not f_new <= f and halvings < 60:
                t *= 0.5
                cand = beta + t * step
                f_new = objective(cand)
                halvings += 1
        small = np.max(np.abs(t * step)) <= 1e-12 * (1.0 + np.max(np.abs(beta)))
        if f_new <= f or not config.step_halving:
            beta, f = cand, f_new
        if np.max(np.abs(beta)) > config.coef_cap:
            beta = np.clip(beta, -config.coef_cap, config.coef_cap)
            diverged = True
            break
        if small:
            # no representable improvement left: at the optimum to machine precision
            converged = True
            break

    mu = np.exp(np.minimum(Xa @ beta, _ETA_CLIP))
    coef = np.zeros(p)
    coef[keep] = beta[1:]
    if diverged:
        logger.debug("Poisson GLM diverged after %d iterations", it)
    return GlmFit(
        intercept=float(beta[0]),
        coef=coef,
        converged=converged and not diverged,
        iterations=it,
        deviance=poisson_deviance(y, mu),
        diverged=diverged,
        dropped=dropped,
        history=history,
    )


def _prox_newton_direction(beta, grad, H, l1, pen_mask, sweeps: int = 200, tol: float = 1e-12):
    """Minimise the l1-penalised quadratic model around `beta` by coordinate descent."""
    b = beta.copy()
    # model: -grad.(b - beta) + 0.5 (b - beta)' H (b - beta) + l1 |b_pen|_1
    lin = grad + H @ beta  # so the model is 0.5 b'Hb - lin.b + const
    for _ in range(sweeps):
        delta = 0.0
        for j in range(len(b)):
            hjj = H[j, j]
            if hjj <= 0:
                continue
            r = lin[j] - H[j] @ b + hjj * b[j]
            new = _soft(r, l1) / hjj if pen_mask[j] else r / hjj
            delta = max(delta, abs(new - b[j]))
            b[j] = new
        if delta < tol:
            break
    return b


@dataclass(frozen=True)
class OlsFit:
    intercept: float
    coef: np.ndarray
    rank_deficient: bool = False

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([[self.intercept], self.coef])

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        return self.intercept + X @ self.coef


def fit_ols(X, y) -> OlsFit:
    """Least squares with an intercept, via an orthogonal factorisation.

    Rank-deficient designs return the minimum-norm solution, flagged.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    Xa = np.column_stack([np.ones(X.shape[0]), X])
    beta, _, rank, _ = np.linalg.lstsq(Xa, y, rcond=None)
    return OlsFit(intercept=float(beta[0]), coef=beta[1:], rank_deficient=bool(rank < Xa.shape[1]))
