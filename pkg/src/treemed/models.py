"""Local mediator/outcome regressions and their score tests.

At each internal node the mediator is the subcomposition log-ratio ``L``.
Two component hypotheses are tested:

* ``alpha = 0`` in the linear mediator model ``L ~ X + T``;
* ``beta = 0`` in the outcome model ``g(E[Y]) ~ X + T + L`` with identity
  link (continuous outcome) or logit link (binary outcome).

Both use Rao score statistics with nuisance parameters fitted under the null.
The null fits depend only on ``(X, T, Y)``, so they are computed once per
:class:`Design` and every node's statistic reduces to a few inner products.
That is what makes the vectorized ``*_stats`` kernels cheap enough to sit
inside permutation loops.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import special, stats

__all__ = [
    "SingularDesignError",
    "DegenerateTestError",
    "SeparationWarning",
    "LinearFit",
    "LogisticFit",
    "Design",
    "ComponentTest",
    "fit_linear",
    "fit_logistic",
    "score_test_alpha",
    "score_test_beta",
    "wald_alpha",
    "wald_beta",
    "sobel_pvalue",
    "joint_significance_pvalue",
]

OUTCOME_KINDS = ("continuous", "binary")


class SingularDesignError(np.linalg.LinAlgError):
    def __init__(self, message: str, column=None):
        super().__init__(message)
        self.column = column


class DegenerateTestError(ValueError):
    pass


class SeparationWarning(RuntimeWarning):
    pass


def _first_dependent_column(X: np.ndarray, tol: float = 1e-10) -> int | None:
    """Index of the first column lying in the span of the preceding ones."""
    Q = np.zeros((X.shape[0], 0))
    for k in range(X.shape[1]):
        col = X[:, k]
        norm = np.linalg.norm(col)
        if norm == 0:
            return k
        resid = col - Q @ (Q.T @ col)
        rn = np.linalg.norm(resid)
        if rn <= tol * norm:
            return k
        Q = np.column_stack([Q, resid / rn])
    return None


def _check_rank(X: np.ndarray, names: Sequence[str] | None = None) -> None:
    k = _first_dependent_column(X)
    if k is not None:
        name = names[k] if names is not None else f"column {k}"
        raise SingularDesignError(f"design matrix is rank deficient at {name}", column=k)


def _orth(X: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the column space of a full-rank ``X``."""
    q, _ = np.linalg.qr(X)
    return q


@dataclass(frozen=True)
class LinearFit:
    coef: np.ndarray
    residuals: np.ndarray
    sigma2: float
    """Unbiased error variance ``RSS / (n - k)``."""


def fit_linear(predictors, response, names: Sequence[str] | None = None) -> LinearFit:
    """Ordinary least squares.

    Raises
    ------
    SingularDesignError
        If ``predictors`` is not of full column rank; ``.column`` names the
        first column that is a linear combination of earlier ones.
    """
    X = np.asarray(predictors, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(response, dtype=float)
    n, k = X.shape
    if n <= k:
        raise SingularDesignError(f"need more samples ({n}) than predictors ({k})")
    _check_rank(X, names)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    return LinearFit(coef, resid, float(resid @ resid) / (n - k))


@dataclass(frozen=True)
class LogisticFit:
    coef: np.ndarray
    fitted: np.ndarray
    cov: np.ndarray
    n_iter: int
    converged: bool
    separated: bool


def fit_logistic(predictors, response, tol: float = 1e-8, max_iter: int = 100,
                 separation_bound: float = 15.0) -> LogisticFit:
    """Logistic regression by iteratively reweighted least squares.

    Stops when the largest coefficient change drops below ``tol`` or after
    ``max_iter`` iterations. If any coefficient exceeds ``separation_bound`` in
    absolute value the data are taken to be (quasi-)separated: a
    :class:`SeparationWarning` is issued and the fit is returned with
    ``separated=True``.
    """
    X = np.asarray(predictors, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(response, dtype=float)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("binary response must be coded 0/1")
    if y.min() == y.max():
        raise ValueError("binary response has a single class")
    _check_rank(X)
    beta = np.zeros(X.shape[1])
    converged = separated = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = X @ beta
        mu = special.expit(eta)
        w = np.clip(mu * (1 - mu), 1e-12, None)
        z = eta + (y - mu) / w
        sw = np.sqrt(w)
        new, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
        step = np.max(np.abs(new - beta))
        beta = new
        if np.max(np.abs(beta)) > separation_bound:
            separated = True
            warnings.warn("logistic fit diverging; response appears separated by the predictors",
                          SeparationWarning, stacklevel=2)
            break
        if step < tol:
            converged = True
            break
    mu = special.expit(X @ beta)
    w = np.clip(mu * (1 - mu), 1e-12, None)
    cov = np.linalg.pinv((X * w[:, None]).T @ X)
    return LogisticFit(beta, mu, cov, it, converged, separated)


@dataclass(frozen=True)
class ComponentTest:
    statistic: float
    p_asymptotic: float
    estimate_sign: int
    dof: int = 1


class Design:
    """Confounders (with intercept), treatment and outcome for ``n`` samples.

    Null-model quantities shared by every node are computed lazily and cached.
    Instances are treated as immutable.
    """

    def __init__(self, confounders, treatment, outcome, outcome_kind: str = "continuous",
                 confounder_names: Sequence[str] | None = None):
        X = np.asarray(confounders, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        T = np.asarray(treatment, dtype=float).ravel()
        Y = np.asarray(outcome, dtype=float).ravel()
        if outcome_kind not in OUTCOME_KINDS:
            raise ValueError(f"outcome_kind must be one of {OUTCOME_KINDS}, got {outcome_kind!r}")
        n = X.shape[0]
        if T.shape[0] != n or Y.shape[0] != n:
            raise ValueError("confounders, treatment and outcome must have the same length")
        for name, arr in (("confounders", X), ("treatment", T), ("outcome", Y)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contain missing or non-finite values")
        if outcome_kind == "binary" and not np.all((Y == 0) | (Y == 1)):
            raise ValueError("binary outcome must be coded 0/1")
        names = list(confounder_names) if confounder_names is not None else None
        _check_rank(X, names)
        _check_rank(np.column_stack([X, T]),
                    None if names is None else names + ["treatment"])
        for arr in (X, T, Y):
            arr.setflags(write=False)
        self.confounders = X
        self.treatment = T
        self.outcome = Y
        self.outcome_kind = outcome_kind
        self.confounder_names = names

    @property
    def n(self) -> int:
        return self.confounders.shape[0]

    @cached_property
    def null_predictors(self) -> np.ndarray:
        """``[X, T]``, the predictors of the outcome model under ``beta = 0``."""
        return np.column_stack([self.confounders, self.treatment])

    @cached_property
    def _qx(self) -> np.ndarray:
        return _orth(self.confounders)

    @cached_property
    def _qw(self) -> np.ndarray:
        return _orth(self.null_predictors)

    @cached_property
    def _t_resid(self) -> np.ndarray:
        T = self.treatment
        return T - self._qx @ (self._qx.T @ T)

    @cached_property
    def _outcome_null(self):
        """``(score residual, weights, weighted basis, dispersion)`` of the outcome null model."""
        W, Y = self.null_predictors, self.outcome
        if self.outcome_kind == "continuous":
            r = Y - self._qw @ (self._qw.T @ Y)
            return r, np.ones(self.n), self._qw, float(r @ r) / self.n
        fit = fit_logistic(W, Y)
        mu = fit.fitted
        v = mu * (1 - mu)
        sv = np.sqrt(v)
        return Y - mu, sv, _orth(W * sv[:, None]), 1.0

    # -- vectorized kernels: columns of ``L`` are candidate mediators --------

    def alpha_stats(self, L: np.ndarray):
        """Score statistics and score signs for ``alpha = 0`` for each column of ``L``."""
        L = np.asarray(L, dtype=float)
        qx, tr = self._qx, self._t_resid
        R = L - qx @ (qx.T @ L)
        U = tr @ L
        rss = np.einsum("i...,i...->...", R, R)
        scale = np.einsum("i...,i...->...", L, L)
        with np.errstate(divide="ignore", invalid="ignore"):
            # nothing left after removing X: the statistic is undefined
            stat = np.where(rss > 1e-20 * scale, U * U / (rss / self.n * (tr @ tr)), np.nan)
        return stat, np.sign(U)

    def beta_stats(self, L: np.ndarray):
        """Score statistics and score signs for ``beta = 0`` for each column of ``L``."""
        L = np.asarray(L, dtype=float)
        r, sv, q, phi = self._outcome_null
        U = r @ L
        S = L * sv[:, None] if L.ndim == 2 else L * sv
        proj = q.T @ S
        info = np.einsum("i...,i...->...", S, S) - np.einsum("i...,i...->...", proj, proj)
        scale = np.einsum("i...,i...->...", S, S)
        with np.errstate(divide="ignore", invalid="ignore"):
            stat = np.where(info > 1e-12 * scale, U * U / (phi * info), np.nan)
        return stat, np.sign(U)

    def residualize_mediator(self, L: np.ndarray, on: str):
        """Split ``L`` into fitted values and residuals on ``X`` (``on='x'``) or ``[X, T]`` (``on='xt'``)."""
        q = self._qx if on == "x" else self._qw
        fitted = q @ (q.T @ L)
        return fitted, L - fitted


def _pchisq1(stat):
    return stats.chi2.sf(stat, 1)


def score_test_alpha(design: Design, logratio) -> ComponentTest:
    """Score test of ``alpha = 0`` in ``logratio ~ X + T``.

    The statistic is ``(T'r)^2 / (s^2 T'(I - H_X)T)`` where ``r`` are the
    residuals of ``logratio`` on ``X`` and ``s^2 = r'r / n``.
    """
    L = np.asarray(logratio, dtype=float)
    if not np.all(np.isfinite(L)):
        raise ValueError("log-ratio contains non-finite values")
    stat, sign = design.alpha_stats(L)
    if not np.isfinite(stat):
        raise DegenerateTestError("log-ratio has no variation beyond the confounders")
    return ComponentTest(float(stat), float(_pchisq1(stat)), int(sign))


def score_test_beta(design: Design, logratio) -> ComponentTest:
    """Score test of ``beta = 0`` for adding ``logratio`` to the outcome model ``Y ~ X + T``."""
    L = np.asarray(logratio, dtype=float)
    if not np.all(np.isfinite(L)):
        raise ValueError("log-ratio contains non-finite values")
    stat, sign = design.beta_stats(L)
    if not np.isfinite(stat):
        raise DegenerateTestError("log-ratio is collinear with the confounders and treatment")
    return ComponentTest(float(stat), float(_pchisq1(stat)), int(sign))


def wald_alpha(design: Design, L):
    """OLS estimate and standard error of the treatment coefficient in ``L ~ X + T``.

    Vectorized over the columns of ``L``.
    """
    L = np.asarray(L, dtype=float)
    tr = design._t_resid
    tt = tr @ tr
    est = (tr @ L) / tt
    _, resid = design.residualize_mediator(L, "xt")
    df = design.n - design.null_predictors.shape[1]
    s2 = np.einsum("i...,i...->...", resid, resid) / df
    return est, np.sqrt(s2 / tt)


def wald_beta(design: Design, L):
    """Estimate and standard error of the mediator coefficient in ``g(E[Y]) ~ X + T + L``."""
    L = np.asarray(L, dtype=float)
    single = L.ndim == 1
    L2 = L[:, None] if single else L
    Y, W = design.outcome, design.null_predictors
    if design.outcome_kind == "continuous":
        _, Lr = design.residualize_mediator(L2, "xt")
        yr = design._outcome_null[0]
        ll = np.einsum("ij,ij->j", Lr, Lr)
        est = (yr @ Lr) / ll
        resid = yr[:, None] - Lr * est
        df = design.n - W.shape[1] - 1
        s2 = np.einsum("ij,ij->j", resid, resid) / df
        se = np.sqrt(s2 / ll)
    else:
        est = np.empty(L2.shape[1])
        se = np.empty(L2.shape[1])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SeparationWarning)
            for k in range(L2.shape[1]):
                fit = fit_logistic(np.column_stack([W, L2[:, k]]), Y)
                est[k] = fit.coef[-1]
                se[k] = np.sqrt(fit.cov[-1, -1])
    if single:
        return float(est[0]), float(se[0])
    return est, se


def sobel_pvalue(alpha_hat, se_alpha, beta_hat, se_beta):
    """Two-sided Sobel test of ``alpha * beta = 0``; vectorized."""
    a, sa, b, sb = np.broadcast_arrays(*(np.asarray(v, dtype=float)
                                         for v in (alpha_hat, se_alpha, beta_hat, se_beta)))
    denom = np.sqrt(a * a * sb * sb + b * b * sa * sa)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(denom > 0, a * b / denom, 0.0)
    p = 2 * stats.norm.sf(np.abs(z))
    return float(p) if p.ndim == 0 else p


def joint_significance_pvalue(p_alpha, p_beta):
    """The classical joint-significance p-value ``max(p_alpha, p_beta)``."""
    p = np.maximum(p_alpha, p_beta)
    return float(p) if np.ndim(p) == 0 else p
