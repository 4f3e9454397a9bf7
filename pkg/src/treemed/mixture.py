"""Composite-null calibration of the joint-significance statistic.

Under the no-mediation null at a node, ``P_max = max(P_alpha, P_beta)`` is a
three-part mixture over the component nulls H00, H10 and H01, so

    Pr(P_max <= p) = pi00 p^2 + pi10 p F_alpha(p) + pi01 p F_beta(p)

where ``F_alpha`` and ``F_beta`` are the power functions of the component
tests under their alternatives. The mixture weights come from marginal null
proportions estimated across all tested nodes, either with the Fourier
estimator of Jin and Cai on signed z-scores or with Storey's tail count. The
power functions come from a Grenander (monotone) estimate of the p-value
density with the null part subtracted.

Node-level p-values are combined with Simes' test for the community-level
null and screened with Benjamini-Hochberg for node discovery.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import stats

__all__ = [
    "NullProportions",
    "GrenanderDensity",
    "NodeTestRecord",
    "MixtureFit",
    "z_from_p",
    "jin_cai_pi0",
    "storey_pi0",
    "storey_pi00",
    "compose_proportions",
    "grenander",
    "alt_cdf",
    "mixture_pvalue",
    "simes_global",
    "bh_select",
    "fit_mixture",
]

PI_FLOOR = 0.01
_TINY = np.finfo(float).tiny


def z_from_p(p, sign=1):
    """Signed z-score ``sign * Phi^{-1}(1 - p/2)``; a zero sign counts as positive."""
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0):
        warnings.warn("p-values of 0 clamped to the smallest positive float", RuntimeWarning,
                      stacklevel=2)
        p = np.maximum(p, _TINY)
    s = np.where(np.asarray(sign) < 0, -1.0, 1.0)
    z = s * stats.norm.isf(np.minimum(p, 1.0) / 2)
    return float(z) if z.ndim == 0 else z


def jin_cai_pi0(z, n_xi: int = 201, n_t: int = 101) -> float:
    """Proportion of null z-scores by the empirical characteristic function.

    Minimizes, over ``t`` in ``[0, sqrt(log J)]``,

        psi(t) = int_{-1}^{1} (1 - |xi|) Re(phi_J(t xi)) exp(t^2 xi^2 / 2) d xi

    with ``phi_J`` the empirical characteristic function of ``z``. The integral
    uses the trapezoid rule on ``n_xi`` equally spaced points (``n_xi`` odd);
    the minimum is over ``n_t`` equally spaced values of ``t``. The result is
    clamped to ``[0.01, 1]``.
    """
    z = np.asarray(z, dtype=float).ravel()
    if not np.all(np.isfinite(z)):
        raise ValueError("z-scores must be finite")
    J = z.size
    if J == 0:
        raise ValueError("need at least one z-score")
    if J < 20:
        warnings.warn(f"only {J} z-scores; null-proportion estimate is unreliable",
                      RuntimeWarning, stacklevel=2)
    if n_xi % 2 == 0:
        raise ValueError("n_xi must be odd so the grid is symmetric about 0")
    # integrand is even in xi: integrate over [0, 1] and double
    xi = np.linspace(0.0, 1.0, (n_xi + 1) // 2)
    h = xi[1] - xi[0]
    wts = np.full(xi.size, h)
    wts[0] = wts[-1] = h / 2
    wts *= 2 * (1 - xi)
    t_max = np.sqrt(np.log(J)) if J > 1 else 0.0
    best = np.inf
    for t in np.linspace(0.0, t_max, n_t):
        s = t * xi
        re_phi = np.cos(np.outer(s, z)).mean(axis=1)
        psi = wts @ (re_phi * np.exp(s * s / 2))
        best = min(best, psi)
    return float(np.clip(best, PI_FLOOR, 1.0))


def storey_pi0(p, lam: float = 0.5) -> float:
    """Storey's ``#{p > lam} / ((1 - lam) J)``, clamped to ``[0.01, 1]``."""
    p = np.asarray(p, dtype=float).ravel()
    if not 0 < lam < 1:
        raise ValueError("lambda must lie in (0, 1)")
    return float(np.clip(np.count_nonzero(p > lam) / ((1 - lam) * p.size), PI_FLOOR, 1.0))


def storey_pi00(p_alpha, p_beta, lam: float = 0.5) -> float:
    """Joint-tail estimate of the fraction of nodes with both components null."""
    pa = np.asarray(p_alpha, dtype=float)
    pb = np.asarray(p_beta, dtype=float)
    both = np.count_nonzero((pa > lam) & (pb > lam))
    return float(np.clip(both / ((1 - lam) ** 2 * pa.size), 0.0, 1.0))


@dataclass(frozen=True)
class NullProportions:
    """Mixture weights of H00, H10, H01 among null nodes, plus the marginal estimates."""

    pi00: float
    pi10: float
    pi01: float
    pi0_alpha: float
    pi0_beta: float
    method: str = "jin_cai"

    def as_tuple(self) -> tuple[float, float, float]:
        return self.pi00, self.pi10, self.pi01


def compose_proportions(pi0_alpha: float, pi0_beta: float, method: str = "jin_cai",
                        pi00_joint: float | None = None) -> NullProportions:
    """Combine marginal null proportions into conditional mixture weights.

    ``jin_cai`` assumes the two component nulls are independent across nodes
    and conditions on the composite null. ``storey`` takes a direct joint
    estimate ``pi00_joint`` and sets ``pi01 = pi0_alpha - pi00``,
    ``pi10 = pi0_beta - pi00`` before clamping at 0 and renormalizing.
    """
    a, b = float(pi0_alpha), float(pi0_beta)
    if method == "jin_cai":
        pi0 = a + b - a * b
        if pi0 <= 0:
            return NullProportions(0.0, 0.5, 0.5, a, b, method)
        return NullProportions(a * b / pi0, (1 - a) * b / pi0, a * (1 - b) / pi0, a, b, method)
    if method == "storey":
        if pi00_joint is None:
            raise ValueError("storey composition needs pi00_joint")
        p00 = min(max(float(pi00_joint), 0.0), 1.0)
        p01 = max(a - p00, 0.0)
        p10 = max(b - p00, 0.0)
        total = p00 + p10 + p01
        if total <= 0:
            return NullProportions(1.0, 0.0, 0.0, a, b, method)
        return NullProportions(p00 / total, p10 / total, p01 / total, a, b, method)
    raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True)
class GrenanderDensity:
    """Piecewise-constant nonincreasing density on ``[0, 1]``.

    ``heights[k]`` applies on ``(knots[k], knots[k+1]]`` (the first piece
    also covers 0); ``knots`` starts at 0 and ends at 1.
    """

    knots: np.ndarray
    heights: np.ndarray

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.knots)

    def pdf(self, p):
        p = np.asarray(p, dtype=float)
        k = np.clip(np.searchsorted(self.knots, p, side="left") - 1, 0, self.heights.size - 1)
        return self.heights[k]

    def cdf(self, p):
        p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
        cum = np.concatenate([[0.0], np.cumsum(self.heights * self.widths)])
        k = np.clip(np.searchsorted(self.knots, p, side="right") - 1, 0, self.heights.size - 1)
        out = cum[k] + self.heights[k] * (p - self.knots[k])
        return np.minimum(out, 1.0)


def _pava_decreasing(mass: np.ndarray, width: np.ndarray):
    """Pool adjacent violators for slopes ``mass / width`` under a nonincreasing constraint.

    Returns the pooled blocks as ``(mass, width, n_members)`` arrays.
    """
    bm, bw, bn = [], [], []
    for m, w in zip(mass, width):
        m, w, c = float(m), float(w), 1
        # merge while the previous block is not strictly steeper
        while bm and bm[-1] * w <= m * bw[-1]:
            m += bm.pop()
            w += bw.pop()
            c += bn.pop()
        bm.append(m)
        bw.append(w)
        bn.append(c)
    return np.array(bm), np.array(bw), np.array(bn)


def grenander(p) -> GrenanderDensity:
    """Grenander estimate of a decreasing density on ``[0, 1]``.

    The density is the left derivative of the least concave majorant of the
    empirical CDF of ``p`` on ``[0, 1]``, found by pooling adjacent violators
    of the ECDF's segment slopes.
    """
    p = np.sort(np.clip(np.asarray(p, dtype=float).ravel(), _TINY, 1.0))
    if p.size == 0:
        raise ValueError("need at least one p-value")
    u, counts = np.unique(p, return_counts=True)
    x = np.concatenate([[0.0], u])
    mass = counts / p.size
    if u[-1] < 1.0:
        x = np.append(x, 1.0)
        mass = np.append(mass, 0.0)
    bm, bw, bn = _pava_decreasing(mass, np.diff(x))
    ends = np.cumsum(bn)
    knots = np.concatenate([[0.0], x[ends]])
    return GrenanderDensity(knots, bm / bw)


def alt_cdf(p_eval, density: GrenanderDensity, props: NullProportions, which: str = "alpha"):
    """Estimated power function ``Pr(P <= p_eval | component non-null)``.

    The non-null density solves ``f = w f_alt + (1 - w)`` pointwise, where
    ``w`` is ``pi10`` for ``which='alpha'`` and ``pi01`` for ``which='beta'``.
    Negative parts are set to zero and the result renormalized to unit mass.
    Returns 1 when ``w < 0.01`` or no mass survives.
    """
    if which == "alpha":
        w, rest = props.pi10, props.pi00 + props.pi01
    elif which == "beta":
        w, rest = props.pi01, props.pi00 + props.pi10
    else:
        raise ValueError("which must be 'alpha' or 'beta'")
    p = np.asarray(p_eval, dtype=float)
    if w < PI_FLOOR:
        return np.ones_like(p) if p.ndim else 1.0
    f_alt = np.maximum((density.heights - rest) / w, 0.0)
    total = float(np.sum(f_alt * density.widths))
    if total <= 0:
        return np.ones_like(p) if p.ndim else 1.0
    out = np.clip(GrenanderDensity(density.knots, f_alt / total).cdf(p), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def mixture_pvalue(p_max, props: NullProportions, F_alpha_alt, F_beta_alt):
    """``pi00 p^2 + pi10 p F_alpha + pi01 p F_beta``, clamped to ``(0, 1]``."""
    p = np.asarray(p_max, dtype=float)
    val = props.pi00 * p * p + props.pi10 * p * np.asarray(F_alpha_alt) \
        + props.pi01 * p * np.asarray(F_beta_alt)
    val = np.clip(val, _TINY, 1.0)
    return float(val) if val.ndim == 0 else val


def simes_global(p) -> float:
    """Simes combination ``min_i J p_(i) / i``, capped at 1."""
    p = np.sort(np.asarray(p, dtype=float).ravel())
    if p.size == 0:
        raise ValueError("Simes test needs at least one p-value")
    J = p.size
    return float(min(1.0, np.min(J * p / np.arange(1, J + 1))))


class BHResult(NamedTuple):
    selected: np.ndarray
    qvalues: np.ndarray


def bh_select(p, q: float = 0.1) -> BHResult:
    """Benjamini-Hochberg step-up selection.

    Returns the indices of rejected hypotheses (ascending) and the BH-adjusted
    p-values. All p-values tied with the largest rejected one are rejected.
    """
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    p = np.asarray(p, dtype=float).ravel()
    J = p.size
    if J == 0:
        return BHResult(np.array([], dtype=int), np.array([]))
    order = np.argsort(p, kind="stable")
    ps = p[order]
    ranks = np.arange(1, J + 1)
    below = np.flatnonzero(ps <= ranks * q / J)
    if below.size:
        cutoff = ps[below[-1]]
        selected = np.flatnonzero(p <= cutoff)
    else:
        selected = np.array([], dtype=int)
    adj = np.minimum.accumulate((J * ps / ranks)[::-1])[::-1]
    qvals = np.empty(J)
    qvals[order] = np.minimum(adj, 1.0)
    return BHResult(selected, qvals)


@dataclass(frozen=True)
class NodeTestRecord:
    node: int
    p_alpha: float
    p_beta: float
    sign_alpha: int
    p_max: float
    p_med: float
    q_value: float
    status: str
    perms_used_alpha: int = 0
    perms_used_beta: int = 0


@dataclass(frozen=True)
class MixtureFit:
    props: NullProportions
    density_alpha: GrenanderDensity
    density_beta: GrenanderDensity
    p_max: np.ndarray
    F_alpha: np.ndarray
    F_beta: np.ndarray
    p_med: np.ndarray


def fit_mixture(p_alpha, p_beta, sign_alpha, sign_beta, method: str = "jin_cai",
                lam: float = 0.5, p_floor: float = 0.0,
                n_xi: int = 201, n_t: int = 101) -> MixtureFit:
    """Mediation p-values for a set of tested nodes.

    Parameters
    ----------
    p_alpha, p_beta : array-like of shape (J,)
        Component p-values of the tested nodes.
    sign_alpha, sign_beta : array-like of shape (J,)
        Signs of the component estimates (used by the Jin-Cai estimator).
    method : {'jin_cai', 'storey'}
    lam : float
        Storey tuning parameter.
    p_floor : float
        Component p-values are clamped to ``[p_floor, 1]`` before estimation,
        e.g. ``1 / (max_perms + 1)`` for permutation p-values.
    """
    pa = np.clip(np.asarray(p_alpha, dtype=float), max(p_floor, _TINY), 1.0)
    pb = np.clip(np.asarray(p_beta, dtype=float), max(p_floor, _TINY), 1.0)
    if pa.shape != pb.shape or pa.ndim != 1 or pa.size == 0:
        raise ValueError("p_alpha and p_beta must be nonempty vectors of equal length")
    if method == "jin_cai":
        a = jin_cai_pi0(z_from_p(pa, sign_alpha), n_xi, n_t)
        b = jin_cai_pi0(z_from_p(pb, sign_beta), n_xi, n_t)
        props = compose_proportions(a, b, "jin_cai")
    elif method == "storey":
        props = compose_proportions(storey_pi0(pa, lam), storey_pi0(pb, lam), "storey",
                                    storey_pi00(pa, pb, lam))
    else:
        raise ValueError(f"unknown method {method!r}")
    ga, gb = grenander(pa), grenander(pb)
    p_max = np.maximum(pa, pb)
    Fa = np.atleast_1d(alt_cdf(p_max, ga, props, "alpha"))
    Fb = np.atleast_1d(alt_cdf(p_max, gb, props, "beta"))
    p_med = np.atleast_1d(mixture_pvalue(p_max, props, Fa, Fb))
    return MixtureFit(props, ga, gb, p_max, Fa, Fb, p_med)
