"""One-way ANOVA with an in-house F distribution tail."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

CF_TOL = 1e-10
CF_MAX_ITER = 10_000
_TINY = 1e-300


class DegenerateGroups(ValueError):
    pass


@dataclass
class AnovaResult:
    factor: str
    f_stat: float
    p_value: float
    dof: tuple[int, int]
    group_medians: dict = field(default_factory=dict)
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "factor": self.factor,
            "f_stat": self.f_stat,
            "p_value": self.p_value,
            "dof": list(self.dof),
            "group_medians": {str(k): v for k, v in self.group_medians.items()},
            "degenerate": self.degenerate,
        }


def _beta_cf(a: float, b: float, x: float) -> float:
    # Modified Lentz evaluation of the incomplete-beta continued fraction.
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < CF_TOL * 1e-3:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    # The fraction converges fastest on the side of the mean.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def f_cdf(f: float, d1: float, d2: float) -> float:
    if f <= 0.0:
        return 0.0
    if math.isinf(f):
        return 1.0
    return regularized_incomplete_beta(d1 / 2.0, d2 / 2.0, d1 * f / (d1 * f + d2))


def f_sf(f: float, d1: float, d2: float) -> float:
    """Upper tail ``1 - F_cdf`` computed without cancellation."""
    if f <= 0.0:
        return 1.0
    if math.isinf(f):
        return 0.0
    return regularized_incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))


def anova_oneway(groups, labels=None, factor: str = "") -> AnovaResult:
    """Classic one-way ANOVA on ``groups`` (a sequence of observation lists).

    Unbalanced group sizes are fine.  When every observation is identical the
    statistic is undefined; the result then carries ``F = 0``, ``p = 1`` and
    ``degenerate = True``.
    """
    arrays = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    k = len(arrays)
    if k < 2:
        raise DegenerateGroups("ANOVA needs at least two groups")
    if any(a.size < 2 for a in arrays):
        raise DegenerateGroups("every group needs at least two observations")
    n = sum(a.size for a in arrays)
    df_between, df_within = k - 1, n - k
    labels = list(range(k)) if labels is None else list(labels)
    medians = {lab: float(np.median(a)) for lab, a in zip(labels, arrays)}

    grand = np.concatenate(arrays).mean()
    ss_between = float(sum(a.size * (a.mean() - grand) ** 2 for a in arrays))
    ss_within = float(sum(np.sum((a - a.mean()) ** 2) for a in arrays))

    scale = max(abs(grand), 1.0)
    if ss_within <= 1e-24 * scale**2 * n:
        if ss_between <= 1e-24 * scale**2 * n:
            return AnovaResult(factor, 0.0, 1.0, (df_between, df_within), medians, degenerate=True)
        return AnovaResult(factor, math.inf, 0.0, (df_between, df_within), medians)

    f_stat = (ss_between / df_between) / (ss_within / df_within)
    return AnovaResult(factor, f_stat, f_sf(f_stat, df_between, df_within), (df_between, df_within), medians)
