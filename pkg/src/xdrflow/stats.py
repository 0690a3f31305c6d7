"""Correlation, simple regression, Welch's test, and quintile shares.

The t-distribution tail probabilities are computed from scratch via the
regularized incomplete beta function so that library implementations stay
available as independent cross-checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import DegenerateData, InsufficientData


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------

def _beta_cf(a: float, b: float, x: float, max_iter: int = 500, eps: float = 3e-16) -> float:
    """Continued fraction for the incomplete beta, modified Lentz iteration."""
    tiny = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return h


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b) for a, b > 0."""
    if not (a > 0.0 and b > 0.0):
        raise DegenerateData("incomplete beta requires positive shape parameters")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    """Two-sided tail probability of the t distribution with ``df`` dof."""
    if df <= 0.0:
        raise DegenerateData("degrees of freedom must be positive")
    if math.isinf(t):
        return 0.0
    if t == 0.0:
        return 1.0
    return betainc_reg(df / 2.0, 0.5, df / (df + t * t))


# ---------------------------------------------------------------------------
# correlation and regression
# ---------------------------------------------------------------------------

def _prepare_pair(x: Sequence[float], y: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise DegenerateData("paired samples must be equal-length 1-D sequences")
    if xa.size < 3:
        raise InsufficientData(f"need at least 3 paired observations, got {xa.size}")
    return xa, ya


def pearson(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Sample Pearson correlation and its two-sided p-value.

    The p-value comes from the exact t transform with n-2 degrees of
    freedom.  Zero variance in either argument raises ``DegenerateData``.
    """
    xa, ya = _prepare_pair(x, y)
    n = xa.size
    dx = xa - xa.mean()
    dy = ya - ya.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateData("zero variance sample in correlation")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    df = n - 2
    t = r * math.sqrt(df / (1.0 - r * r))
    return r, t_two_sided_p(t, df)


@dataclass(frozen=True)
class RegressionFit:
    slope: float
    intercept: float
    r: float
    r2: float
    n: int
    p_value: float

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r": self.r,
                "r2": self.r2, "n": self.n, "p_value": self.p_value}


def ols(x: Sequence[float], y: Sequence[float]) -> RegressionFit:
    """Least-squares line y = slope*x + intercept with fit diagnostics.

    For simple regression the coefficient of determination equals the
    squared Pearson correlation, and that identity is used directly.
    """
    xa, ya = _prepare_pair(x, y)
    r, p = pearson(xa, ya)
    dx = xa - xa.mean()
    dy = ya - ya.mean()
    slope = float(dx @ dy) / float(dx @ dx)
    intercept = float(ya.mean() - slope * xa.mean())
    return RegressionFit(slope=slope, intercept=intercept, r=r, r2=r * r,
                         n=int(xa.size), p_value=p)


def welch_t(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Welch's unequal-variance t statistic and two-sided p-value.

    Degrees of freedom follow Welch-Satterthwaite.  Two identical constant
    samples give t=0, p=1; constant samples with different means give an
    infinite statistic and p=0.
    """
    aa = np.asarray(a, dtype=np.float64)
    bb = np.asarray(b, dtype=np.float64)
    if aa.size < 2 or bb.size < 2:
        raise InsufficientData("each sample needs at least 2 observations")
    na, nb = aa.size, bb.size
    ma, mb = aa.mean(), bb.mean()
    va = float(aa.var(ddof=1))
    vb = float(bb.var(ddof=1))
    qa = va / na
    qb = vb / nb
    se2 = qa + qb
    if se2 == 0.0:
        if ma == mb:
            return 0.0, 1.0
        return math.copysign(math.inf, ma - mb), 0.0
    t = float(ma - mb) / math.sqrt(se2)
    df = se2 * se2 / (qa * qa / (na - 1) + qb * qb / (nb - 1))
    return t, t_two_sided_p(t, df)


# ---------------------------------------------------------------------------
# quintile contribution share
# ---------------------------------------------------------------------------

def quintile_share(values: Mapping[str, float], deciles: Mapping[str, float]) -> float:
    """Share (percent) of total absolute change carried by the richest fifth.

    Units are ranked by income decile; the top ceil(n/5) units (decile
    ties broken by unit id) form the top quintile.  Absolute values are
    used because the total is a magnitude.
    """
    ids = sorted(values.keys())
    if len(ids) < 5:
        raise InsufficientData(f"need at least 5 units for a quintile split, got {len(ids)}")
    missing = [c for c in ids if c not in deciles]
    if missing:
        raise DegenerateData(f"missing income decile for: {missing[:5]}")
    order = sorted(ids, key=lambda c: (deciles[c], c))
    k = math.ceil(len(order) / 5)
    top = order[-k:]
    total = sum(abs(values[c]) for c in ids)
    if total == 0.0:
        raise DegenerateData("all values are zero; share undefined")
    return 100.0 * sum(abs(values[c]) for c in top) / total


def top_quintile_ids(deciles: Mapping[str, float]) -> list[str]:
    """Ids of the top ceil(n/5) units by decile, ties broken by id."""
    order = sorted(deciles.keys(), key=lambda c: (deciles[c], c))
    k = math.ceil(len(order) / 5)
    return order[-k:]
