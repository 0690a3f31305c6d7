"""Exact 1-Wasserstein distance between discrete distributions.

The ground cost must be a metric.  Mass shared by both distributions at
the same support point then stays in place in an optimal plan, so the
problem reduces to transporting the positive part of (p - q) onto the
negative part.  The reduced transportation problem is solved exactly by
successive shortest augmenting paths with node potentials (Dijkstra on
reduced costs); every augmentation saturates a source, a sink, or a
residual arc, and the solve is exact up to float accumulation.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

_MASS_TOL = 1e-12


def wasserstein_exact(p, q, cost) -> float:
    """Minimum transport cost between weight vectors ``p`` and ``q``.

    ``p`` and ``q`` live on the same support; ``cost[i, j]`` is the metric
    ground cost between support points i and j.  Total masses must agree
    within a relative 1e-9.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    cost = np.asarray(cost, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ValidationError("weight vectors must be 1-D and equally shaped")
    if cost.shape != (p.size, p.size):
        raise ValidationError("cost matrix shape does not match the support")
    if np.any(p < -_MASS_TOL) or np.any(q < -_MASS_TOL):
        raise ValidationError("negative mass")
    tp, tq = float(p.sum()), float(q.sum())
    scale = max(tp, tq, 1.0)
    if abs(tp - tq) > 1e-9 * scale:
        raise ValidationError(f"total masses differ: {tp} vs {tq}")

    diff = p - q
    src = np.where(diff > _MASS_TOL * scale)[0]
    snk = np.where(diff < -_MASS_TOL * scale)[0]
    if src.size == 0 or snk.size == 0:
        return 0.0
    supply = diff[src].copy()
    demand = -diff[snk].copy()
    demand *= supply.sum() / demand.sum()  # absorb rounding residue
    c = cost[np.ix_(src, snk)]
    plan = solve_transport(supply, demand, c)
    return float(np.sum(plan * c))


def solve_transport(supply, demand, cost) -> np.ndarray:
    """Exact transportation plan minimizing sum(plan * cost).

    ``supply`` (m,) and ``demand`` (n,) are positive and share their total;
    the returned plan is (m, n) with supply/demand as its marginals.
    """
    supply = np.asarray(supply, dtype=np.float64).copy()
    demand = np.asarray(demand, dtype=np.float64).copy()
    cost = np.asarray(cost, dtype=np.float64)
    m, n = supply.size, demand.size
    if cost.shape != (m, n):
        raise ValidationError("cost matrix shape mismatch")
    eps = _MASS_TOL * max(float(supply.sum()), 1.0)

    plan = np.zeros((m, n), dtype=np.float64)
    u = np.zeros(m)  # source potentials: reduced cost = cost - u[:,None] - v[None,:]
    v = np.zeros(n)
    inf = np.inf
    max_rounds = 50 * (m + n) + 100

    for _ in range(max_rounds):
        rem_src = supply > eps
        if not rem_src.any():
            break
        rem_snk = demand > eps

        ds = np.where(rem_src, 0.0, inf)
        dt = np.full(n, inf)
        done_s = np.zeros(m, dtype=bool)
        done_t = np.zeros(n, dtype=bool)
        par_t = np.full(n, -1, dtype=np.int64)  # sink reached via forward arc from source
        par_s = np.full(m, -1, dtype=np.int64)  # source reached via residual arc from sink

        target = -1
        while target < 0:
            cand_s = np.where(done_s, inf, ds)
            cand_t = np.where(done_t, inf, dt)
            i_best = int(np.argmin(cand_s))
            j_best = int(np.argmin(cand_t))
            s_best, t_best = cand_s[i_best], cand_t[j_best]
            if not np.isfinite(min(s_best, t_best)):
                break
            if s_best <= t_best:
                done_s[i_best] = True
                nd = s_best + np.maximum(cost[i_best] - u[i_best] - v, 0.0)
                better = ~done_t & (nd < dt)
                dt[better] = nd[better]
                par_t[better] = i_best
            else:
                done_t[j_best] = True
                if rem_snk[j_best]:
                    target = j_best
                    break
                back = (plan[:, j_best] > eps) & ~done_s
                if back.any():
                    idx = np.where(back)[0]
                    nd = t_best + np.maximum(u[idx] + v[j_best] - cost[idx, j_best], 0.0)
                    upd = nd < ds[idx]
                    ds[idx[upd]] = nd[upd]
                    par_s[idx[upd]] = j_best

        if target < 0:
            raise ValidationError("transport solve failed: no augmenting path")

        d_star = dt[target]
        u -= np.minimum(ds, d_star)
        v += np.minimum(dt, d_star)

        # collect the augmenting path: forward arcs gain mass, residual lose
        fwd: list[tuple[int, int]] = []
        bwd: list[tuple[int, int]] = []
        j = target
        while True:
            i = int(par_t[j])
            fwd.append((i, j))
            j_prev = int(par_s[i])
            if j_prev < 0:
                root = i
                break
            bwd.append((i, j_prev))
            j = j_prev

        delta = min(float(supply[root]), float(demand[target]))
        for i, j_b in bwd:
            delta = min(delta, float(plan[i, j_b]))
        for i, j_f in fwd:
            plan[i, j_f] += delta
        for i, j_b in bwd:
            plan[i, j_b] -= delta
        supply[root] -= delta
        demand[target] -= delta

    if supply.max(initial=0.0) > 10 * eps or demand.max(initial=0.0) > 10 * eps:
        raise ValidationError("transport solve failed to exhaust supply")
    return plan
