"""Ground truth for the pricing game, independent of the iterative solver.

``tau_solve`` uses the KKT structure directly: with the budget multiplier
tau, stationarity reads ``P_n - alpha_n p_n - e_n - tau * e_n = 0`` (the
budget gradient in p_n is e_n), so every price is the clamped affine map
``clip((P - e - tau * e) / alpha, lower, upper)``. The grid searches are
exhaustive desk-scale checks for two or three users.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .market import ConfigurationError, benefits_vector
from .vi import VIProblem

TAU_TOL = 1e-10
TAU_MAXITER = 200
MAX_GRID_USERS = 3
PARETO_TOL = 1e-9
GRID_CHUNK = 2_000_000


@dataclass
class KKTSolution:
    prices: np.ndarray
    tau: float
    binding: bool
    stationarity_residuals: np.ndarray


def prices_at_tau(tau: float, prob: VIProblem) -> np.ndarray:
    return np.clip((prob.cap - prob.e - tau * prob.e) / prob.alpha, prob.lower_bounds, prob.upper_bounds)


def stationarity(p, tau: float, prob: VIProblem) -> np.ndarray:
    """Per-user KKT residual P - alpha*p - e - tau*e."""
    return prob.cap - prob.alpha * p - prob.e - tau * prob.e


def tau_solve(prob: VIProblem) -> KKTSolution:
    """Social optimum by bisection on the common budget multiplier."""
    budget = prob.budget
    if float(prob.e @ prob.lower_bounds) > budget:
        raise ConfigurationError("lower-bound payments exceed the budget")
    tol = TAU_TOL * max(1.0, budget)

    def spend(tau):
        return float(prob.e @ prices_at_tau(tau, prob))

    if spend(0.0) <= budget:
        tau, binding = 0.0, False
    else:
        lo = 0.0
        hi = float(np.max((prob.cap - prob.e - prob.alpha * prob.lower_bounds) / prob.e))
        binding = True
        for _ in range(TAU_MAXITER):
            mid = 0.5 * (lo + hi)
            gap = spend(mid) - budget
            if abs(gap) <= tol:
                tau = mid
                break
            if gap > 0:
                lo = mid
            else:
                hi = mid
        else:
            tau = hi
        tau = _exact_on_piece(tau, prob)
    p = prices_at_tau(tau, prob)
    return KKTSolution(p, tau, binding, stationarity(p, tau, prob))


def _exact_on_piece(tau: float, prob: VIProblem) -> float:
    """Solve spend(tau) = C exactly on the affine piece containing ``tau``.

    Keeps the bisection value if the exact root falls outside that piece.
    """
    raw = (prob.cap - prob.e - tau * prob.e) / prob.alpha
    free = (raw > prob.lower_bounds) & (raw < prob.upper_bounds)
    if not np.any(free):
        return tau
    e, a = prob.e[free], prob.alpha[free]
    fixed = float(prob.e[~free] @ prices_at_tau(tau, prob)[~free])
    slope = float(np.sum(e * e / a))
    exact = (float(np.sum(e * (prob.cap[free] - e) / a)) + fixed - prob.budget) / slope
    raw_exact = (prob.cap - prob.e - exact * prob.e) / prob.alpha
    same = (raw_exact > prob.lower_bounds) & (raw_exact < prob.upper_bounds)
    return exact if exact >= 0 and np.array_equal(same, free) else tau


def kkt_residual(p, tau: float, prob: VIProblem, rel_tol: float = 1e-9) -> float:
    """KKT violation of ``(p, tau)``: worst stationarity error plus |tau * budget slack|.

    With g = P - alpha*p - e - tau*e, an interior price needs g = 0, a price
    at its lower bound needs g <= 0 and one at its upper bound needs g >= 0.
    """
    p = np.asarray(p, dtype=float)
    g = stationarity(p, tau, prob)
    width = prob.upper_bounds - prob.lower_bounds
    gap = rel_tol * np.maximum(1.0, width)
    at_lo = p <= prob.lower_bounds + gap
    at_hi = p >= prob.upper_bounds - gap
    viol = np.abs(g)
    viol = np.where(at_lo, np.maximum(g, 0.0), viol)
    viol = np.where(at_hi, np.maximum(-g, 0.0), viol)
    slack = abs(tau * (float(prob.e @ p) - prob.budget))
    return float(np.max(viol)) + slack


def _axis(lo: float, hi: float, step: float) -> np.ndarray:
    k = int(np.floor((hi - lo) / step + 1e-9))
    return lo + step * np.arange(k + 1)


def _best_last(rest_budget, e, alpha, cap, lo, hi, step):
    """Best grid value of the last coordinate given the budget left for it.

    The benefit is concave in one price, so the grid maximum over
    [lo, min(hi, rest/e)] sits at a grid neighbour of the clamped argmax.
    Returns (price, benefit, feasible) arrays.
    """
    top = np.minimum(hi, rest_budget / e)
    k_top = np.floor((top - lo) / step + 1e-9)
    feasible = k_top >= 0
    k_top = np.maximum(k_top, 0)
    target = np.clip((cap - e) / alpha, lo, lo + k_top * step)
    k0 = np.clip(np.floor((target - lo) / step), 0, k_top)
    k1 = np.minimum(k0 + 1, k_top)
    q0 = lo + k0 * step
    q1 = lo + k1 * step
    x0 = cap * q0 - 0.5 * alpha * q0 * q0 - e * q0
    x1 = cap * q1 - 0.5 * alpha * q1 * q1 - e * q1
    use1 = x1 > x0
    return np.where(use1, q1, q0), np.where(use1, x1, x0), feasible


def _check_small(prob: VIProblem):
    if prob.n > MAX_GRID_USERS:
        raise ValueError(f"grid oracle is limited to {MAX_GRID_USERS} users, got {prob.n}")


def _lead_axes(prob: VIProblem, grid_step: float):
    lo, budget = prob.lower_bounds, prob.budget
    axes = []
    for i in range(prob.n - 1):
        room = budget - float(prob.e @ lo) + prob.e[i] * lo[i]
        axes.append(_axis(lo[i], min(prob.upper_bounds[i], room / prob.e[i]), grid_step))
    return axes


def _lead_chunks(axes):
    """Yield blocks of the leading-coordinate grid, split along the first axis."""
    rest = None
    if len(axes) > 1:
        rest = np.stack([g.ravel() for g in np.meshgrid(*axes[1:], indexing="ij")], axis=1)
    width = 1 if rest is None else len(rest)
    per_chunk = max(1, GRID_CHUNK // width)
    first = axes[0]
    for k in range(0, len(first), per_chunk):
        head = first[k:k + per_chunk]
        if rest is None:
            yield head[:, None]
        else:
            yield np.column_stack([np.repeat(head, width), np.tile(rest, (len(head), 1))])


def _exact_last(rest_budget, e, alpha, cap, lo, hi):
    """Best value of one price given the budget left for it (no grid)."""
    top = np.minimum(hi, rest_budget / e)
    q = np.clip((cap - e) / alpha, lo, np.maximum(top, lo))
    return q, cap * q - 0.5 * alpha * q * q - e * q, top >= lo


def _welfare_rest(lead, inner, e, alpha, cap, lo, hi, budget):
    """Benefit of the gridded prices plus the exact best reply of the last user."""
    q = np.column_stack([lead, inner]) if lead is not None else inner[:, None]
    q_last, x_last, ok = _exact_last(budget - q @ e[:-1], e[-1], alpha[-1], cap[-1], lo[-1], hi[-1])
    total = benefits_vector(q, e[:-1], alpha[:-1], cap[:-1]).sum(axis=1) + x_last
    return np.where(ok, total, -np.inf), q_last


def brute_force_welfare(prob: VIProblem, grid_step: float, exhaustive: bool = False) -> np.ndarray:
    """Grid search for the welfare maximizer.

    One user's price is left off the grid and set to its exact best reply to
    the budget left over; all others lie on the grid ``lower + k * grid_step``.
    Pinning a price to the grid along a budget line leaves slack that lets a
    plain grid argmax drift several steps from the optimum, so every choice
    of off-grid user is searched and the best point overall is returned.
    With one user the grid itself is searched.

    The innermost gridded price is found by discrete ternary search, which
    returns the exhaustive answer because welfare is strictly concave in it;
    ``exhaustive=True`` enumerates it instead.
    """
    _check_small(prob)
    e, alpha, cap = prob.e, prob.alpha, prob.cap
    lo, hi, budget = prob.lower_bounds, prob.upper_bounds, prob.budget
    if prob.n == 1:
        q, _, _ = _best_last(np.array([budget]), e[0], alpha[0], cap[0], lo[0], hi[0], grid_step)
        return np.array([q[0]])
    best, best_val = None, -np.inf
    for last in range(prob.n):
        point, val = _search_with_exact(prob, last, grid_step, exhaustive)
        if val > best_val:
            best, best_val = point, val
    return best


def _search_with_exact(prob: VIProblem, last: int, grid_step: float, exhaustive: bool):
    e, alpha, cap = prob.e, prob.alpha, prob.cap
    lo, hi, budget = prob.lower_bounds, prob.upper_bounds, prob.budget
    order = np.r_[np.delete(np.arange(prob.n), last), last]
    e, alpha, cap, lo, hi = e[order], alpha[order], cap[order], lo[order], hi[order]
    axes = [_axis(lo[i], min(hi[i], (budget - float(e @ lo) + e[i] * lo[i]) / e[i]), grid_step)
            for i in range(prob.n - 1)]
    if len(axes) == 1:
        outer = None
    else:
        outer = np.stack([g.ravel() for g in np.meshgrid(*axes[:-1], indexing="ij")], axis=1)
    inner_axis = axes[-1]
    if exhaustive:
        if outer is None:
            lead, inner = None, inner_axis
        else:
            lead = np.repeat(outer, len(inner_axis), axis=0)
            inner = np.tile(inner_axis, len(outer))
        total, q_last = _welfare_rest(lead, inner, e, alpha, cap, lo, hi, budget)
        k = int(np.argmax(total))
        point = ([] if lead is None else list(lead[k])) + [inner[k], q_last[k]]
        value = total[k]
    else:
        rows = 1 if outer is None else len(outer)
        spent = np.zeros(rows) if outer is None else outer @ e[:-2]
        # largest feasible inner index given the outer prices
        room = budget - spent - e[-2] * lo[-2] - e[-1] * lo[-1]
        k_hi = np.minimum(np.floor(room / (e[-2] * grid_step) + 1e-9), len(inner_axis) - 1).astype(int)
        k_lo = np.zeros(rows, dtype=int)

        def f(k):
            return _welfare_rest(outer, inner_axis[k], e, alpha, cap, lo, hi, budget)[0]

        while np.any(k_hi - k_lo > 2):
            third = (k_hi - k_lo) // 3
            m1, m2 = k_lo + third, k_hi - third
            up = f(m1) < f(m2)
            k_lo = np.where(up, m1 + 1, k_lo)
            k_hi = np.where(up, k_hi, m2)
        best_total, best_k = np.full(rows, -np.inf), k_lo.copy()
        for shift in range(3):
            k = np.minimum(k_lo + shift, np.maximum(k_hi, k_lo))
            val = f(k)
            better = val > best_total
            best_total, best_k = np.where(better, val, best_total), np.where(better, k, best_k)
        r = int(np.argmax(best_total))
        total, q_last = _welfare_rest(None if outer is None else outer[r:r + 1],
                                      inner_axis[best_k[r:r + 1]], e, alpha, cap, lo, hi, budget)
        point = ([] if outer is None else list(outer[r])) + [inner_axis[best_k[r]], q_last[0]]
        value = total[0]
    out = np.empty(prob.n)
    out[order] = point
    return out, value


def pareto_check(p_star, prob: VIProblem, grid_step: float) -> bool:
    """True iff no feasible grid point weakly improves every user and strictly improves one."""
    _check_small(prob)
    p_star = np.asarray(p_star, dtype=float)
    e, alpha, cap = prob.e, prob.alpha, prob.cap
    lo, hi, budget = prob.lower_bounds, prob.upper_bounds, prob.budget
    ref = benefits_vector(p_star, e, alpha, cap)
    n = prob.n
    if n == 1:
        q, x, ok = _best_last(np.array([budget]), e[0], alpha[0], cap[0], lo[0], hi[0], grid_step)
        return not (ok[0] and x[0] > ref[0] + PARETO_TOL)
    for lead in _lead_chunks(_lead_axes(prob, grid_step)):
        x_lead = benefits_vector(lead, e[:-1], alpha[:-1], cap[:-1])
        keep = np.all(x_lead >= ref[:-1] - PARETO_TOL, axis=1)
        if not np.any(keep):
            continue
        lead, x_lead = lead[keep], x_lead[keep]
        # The last user's best reply maximizes its own benefit, so it is the only candidate needed.
        _, x_last, ok = _best_last(budget - lead @ e[:-1], e[-1], alpha[-1], cap[-1], lo[-1], hi[-1], grid_step)
        weak = ok & (x_last >= ref[-1] - PARETO_TOL)
        strict = np.any(x_lead > ref[:-1] + PARETO_TOL, axis=1) | (x_last > ref[-1] + PARETO_TOL)
        if np.any(weak & strict):
            return False
    return True
