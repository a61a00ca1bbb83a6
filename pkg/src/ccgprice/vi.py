"""The pricing game as a variational inequality over box-and-budget price sets.

The operator is the stacked negative benefit gradient
``Z(p)_n = alpha_n * p_n + e_n - P_n`` and the feasible set is

    K = {p : lower <= p <= upper, sum_n e_n p_n <= C}.

Projections onto ``K`` and onto ``K`` cut by one extra half-space are exact
up to floating point: both reduce to monotone scalar equations in a
Lagrange multiplier, solved with a bracketing root finder.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .market import ConfigurationError, DimensionError, EnergyUser, MarketConfig, user_arrays


class SeparationError(RuntimeError):
    """The feasible set and a separating half-space do not intersect."""


BUDGET_TOL = 1e-12
BUDGET_MAXITER = 200
HALFSPACE_TOL = 1e-12
FEASIBILITY_TOL = 1e-10
KINK_TABLE_MAX = 512
POLISH_PARALLEL = 1e-16
DYKSTRA_MAXITER = 10_000
DYKSTRA_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class VIProblem:
    eus: tuple[EnergyUser, ...]
    config: MarketConfig
    lower_bounds: np.ndarray
    upper_bounds: np.ndarray

    def __init__(self, eus: Sequence[EnergyUser], config: MarketConfig, lower_bounds=None, upper_bounds=None):
        eus = tuple(eus)
        if not eus:
            raise ConfigurationError("a problem needs at least one energy user")
        e, alpha, cap = user_arrays(eus)
        n = len(eus)
        lower = np.zeros(n) if lower_bounds is None else _bounds(lower_bounds, n, "lower_bounds")
        upper = cap.copy() if upper_bounds is None else _bounds(upper_bounds, n, "upper_bounds")
        if np.any(lower >= upper):
            raise ConfigurationError("every lower bound must be strictly below its upper bound")
        if float(e @ lower) > config.budget_C:
            raise ConfigurationError(
                f"empty feasible set: lower-bound payments {float(e @ lower):.6g} exceed budget {config.budget_C:.6g}"
            )
        for arr in (e, alpha, cap, lower, upper):
            arr.flags.writeable = False
        object.__setattr__(self, "eus", eus)
        object.__setattr__(self, "config", config)
        object.__setattr__(self, "lower_bounds", lower)
        object.__setattr__(self, "upper_bounds", upper)
        object.__setattr__(self, "e", e)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "cap", cap)

    @property
    def n(self) -> int:
        return len(self.eus)

    @property
    def budget(self) -> float:
        return self.config.budget_C

    def with_budget(self, budget: float) -> "VIProblem":
        cfg = MarketConfig(budget, self.config.grid_sell_price, self.config.grid_buy_price,
                           self.config.participation_threshold)
        return VIProblem(self.eus, cfg, self.lower_bounds, self.upper_bounds)

    def subset(self, mask) -> "VIProblem":
        """Restrict the problem to the users selected by boolean ``mask``."""
        idx = np.flatnonzero(mask)
        return VIProblem([self.eus[i] for i in idx], self.config,
                         self.lower_bounds[idx], self.upper_bounds[idx])


def _bounds(values, n, name):
    arr = np.array(values, dtype=float).reshape(-1)
    if arr.size == 1:
        arr = np.full(n, float(arr[0]))
    if arr.shape[0] != n:
        raise DimensionError(f"{name}: expected {n} entries, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class HalfSpace:
    """The set {p : <normal, p> <= offset}."""

    normal: np.ndarray
    offset: float

    def violation(self, p) -> float:
        return float(self.normal @ np.asarray(p, dtype=float)) - self.offset


def eval_operator_Z(p, prob: VIProblem) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (prob.n,):
        raise DimensionError(f"expected {prob.n} prices, got shape {p.shape}")
    return prob.alpha * p + prob.e - prob.cap


def monotonicity_modulus(prob: VIProblem) -> float:
    """Strong monotonicity constant of Z: its Jacobian is diag(alpha)."""
    return float(np.min(prob.alpha))


def operator_jacobian(prob: VIProblem) -> np.ndarray:
    return np.diag(prob.alpha)


def _root_decreasing(f: Callable[[float], float], lo: float, hi: float, flo: float, fhi: float,
                     tol: float, maxiter: int) -> tuple[float, float]:
    """Root of a continuous non-increasing ``f`` with f(lo) > 0 >= f(hi).

    Illinois false position with a bisection safeguard; exact in one step on
    any linear piece. Returns the accepted point and its value, falling back
    to the ``f <= 0`` end of the bracket when ``maxiter`` runs out.
    """
    if fhi >= -tol:
        return hi, fhi
    side = 0
    for _ in range(maxiter):
        x = hi - fhi * (hi - lo) / (fhi - flo)
        if not lo < x < hi:
            x = 0.5 * (lo + hi)
            if not lo < x < hi:
                break
        fx = f(x)
        if abs(fx) <= tol:
            return x, fx
        if fx > 0:
            lo, flo = x, fx
            if side == -1:
                fhi *= 0.5
            side = -1
        else:
            hi, fhi = x, fx
            if side == 1:
                flo *= 0.5
            side = 1
    return hi, f(hi)


def _clip(x, lo, hi):
    # np.clip carries noticeable dispatch overhead at these vector sizes
    return np.minimum(np.maximum(x, lo), hi)


def _polish(d, lo, hi, rows, gaps):
    """Least-norm correction of the free coordinates of ``d`` so that
    ``rows @ d`` moves by ``gaps``; removes the cancellation left by the
    multiplier search when ``w`` is large and ``d`` is small."""
    free = (d > lo) & (d < hi)
    if not free.any():
        return d
    out = d.copy()
    if len(rows) == 1:
        r = rows[0][free]
        out[free] += gaps[0] / float(r @ r) * r
        return _clip(out, lo, hi)
    # Rows are applied in order, each orthogonalized against the earlier
    # ones so an earlier equation is not disturbed. A row that is (almost)
    # parallel to the earlier ones carries no new information and is skipped.
    basis = []
    for row, gap in zip(rows, gaps):
        r = row[free]
        full = float(r @ r)
        for q in basis:
            r = r - float(q @ r) * q
        rr = float(r @ r)
        if full == 0.0 or rr <= POLISH_PARALLEL * full:
            continue
        resid = gap - float(row[free] @ (out[free] - d[free]))
        out[free] += resid / float(row[free] @ r) * r
        basis.append(r / np.sqrt(rr))
    return _clip(out, lo, hi)


def _budget_multiplier(w, lo, hi, e, slack):
    """Smallest lam >= 0 with e.clip(w - lam*e, lo, hi) <= slack.

    The spend is piecewise linear in lam with kinks where a coordinate hits
    a bound; it is evaluated at every kink at once and the bracketing piece
    is solved exactly.
    """
    d = _clip(w, lo, hi)
    spend = float(e @ d)
    tol = BUDGET_TOL * (float(e @ np.abs(d)) + abs(slack))
    if spend - slack <= tol:
        return 0.0
    kinks = np.concatenate(((w - hi) / e, (w - lo) / e))
    kinks = np.sort(kinks[kinks > 0])
    if kinks.size > KINK_TABLE_MAX:
        return _budget_multiplier_search(w, lo, hi, e, slack, spend, tol)
    spends = e @ _clip(w[:, None] - e[:, None] * kinks[None, :], lo[:, None], hi[:, None])
    over = spends - slack
    if over[-1] > tol:
        raise ConfigurationError("empty feasible set: lower bounds overspend the budget")
    k = int(np.argmax(over <= 0))
    lam_hi, f_hi = kinks[k], over[k]
    lam_lo, f_lo = (0.0, spend - slack) if k == 0 else (kinks[k - 1], over[k - 1])
    if f_hi >= -tol or f_lo == f_hi:
        return float(lam_hi)
    # interpolate from the left end: the root is often far closer to lam_lo
    # than the piece is wide, and subtracting from lam_hi would cancel
    return float(lam_lo + f_lo * (lam_hi - lam_lo) / (f_lo - f_hi))


def _budget_multiplier_search(w, lo, hi, e, slack, spend, tol):
    def excess(lam):
        return float(e @ _clip(w - lam * e, lo, hi)) - slack

    top = max(0.0, float(np.max((w - lo) / e)))
    ftop = excess(top)
    if ftop > tol:
        raise ConfigurationError("empty feasible set: lower bounds overspend the budget")
    lam, _ = _root_decreasing(excess, 0.0, top, spend - slack, ftop, tol, BUDGET_MAXITER)
    return lam


def _proj_budget_box(w, lo, hi, e, slack):
    """Project ``w`` onto {d : lo <= d <= hi, e.d <= slack}.

    Coordinates are displacements from a base point, so rounding scales with
    the size of ``w`` rather than with the prices themselves.
    """
    lam = _budget_multiplier(w, lo, hi, e, slack)
    d = _clip(w - lam * e, lo, hi)
    if lam > 0:
        d = _polish(d, lo, hi, [e], [slack - float(e @ d)])
    return d


def _cut_multiplier(phi, f0, s0, guess, tol):
    """Root of the piecewise-linear non-increasing ``phi`` on [0, inf).

    ``phi`` returns its value and the slope of the current piece. Newton
    steps are exact on a piece, so each one either lands on the root or
    crosses a kink; secant or bisection steps take over whenever Newton
    leaves the bracket, and the bracket is grown geometrically until the
    sign changes.
    """
    lo, flo = 0.0, f0
    hi = fhi = None
    x, fx, sx = 0.0, f0, s0
    for _ in range(BUDGET_MAXITER):
        nxt = x - fx / sx if sx < 0 else None
        if hi is None:
            if nxt is None or nxt <= lo:
                nxt = max(2.0 * lo, guess)
        elif nxt is None or not lo < nxt < hi:
            nxt = hi - fhi * (hi - lo) / (fhi - flo)
            if not lo < nxt < hi:
                nxt = 0.5 * (lo + hi)
                if not lo < nxt < hi:
                    return hi
        x = nxt
        fx, sx = phi(x)
        if abs(fx) <= tol:
            return x
        if fx > 0:
            lo, flo = x, fx
        else:
            hi, fhi = x, fx
    if hi is None:
        raise SeparationError("feasible set and half-space do not intersect")
    return hi


def _proj_budget_box_cut(w, lo, hi, e, slack, a, b):
    """Project ``w`` onto {d : lo <= d <= hi, e.d <= slack, a.d <= b}.

    For a multiplier mu >= 0 on the cut, d(mu) = _proj_budget_box(w - mu*a);
    mu -> a.d(mu) is non-increasing since projections are monotone maps.
    """
    d0 = _proj_budget_box(w, lo, hi, e, slack)
    f0 = float(a @ d0) - b
    scale = float(np.abs(a) @ np.abs(d0)) + abs(b)
    tol = HALFSPACE_TOL * scale
    if f0 <= tol:
        return d0
    norm2 = float(a @ a)
    if norm2 == 0.0:
        raise SeparationError("half-space with zero normal excludes the whole feasible set")

    def phi(mu):
        # value and slope of mu -> a.d(mu) - b on the current linear piece
        shifted = w - mu * a
        lam = _budget_multiplier(shifted, lo, hi, e, slack)
        d = _clip(shifted - lam * e, lo, hi)
        if lam > 0:
            d = _polish(d, lo, hi, [e], [slack - float(e @ d)])
        free = (d > lo) & (d < hi)
        af = a[free]
        if lam > 0 and free.any():
            # the budget row absorbs the part of a along e
            ef = e[free]
            af = af - float(af @ ef) / float(ef @ ef) * ef
        return float(a @ d) - b, -float(af @ af)

    f0, s0 = phi(0.0)
    mu = _cut_multiplier(phi, f0, s0, max(f0 / norm2, np.finfo(float).tiny), tol)
    shifted = w - mu * a
    lam = _budget_multiplier(shifted, lo, hi, e, slack)
    d = _clip(shifted - lam * e, lo, hi)
    rows, gaps = [], []
    if lam > 0:
        rows.append(e)
        gaps.append(slack - float(e @ d))
    rows.append(a)
    gaps.append(b - float(a @ d))
    return _polish(d, lo, hi, rows, gaps)


def project_feasible(v, prob: VIProblem) -> np.ndarray:
    """Euclidean projection of ``v`` onto the box intersected with the budget half-space.

    p(lam) = clip(v - lam*e, lower, upper) with lam >= 0 chosen so the budget
    holds with equality whenever the plain box clamp overspends.
    """
    v = _vector(v, prob)
    return _proj_budget_box(v, prob.lower_bounds, prob.upper_bounds, prob.e, prob.budget)


def project_displacement(w, base, slack, prob: VIProblem, hs: HalfSpace | None = None) -> np.ndarray:
    """Displacement d such that ``base + d`` is the projection of ``base + w``.

    ``slack`` is the budget slack C - e.base carried by the caller; the
    optional ``hs`` is expressed in displacement coordinates as well.
    """
    lo = prob.lower_bounds - base
    hi = prob.upper_bounds - base
    if hs is None:
        return _proj_budget_box(w, lo, hi, prob.e, slack)
    return _proj_budget_box_cut(w, lo, hi, prob.e, slack, hs.normal, hs.offset)


def _vector(v, prob):
    v = np.asarray(v, dtype=float)
    if v.shape != (prob.n,):
        raise DimensionError(f"expected {prob.n} entries, got shape {v.shape}")
    return v


def _project_dykstra(v, hs: HalfSpace, prob: VIProblem) -> np.ndarray:
    """Cyclic Dykstra over (box and budget) and the extra half-space."""
    a, b = hs.normal, hs.offset
    norm2 = float(a @ a)
    x = v.copy()
    corr_k = np.zeros_like(x)
    corr_h = np.zeros_like(x)
    for _ in range(DYKSTRA_MAXITER):
        y = project_feasible(x + corr_k, prob)
        corr_k = x + corr_k - y
        w = y + corr_h
        over = float(a @ w) - b
        x_new = w - (over / norm2) * a if over > 0 else w
        corr_h = w - x_new
        done = np.max(np.abs(x_new - x)) <= DYKSTRA_TOL * max(1.0, np.max(np.abs(x)))
        x = x_new
        if done:
            break
    return project_feasible(x, prob)


def project_feasible_cap_halfspace(v, hs: HalfSpace, prob: VIProblem, method: str = "dual") -> np.ndarray:
    """Euclidean projection of ``v`` onto the feasible set cut by ``hs``.

    ``method="dual"`` solves for the cut multiplier with nested projections
    (see :func:`project_displacement`); ``method="dykstra"`` is a slower
    alternating scheme kept for cross-checking.
    """
    v = _vector(v, prob)
    if method == "dual":
        shifted = HalfSpace(hs.normal, hs.offset - float(hs.normal @ v))
        p = v + project_displacement(np.zeros_like(v), v, prob.budget - float(prob.e @ v), prob, shifted)
        p = np.clip(p, prob.lower_bounds, prob.upper_bounds)
    elif method == "dykstra":
        p = _project_dykstra(v, hs, prob)
    else:
        raise ValueError(f"unknown projection method {method!r}")
    hs_viol = hs.violation(p)
    budget_viol = float(prob.e @ p) - prob.budget
    if hs_viol > FEASIBILITY_TOL * max(1.0, abs(hs.offset)) or budget_viol > FEASIBILITY_TOL * max(1.0, prob.budget):
        raise SeparationError(
            f"projection left constraints violated (half-space {hs_viol:.3g}, budget {budget_viol:.3g})"
        )
    return p
