"""Two-projection hyperplane method for the monotone pricing VI.

Each iteration:

1. r = Proj_K(p - mu * Z(p)), stop when ||r - p|| <= tol;
2. Armijo search on the segment [p, r] for z with
   <Z(z), p - r> >= (sigma / mu) * ||p - r||**2;
3. the half-space H = {q : <Z(z), q - z> <= 0} contains every solution and
   strictly excludes p;
4. p <- Proj_{K cap H}(p).

The operator and the line-search inner product are injectable so the same
iteration can be driven by message passing (see :mod:`ccgprice.sim`).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .market import Allocation, benefits_vector
from .vi import (
    HalfSpace,
    VIProblem,
    eval_operator_Z,
    project_displacement,
    project_feasible,
)

log = logging.getLogger(__name__)

LINESEARCH_MAX_STEPS = 100

Operator = Callable[[np.ndarray], np.ndarray]
InnerProduct = Callable[[np.ndarray, np.ndarray], float]


class LineSearchError(RuntimeError):
    pass


class ConvergenceError(RuntimeError):
    """Raised when ``max_iter`` is exhausted; carries the partial result."""

    def __init__(self, message, allocation, trace):
        super().__init__(message)
        self.allocation = allocation
        self.trace = trace


@dataclass(frozen=True)
class SolverParams:
    step_mu: float | None = None
    armijo_sigma: float = 0.3
    armijo_gamma: float = 0.5
    tol: float = 1e-8
    max_iter: int = 500

    def __post_init__(self):
        if self.step_mu is not None and not self.step_mu > 0:
            raise ValueError("step_mu must be positive")
        if not 0 < self.armijo_sigma < 1:
            raise ValueError("armijo_sigma must lie in (0, 1)")
        if not 0 < self.armijo_gamma < 1:
            raise ValueError("armijo_gamma must lie in (0, 1)")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be a positive integer")

    def mu_for(self, prob: VIProblem) -> float:
        return self.step_mu if self.step_mu is not None else 1.0 / float(np.max(prob.alpha))


@dataclass
class SolveTrace:
    iterates: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    search_points: list = field(default_factory=list)
    linesearch_steps: list = field(default_factory=list)
    halfspaces: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0


def _centralized_inner(prob: VIProblem) -> InnerProduct:
    def inner(z, d):
        return float(np.sum(eval_operator_Z(z, prob) * d))

    return inner


def _residual_step(p, slack, prob: VIProblem, mu: float, operator: Operator | None):
    """Displacement r(p) - p, plus Z(p) for reuse."""
    zp = eval_operator_Z(p, prob) if operator is None else operator(p)
    return project_displacement(-mu * zp, p, slack, prob), zp


def natural_residual(p, prob: VIProblem, mu: float, operator: Operator | None = None):
    """Return ``(r, ||r - p||)`` with r = Proj_K(p - mu * Z(p)); zero norm iff ``p`` solves the VI."""
    p = np.asarray(p, dtype=float)
    d, _ = _residual_step(p, prob.budget - float(prob.e @ p), prob, mu, operator)
    return p + d, float(np.linalg.norm(d))


def _armijo(p, step, prob: VIProblem, params: SolverParams, inner: InnerProduct):
    """Backtrack along ``p + theta * step``; returns ``(theta, z, m)``."""
    dd = float(np.sum(step * step))
    if dd == 0.0:
        raise ValueError("line search needs r != p")
    target = params.armijo_sigma / params.mu_for(prob) * dd
    direction = -step
    theta = 1.0
    for m in range(LINESEARCH_MAX_STEPS + 1):
        z = p + theta * step
        if inner(z, direction) >= target:
            return theta, z, m
        theta *= params.armijo_gamma
    raise LineSearchError(f"no acceptable step after {LINESEARCH_MAX_STEPS} backtracks")


def line_search(p, r, prob: VIProblem, params: SolverParams, inner: InnerProduct | None = None):
    """Armijo backtracking from ``r`` toward ``p``; returns ``(z, m)``.

    z = (1 - theta) p + theta r with theta = gamma**m for the least m such that
    <Z(z), p - r> >= (sigma / mu) ||p - r||**2.
    """
    p = np.asarray(p, dtype=float)
    step = np.asarray(r, dtype=float) - p
    inner = _centralized_inner(prob) if inner is None else inner
    _, z, m = _armijo(p, step, prob, params, inner)
    return z, m


def hyperplane_from(z, prob: VIProblem, operator: Operator | None = None) -> HalfSpace:
    """Half-space {q : <Z(z), q - z> <= 0}, which contains every solution."""
    z = np.asarray(z, dtype=float)
    normal = eval_operator_Z(z, prob) if operator is None else operator(z)
    if not np.any(normal):
        raise ValueError("Z(z) = 0: z already solves the problem")
    return HalfSpace(normal, float(np.sum(normal * z)))


def initial_point(prob: VIProblem) -> np.ndarray:
    return project_feasible(0.5 * (prob.lower_bounds + prob.upper_bounds), prob)


def estimate_tau(p, prob: VIProblem, zp=None, rel_tol: float = 1e-9) -> float:
    """Budget multiplier from stationarity: mean of -Z_n(p) / e_n over interior prices.

    ``zp`` is Z(p) if already known (e.g. gathered from the users).
    """
    p = np.asarray(p, dtype=float)
    width = prob.upper_bounds - prob.lower_bounds
    gap = rel_tol * np.maximum(1.0, width)
    interior = (p > prob.lower_bounds + gap) & (p < prob.upper_bounds - gap)
    if not np.any(interior):
        return 0.0
    zp = eval_operator_Z(p, prob) if zp is None else np.asarray(zp, dtype=float)
    return max(0.0, float(np.mean(-zp[interior] / prob.e[interior])))


def make_allocation(p, prob: VIProblem, tol: float, zp=None) -> Allocation:
    p = np.asarray(p, dtype=float)
    payments = p * prob.e
    total = float(np.sum(payments))
    return Allocation(
        prices=p,
        payments=payments,
        benefits=benefits_vector(p, prob.e, prob.alpha, prob.cap),
        tau=estimate_tau(p, prob, zp),
        complete=abs(total - prob.budget) <= tol * max(1.0, prob.budget),
    )


def solve(prob: VIProblem, params: SolverParams | None = None, p0=None, *,
          operator: Operator | None = None, inner: InnerProduct | None = None,
          on_iterate: Callable[[int, np.ndarray], None] | None = None):
    """Run the hyperplane projection method; returns ``(Allocation, SolveTrace)``.

    Raises :class:`ConvergenceError` (carrying both) if ``max_iter`` is hit.
    """
    params = SolverParams() if params is None else params
    mu = params.mu_for(prob)
    p = initial_point(prob) if p0 is None else project_feasible(np.asarray(p0, dtype=float), prob)
    inner = _centralized_inner(prob) if inner is None else inner
    # Work in displacements from p with the budget slack carried as state:
    # near a budget-bound solution the cut depth is O(residual**2) and would
    # vanish under rounding if measured in absolute price coordinates.
    slack = prob.budget - float(prob.e @ p)
    trace = SolveTrace()

    for t in range(int(params.max_iter) + 1):
        step, zp = _residual_step(p, slack, prob, mu, operator)
        res = float(np.linalg.norm(step))
        trace.iterates.append(p)
        trace.residuals.append(res)
        if res <= params.tol:
            trace.converged = True
            break
        if t == params.max_iter:
            break
        theta, z, m = _armijo(p, step, prob, params, inner)
        trace.search_points.append(z)
        trace.linesearch_steps.append(m)
        normal = eval_operator_Z(z, prob) if operator is None else operator(z)
        trace.iterations = t + 1
        if not np.any(normal):
            # z solves the VI exactly
            slack -= float(prob.e @ (theta * step))
            p = z
            if on_iterate is not None:
                on_iterate(t + 1, p)
            continue
        trace.halfspaces.append(HalfSpace(normal, float(np.sum(normal * z))))
        cut = HalfSpace(normal, float(np.sum(normal * (theta * step))))
        d = project_displacement(np.zeros_like(p), p, slack, prob, cut)
        slack -= float(prob.e @ d)
        p = np.clip(p + d, prob.lower_bounds, prob.upper_bounds)
        if on_iterate is not None:
            on_iterate(t + 1, p)
        log.debug("iter %d residual %.3e linesearch m=%d", t + 1, res, m)

    allocation = make_allocation(p, prob, params.tol, zp)
    if not trace.converged:
        raise ConvergenceError(
            f"no convergence in {params.max_iter} iterations (residual {trace.residuals[-1]:.3e})",
            allocation, trace,
        )
    return allocation, trace
