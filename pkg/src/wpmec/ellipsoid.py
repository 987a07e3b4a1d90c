"""Ellipsoid method for maximizing a concave function over a convex set.

The feasible set and objective are both accessed through a single oracle:

    oracle(x) -> FeasibleCut(value, supergradient)   when x is feasible
              -> InfeasibleCut(direction, kind, depth) otherwise

For a feasible point the supergradient s certifies G(y) <= G(x) + s.(y-x),
so the maximizer lies in {y : s.(y-x) >= best - G(x)}.  For an infeasible
point the direction d separates: every feasible y satisfies
d.(y-x) >= depth >= 0.  Either way the ellipsoid is cut through (or beyond)
its center and the minimum-volume enclosing ellipsoid of the kept piece
becomes the next iterate.

With depth 0 this is the classic central-cut update
    center += P a~ / (n+1),   P <- n^2/(n^2-1) (P - 2/(n+1) P a~ a~^T P),
a~ = a / sqrt(a^T P a).  Positive depths give the standard deep-cut
variant, which only shrinks faster; pass deep_cuts=False to force
central cuts.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "FeasibleCut",
    "InfeasibleCut",
    "EllipsoidResult",
    "maximize",
    "dump_trace_csv",
]


@dataclass
class FeasibleCut:
    value: float
    supergradient: np.ndarray


@dataclass
class InfeasibleCut:
    direction: np.ndarray
    kind: str = "infeasible"
    depth: float = 0.0


@dataclass
class EllipsoidResult:
    best_point: np.ndarray | None
    best_value: float
    iterations: int
    status: str
    trace: list = field(default_factory=list)

    @property
    def found_feasible(self) -> bool:
        return self.best_point is not None


def _floor_spd(P: np.ndarray) -> np.ndarray | None:
    """Repair a shape matrix that lost positive definiteness.  Returns None
    when the matrix is beyond repair (non-finite spectrum)."""
    P = np.nan_to_num((P + P.T) / 2.0, nan=0.0, posinf=0.0, neginf=0.0)
    try:
        vals, vecs = np.linalg.eigh(P)
    except np.linalg.LinAlgError:
        return None
    floor = 1e-300 * max(np.trace(P), 1e-300)
    vals = np.maximum(vals, floor)
    return (vecs * vals) @ vecs.T


def maximize(
    oracle: Callable[[np.ndarray], FeasibleCut | InfeasibleCut],
    x0: Sequence[float],
    r0: float | Sequence[float],
    tol: float = 1e-6,
    max_iter: int = 100_000,
    deep_cuts: bool = True,
    stagnation_window: int | None = None,
    stagnation_rtol: float = 1e-9,
    record_trace: bool = False,
    on_iteration: Callable | None = None,
) -> EllipsoidResult:
    """Maximize a concave function given by cut oracles.

    x0 is the initial center; r0 the initial radius (scalar) or
    per-coordinate radii (vector), defining the starting ellipsoid
    diag(r0^2).  Terminates when the current cut's ellipsoid norm
    sqrt(a^T P a) falls below tol (for objective cuts this bounds the
    remaining improvement), when the best value stagnates over
    stagnation_window iterations (default 50 n), or at max_iter.

    Never raises on non-convergence: the result carries a status of
    "converged", "stagnated", "max_iter", "thin_feasible_region",
    "no_feasible_point" or "numerical_breakdown", plus the best feasible
    point seen.
    """
    x = np.array(x0, dtype=float)
    n = x.size
    if n < 1:
        raise ValueError("dimension must be >= 1")
    r = np.broadcast_to(np.asarray(r0, dtype=float), (n,)).copy()
    if np.any(r <= 0) or not np.all(np.isfinite(r)):
        raise ValueError("initial radius must be positive and finite")
    P = np.diag(r**2)
    if stagnation_window is None:
        stagnation_window = 50 * n

    best_x: np.ndarray | None = None
    best_val = -np.inf
    stall_anchor_val = -np.inf
    stall_anchor_evals = 0
    n_objective_evals = 0
    trace: list = []
    status = "max_iter"
    n2 = float(n * n)
    it = 0

    for it in range(1, max_iter + 1):
        cut = oracle(x)
        if isinstance(cut, FeasibleCut):
            val = float(cut.value)
            n_objective_evals += 1
            if val > best_val:
                best_val = val
                best_x = x.copy()
                if not np.isfinite(stall_anchor_val):
                    stall_anchor_val = val
                    stall_anchor_evals = n_objective_evals
            a = np.asarray(cut.supergradient, dtype=float)
            depth = max(0.0, best_val - val) if deep_cuts else 0.0
            kind = "objective"
        else:
            a = np.asarray(cut.direction, dtype=float)
            depth = max(0.0, float(cut.depth)) if deep_cuts else 0.0
            kind = cut.kind

        if not np.any(a):
            # a vanishing supergradient certifies an unconstrained maximum
            status = "converged" if kind == "objective" else "numerical_breakdown"
            if record_trace:
                trace.append((it, best_val, kind))
            break

        g = P @ a
        sa2 = float(a @ g)
        if not np.isfinite(sa2) or sa2 <= 0.0:
            repaired = _floor_spd(P)
            if repaired is None:
                status = "numerical_breakdown"
                break
            P = repaired
            g = P @ a
            sa2 = float(a @ g)
            if not np.isfinite(sa2) or sa2 <= 0.0:
                status = "numerical_breakdown"
                break
        # squared ellipsoid width along the cut; at machine-epsilon widths
        # further cuts are floating-point noise
        if sa2 / float(a @ a) < 1e-60:
            status = "stagnated" if best_x is not None else "numerical_breakdown"
            break
        sa = np.sqrt(sa2)

        if record_trace:
            trace.append((it, best_val, kind))
        if on_iteration is not None:
            on_iteration(it, x, P, best_val)

        # the tol stop applies to objective cuts only: there sqrt(a^T P a)
        # bounds the attainable improvement; feasibility-cut directions have
        # arbitrary constraint units and would stop the search spuriously
        if kind == "objective" and sa <= tol:
            status = "converged"
            break

        alpha = min(depth / sa, 0.999) if depth > 0 else 0.0

        if n == 1:
            # interval bisection: keep the half (or deep-cut piece) on the
            # side the cut points to
            r1 = sa / abs(a[0])
            s = 1.0 if a[0] > 0 else -1.0
            x = x + s * r1 * (1.0 + alpha) / 2.0
            P = np.array([[(r1 * (1.0 - alpha) / 2.0) ** 2]])
            if best_x is not None:
                if best_val > stall_anchor_val + stagnation_rtol * max(1.0, abs(stall_anchor_val)):
                    stall_anchor_val = best_val
                    stall_anchor_evals = n_objective_evals
                elif n_objective_evals - stall_anchor_evals >= stagnation_window:
                    status = "stagnated"
                    break
            continue
        step = (1.0 + n * alpha) / (n + 1.0)
        x = x + step * (g / sa)
        coef = 2.0 * (1.0 + n * alpha) / ((n + 1.0) * (1.0 + alpha))
        P -= (coef / sa2) * np.outer(g, g)
        P *= (n2 / (n2 - 1.0)) * (1.0 - alpha * alpha)
        if it % 512 == 0:
            P = (P + P.T) / 2.0

        # secondary stop: best value stagnates over a long stretch of
        # objective evaluations (feasibility-cut iterations do not count:
        # they carry no value information)
        if best_x is not None:
            if best_val > stall_anchor_val + stagnation_rtol * max(1.0, abs(stall_anchor_val)):
                stall_anchor_val = best_val
                stall_anchor_evals = n_objective_evals
            elif n_objective_evals - stall_anchor_evals >= stagnation_window:
                status = "stagnated"
                break

    if best_x is None:
        status = "no_feasible_point"
    return EllipsoidResult(
        best_point=best_x,
        best_value=best_val,
        iterations=it,
        status=status,
        trace=trace,
    )


def dump_trace_csv(result: EllipsoidResult, path) -> None:
    """Write the iteration trace as CSV (iteration, best_value, cut_kind)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "best_value", "cut_kind"])
        for row in result.trace:
            writer.writerow([row[0], repr(row[1]), row[2]])
