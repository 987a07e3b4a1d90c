"""Joint solver: dual ascent by the ellipsoid method, closed-form primal
recovery, feasibility repair, and beam recovery through the barrier SDP.

The pipeline for one instance:

1. maximize the dual function over (lam, mu, nu) with ellipsoid cuts
   (feasibility cuts from the dual constraint set, objective cuts from the
   dual supergradient);
2. evaluate the closed-form subproblem minimizers at the best dual point
   to recover the bit schedules (L0, L, R), pinning final-slot offloads
   to zero;
3. repair the small constraint violations left by finite dual accuracy so
   the bit schedules satisfy task causality and both deadlines exactly;
4. size the transmit covariances with the barrier SDP against the repaired
   cumulative energy demands;
5. assemble a SolveReport with residuals and the primal/dual gap.

Energy causality never needs repair: the SDP sizes the covariances to the
realized demands, so harvested energy meets consumption by construction.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import ellipsoid
from .dual import DualStructure
from .energy import ConstraintReport, objective as eval_objective, residuals as eval_residuals, server_energy, user_energy_table
from .model import (
    EPS_LAMBDA,
    TOL_PSD,
    Allocation,
    DualPoint,
    Instance,
    validate_instance,
)
from .sdp import solve_wpt_sdp

__all__ = ["SolverOptions", "SolveReport", "solve", "recover_primal", "repair_feasibility", "initial_dual_point"]


@dataclass(frozen=True)
class SolverOptions:
    """Tunables of the solve pipeline; defaults suit desk-scale instances."""

    ellipsoid_tol: float = 1e-6
    max_iter: int | None = None  # None: scale with the dual dimension
    eps_lambda: float = EPS_LAMBDA
    tol_psd: float = TOL_PSD
    deep_cuts: bool = True
    stagnation_window: int | None = None
    sdp_rel_gap: float = 1e-7
    repair_warn_frac: float = 0.01

    def resolved_max_iter(self, n: int) -> int:
        if self.max_iter is not None:
            return self.max_iter
        return max(4000, int(55.0 * n**1.55))


@dataclass
class SolveReport:
    scheme: str
    allocation: Allocation
    primal_objective: float
    dual_value: float
    duality_gap_rel: float
    residuals: ConstraintReport
    iterations: int
    wall_time: float
    repair_applied: bool
    repair_magnitude: float
    repair_warning: bool
    dual_point: DualPoint
    ellipsoid_status: str
    sdp_status: str
    notes: list[str] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        a = self.allocation
        return {
            "scheme": self.scheme,
            "primal_objective": self.primal_objective,
            "dual_value": self.dual_value,
            "duality_gap_rel": self.duality_gap_rel,
            "iterations": self.iterations,
            "wall_time": self.wall_time,
            "repair_applied": self.repair_applied,
            "repair_magnitude": self.repair_magnitude,
            "repair_warning": self.repair_warning,
            "ellipsoid_status": self.ellipsoid_status,
            "sdp_status": self.sdp_status,
            "allocation": {
                "Q": np.stack([a.Q.real, a.Q.imag], axis=-1).tolist(),
                "L0": a.L0.tolist(),
                "L": a.L.tolist(),
                "R": a.R.tolist(),
            },
            "dual_point": {
                "lambda": self.dual_point.lam.tolist(),
                "mu": self.dual_point.mu.tolist(),
                "nu": self.dual_point.nu.tolist(),
            },
            "feasible": self.residuals.is_feasible(),
            "notes": self.notes,
        }


# ---------------------------------------------------------------------------
# Initialization and scaling of the dual search
# ---------------------------------------------------------------------------


def initial_dual_point(inst: Instance, has_nu: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Starting center and per-coordinate radii for the dual ellipsoid.

    The lam start 1/(2 K N eta_k max_i |h_k,i|^2) keeps every price matrix
    strictly positive definite.  Radii are per-block upper bounds on the
    optimal multipliers: energy prices are bounded by the inverse harvest
    efficiency of the worst slot; user bit prices by the local marginal at
    twice the even-spread load (optimal schedules are nondecreasing, so
    their per-slot loads stay near the mean), converted through the same
    harvest chain; server bit prices by the analogous server marginal plus
    the user scale they trade against.
    """
    p = inst.params
    K, N = p.K, p.N
    hw2 = p.eta_k[:, None] * np.sum(np.abs(inst.channels.h) ** 2, axis=2)  # (K, N)
    hw2 = np.maximum(hw2, 1e-300)
    lam0 = 1.0 / (2.0 * K * N * hw2.max(axis=1))  # (K,)
    r_lam = 2.0 / hw2.min(axis=1)  # (K,)

    A = inst.tasks.A
    mean_k = np.maximum(A.sum(axis=1), 1e-6 * max(1.0, A.sum())) / N
    loc_marg = 3.0 * p.zeta_k * p.C_k**3 * (2.0 * mean_k) ** 2 / p.tau**2  # (K,)
    hw2_med = np.median(hw2, axis=1)
    r_mu = 6.0 * loc_marg / hw2_med
    serv_marg = 3.0 * p.zeta0 * p.C0**3 * (2.0 * float(A.sum()) / N) ** 2 / p.tau**2
    r_nu = 6.0 * serv_marg + 0.5 * float(r_mu.max())

    x0 = np.concatenate([np.repeat(lam0, N), np.zeros(K * N), np.zeros(N if has_nu else 0)])
    radii = np.concatenate(
        [np.repeat(r_lam, N), np.repeat(r_mu, N), np.full(N if has_nu else 0, r_nu)]
    )
    return x0, radii


def make_dual_oracle(ds: DualStructure, averager: "MinimizerAverager | None" = None):
    def oracle(x: np.ndarray):
        cut, value, sub, mins = ds.oracle_eval(x)
        if cut is not None:
            return ellipsoid.InfeasibleCut(direction=cut.direction, kind=cut.kind, depth=cut.depth)
        if averager is not None:
            averager.add(value, mins)
        return ellipsoid.FeasibleCut(value=value, supergradient=sub)

    return oracle


class MinimizerAverager:
    """Ergodic primal recovery: average the inner minimizers over the
    near-best feasible dual iterates.

    The dual optimum can sit on a flat ridge (many multiplier vectors share
    the optimal value while their inner minimizers differ wildly, e.g. all
    bits priced into one slot).  Averaging the minimizers across the ridge
    approximates the primal optimum by the saddle-point structure, where a
    single endpoint's minimizers may be an extreme vertex.  Iterates enter
    the average when their value is within rel_window of the incumbent
    best; the accumulator resets whenever the best improves past the
    window, so early wild points never linger.
    """

    def __init__(self, rel_window: float = 5e-3):
        self.rel_window = rel_window
        self.best = -np.inf
        self.count = 0
        self.sums = None
        self.min_admitted = np.inf

    def _threshold(self) -> float:
        return self.best - self.rel_window * max(1.0, abs(self.best))

    def add(self, value: float, mins) -> None:
        if value > self.best:
            self.best = value
            if self.count and self._threshold() > self.min_admitted:
                self.count = 0
                self.sums = None
                self.min_admitted = np.inf
        if value >= self._threshold():
            if self.sums is None:
                self.sums = [np.array(m, dtype=float) for m in mins]
                self.count = 1
            else:
                for acc, m in zip(self.sums, mins):
                    acc += m
                self.count += 1
            self.min_admitted = min(self.min_admitted, value)

    @property
    def average(self):
        if not self.count:
            return None
        return tuple(acc / self.count for acc in self.sums)


# ---------------------------------------------------------------------------
# Primal recovery and repair
# ---------------------------------------------------------------------------


def recover_primal(inst: Instance, dual_opt: DualPoint) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed-form bit schedules (L0, L, R) at a dual point, with final-slot
    offloads pinned to zero."""
    from .dual import subproblem_minimizers

    mins = subproblem_minimizers(inst, dual_opt)
    R = mins.R.copy()
    R[:, -1] = 0.0
    return mins.L0.copy(), mins.L.copy(), R


def _remove_level_capped(x: np.ndarray, amount: float) -> float:
    """Remove `amount` mass from the tail of x by capping at a level,
    preserving a nondecreasing profile.  Returns the mass removed."""
    total = float(x.sum())
    take = min(amount, total)
    if take <= 0.0:
        return 0.0
    lo, hi = 0.0, float(x.max())
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        removed = float(np.maximum(x - mid, 0.0).sum())
        if removed > take:
            lo = mid
        else:
            hi = mid
    np.minimum(x, hi, out=x)
    # absorb the bisection leftover from the last slots
    leftover = take - (total - float(x.sum()))
    for i in range(x.size - 1, -1, -1):
        if leftover <= 0:
            break
        d = min(leftover, x[i])
        x[i] -= d
        leftover -= d
    return take


def repair_feasibility(
    inst: Instance, L0: np.ndarray, L: np.ndarray, R: np.ndarray, allow_local: bool = True
) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Make bit schedules exactly feasible for the task-causality and
    deadline constraints.  Returns (L0, L, R, moved_bits).

    Steps: clip negatives and pin final-slot offloads to zero; shift early
    user bits forward until no prefix executes ahead of arrivals; absorb
    per-user deadline deficits in the final local slot and remove surpluses
    from the latest slots (local bits first, by level-capping so monotone
    profiles stay monotone, then offloads); finally retime the server
    schedule to the repaired offloads the same way.

    allow_local=False keeps the local schedule pinned at zero (for the
    full-offloading variant): deficits then land in the last slot that can
    still be offloaded, which never breaks task causality because final
    arrivals are zero whenever that variant is feasible.
    """
    A = inst.tasks.A
    K, N = A.shape
    L0 = np.asarray(L0, dtype=float).copy()
    L = np.asarray(L, dtype=float).copy()
    R = np.asarray(R, dtype=float).copy()
    moved = 0.0

    moved += float(np.minimum(L0, 0).sum() + np.minimum(L, 0).sum() + np.minimum(R, 0).sum()) * -1.0
    np.maximum(L0, 0.0, out=L0)
    np.maximum(L, 0.0, out=L)
    np.maximum(R, 0.0, out=R)
    moved += float(R[:, -1].sum())
    R[:, -1] = 0.0

    # user prefixes: executing ahead of arrivals shifts bits one slot later
    ca = np.cumsum(A, axis=1)
    for k in range(K):
        run = 0.0
        for i in range(N - 1):
            run += L[k, i] + R[k, i]
            excess = run - ca[k, i]
            if excess > 0:
                take_l = min(excess, L[k, i])
                L[k, i] -= take_l
                L[k, i + 1] += take_l
                rem = excess - take_l
                take_r = 0.0
                if rem > 0:
                    take_r = min(rem, R[k, i])
                    if i + 1 < N - 1:
                        R[k, i] -= take_r
                        R[k, i + 1] += take_r
                    elif allow_local:
                        R[k, i] -= take_r
                        L[k, N - 1] += take_r  # final-slot offloads are forbidden
                    else:
                        take_r = 0.0  # surplus comes off in the totals step
                moved += take_l + take_r
                run -= take_l + take_r

    # user totals: deficits land in the last local slot, surpluses come off
    # the latest slots
    for k in range(K):
        delta = ca[k, -1] - float(L[k].sum() + R[k].sum())
        if delta > 0:
            if allow_local:
                L[k, -1] += delta
            else:
                R[k, N - 2 if N > 1 else 0] += delta
            moved += delta
        elif delta < 0:
            surplus = -delta
            got = _remove_level_capped(L[k], surplus) if allow_local else 0.0
            moved += got
            rest = surplus - got
            for i in range(N - 2, -1, -1):
                if rest <= 0:
                    break
                d = min(rest, R[k, i])
                R[k, i] -= d
                rest -= d
                moved += d

    # server totals and prefixes
    target = float(R[:, :-1].sum())
    delta = target - float(L0.sum())
    if delta > 0:
        L0[-1] += delta
        moved += delta
    elif delta < 0:
        moved += _remove_level_capped(L0, -delta)
    caps = np.concatenate([[0.0], np.cumsum(R.sum(axis=0))[:-1]])  # offloads through i-1
    run = 0.0
    for i in range(N - 1):
        run += L0[i]
        excess = run - caps[i]
        if excess > 0:
            L0[i] -= excess
            L0[i + 1] += excess
            moved += excess
            run -= excess

    return L0, L, R, moved


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------


def _zero_report(inst: Instance, scheme: str, t0: float) -> SolveReport:
    alloc = Allocation.zeros(inst.params)
    x0, _ = initial_dual_point(inst)
    dual = DualPoint.from_vector(x0, inst.params.K, inst.params.N)
    return SolveReport(
        scheme=scheme,
        allocation=alloc,
        primal_objective=0.0,
        dual_value=0.0,
        duality_gap_rel=0.0,
        residuals=eval_residuals(inst, alloc),
        iterations=0,
        wall_time=time.perf_counter() - t0,
        repair_applied=False,
        repair_magnitude=0.0,
        repair_warning=False,
        dual_point=dual,
        ellipsoid_status="skipped_zero_tasks",
        sdp_status="optimal",
    )


def finish_report(
    inst: Instance,
    scheme: str,
    L0: np.ndarray,
    L: np.ndarray,
    R: np.ndarray,
    dual_value: float,
    dual_point: DualPoint,
    iterations: int,
    ellipsoid_status: str,
    opts: SolverOptions,
    t0: float,
    allow_local: bool = True,
    extra_candidates: list | None = None,
) -> SolveReport:
    """Repair bit schedules, size the covariances, and assemble the report.

    extra_candidates is a list of (label, L0, L, R) alternative recoveries
    (e.g. the ergodic average over near-optimal dual iterates); each is
    repaired and priced, and the cheapest feasible schedule wins.  The
    choice is deterministic: ties keep the primary schedule.
    """
    candidates = [("point", L0, L, R)] + list(extra_candidates or [])
    best = None
    for label, c_L0, c_L, c_R in candidates:
        L0r, Lr, Rr, moved = repair_feasibility(inst, c_L0, c_L, c_R, allow_local=allow_local)
        demands = np.cumsum(user_energy_table(inst, Lr, Rr), axis=1)
        sdp_sol = solve_wpt_sdp(inst, demands, rel_gap=opts.sdp_rel_gap)
        primal = sdp_sol.objective + server_energy(
            inst.params.zeta0, inst.params.C0, L0r, inst.params.tau
        )
        if best is None or primal < best[0]:
            best = (primal, label, L0r, Lr, Rr, moved, sdp_sol)
    primal, label, L0r, Lr, Rr, moved, sdp_sol = best

    alloc = Allocation(Q=sdp_sol.Q, L0=L0r, L=Lr, R=Rr)
    gap = (primal - dual_value) / max(primal, 1e-12)
    warn = moved > opts.repair_warn_frac * inst.bits_scale
    notes = [] if label == "point" else [f"primal recovered from {label} minimizers"]
    if warn:
        notes.append(
            f"repair moved {moved:.3g} bits (> {opts.repair_warn_frac:.0%} of total load); "
            "dual tolerance may be too loose"
        )
    return SolveReport(
        scheme=scheme,
        allocation=alloc,
        primal_objective=primal,
        dual_value=dual_value,
        duality_gap_rel=gap,
        residuals=eval_residuals(inst, alloc),
        iterations=iterations,
        wall_time=time.perf_counter() - t0,
        repair_applied=moved > 0,
        repair_magnitude=moved,
        repair_warning=warn,
        dual_point=dual_point,
        ellipsoid_status=ellipsoid_status,
        sdp_status=sdp_sol.status,
        notes=notes,
    )


def solve(inst: Instance, opts: SolverOptions | None = None) -> SolveReport:
    """Jointly optimize covariances, server bits, local bits and offloads.

    Deterministic given (inst, opts).  Never raises on slow dual
    convergence; the ellipsoid status lands in the report.
    """
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    rep = validate_instance(inst)
    if not rep.ok:
        raise ValueError("invalid instance: " + "; ".join(rep.violations))
    if inst.total_bits == 0.0:
        return _zero_report(inst, "joint", t0)

    ds = DualStructure(inst, eps_lambda=opts.eps_lambda, tol_psd=opts.tol_psd)
    x0, radii = initial_dual_point(inst)
    result = ellipsoid.maximize(
        make_dual_oracle(ds),
        x0,
        radii,
        tol=opts.ellipsoid_tol,
        max_iter=opts.resolved_max_iter(ds.n),
        deep_cuts=opts.deep_cuts,
        stagnation_window=opts.stagnation_window,
    )
    xbest = result.best_point if result.best_point is not None else x0
    dual_point = DualPoint.from_vector(xbest, inst.params.K, inst.params.N)
    L0, L, R = recover_primal(inst, dual_point)
    dual_val = result.best_value if np.isfinite(result.best_value) else 0.0
    return finish_report(
        inst,
        "joint",
        L0,
        L,
        R,
        dual_val,
        dual_point,
        result.iterations,
        result.status,
        opts,
        t0,
    )
