"""Benchmark schemes: restricted variants of the joint design.

Every scheme returns the same SolveReport as the joint solver, tagged with
its name, and every returned allocation is feasible for the original
problem, so each baseline upper-bounds the joint optimum.

* local-only:   no offloading, no server computing (dual over lam, mu);
* full-offload: no local computing (dual over lam, mu, nu); infeasible
  whenever bits arrive in the final slot, since they could not be executed
  before the deadline;
* myopic:       every slot clears its own arrivals with no energy banking,
  split per user at the price equalizing local and offload marginals,
  covariances sized slot by slot;
* separate:     users first minimize their own energy against task
  causality alone, the server then schedules the resulting offloads, and
  the covariances are sized last.
"""

from __future__ import annotations

import time

import numpy as np
from scipy.optimize import brentq

from . import ellipsoid
from .dual import DualStructure
from .model import DualPoint, Instance, InfeasibleProblem, validate_instance
from .sdp import solve_wpt_sdp
from .solver import (
    SolveReport,
    SolverOptions,
    _zero_report,
    finish_report,
    initial_dual_point,
    make_dual_oracle,
)
from .energy import residuals as eval_residuals, server_energy, user_energy_table
from .model import Allocation

__all__ = [
    "solve_local_only",
    "solve_full_offloading",
    "solve_myopic",
    "solve_separate",
    "SCHEMES",
    "run_scheme",
]

_LN2 = float(np.log(2.0))


def _restricted_dual_solve(inst: Instance, opts: SolverOptions, **flags):
    ds = DualStructure(inst, eps_lambda=opts.eps_lambda, tol_psd=opts.tol_psd, **flags)
    x0, radii = initial_dual_point(inst, has_nu=ds.has_nu)
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
    lam, mu, nu = ds.unpack(xbest)
    dual_point = DualPoint(lam=lam, mu=mu, nu=nu)
    slam = np.flip(np.cumsum(np.flip(lam, axis=1), axis=1), axis=1)
    smu = np.flip(np.cumsum(np.flip(mu, axis=1), axis=1), axis=1)
    snu = np.flip(np.cumsum(np.flip(nu)))
    L0, L, R, _ = ds.minimizers_from_suffix(slam, smu, snu)
    R = R.copy()
    R[:, -1] = 0.0
    return L0, L, R, result, dual_point


def solve_local_only(inst: Instance, opts: SolverOptions | None = None) -> SolveReport:
    """All task bits are computed where they arrive; the AP only transmits."""
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    rep = validate_instance(inst)
    if not rep.ok:
        raise ValueError("invalid instance: " + "; ".join(rep.violations))
    if inst.total_bits == 0.0:
        r = _zero_report(inst, "local-only", t0)
        return r
    L0, L, R, result, dual_point = _restricted_dual_solve(
        inst, opts, use_offload=False, use_server=False, has_nu=False
    )
    return finish_report(
        inst,
        "local-only",
        np.zeros(inst.params.N),
        L,
        np.zeros_like(R),
        result.best_value,
        dual_point,
        result.iterations,
        result.status,
        opts,
        t0,
    )


def solve_full_offloading(inst: Instance, opts: SolverOptions | None = None) -> SolveReport:
    """Every task bit is offloaded; local computing is disabled.

    Raises InfeasibleProblem when any user receives bits in the final slot
    (they could not be offloaded and still executed before the deadline).
    """
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    rep = validate_instance(inst)
    if not rep.ok:
        raise ValueError("invalid instance: " + "; ".join(rep.violations))
    if inst.total_bits == 0.0:
        return _zero_report(inst, "full-offload", t0)
    if np.any(inst.tasks.A[:, -1] > 0):
        raise InfeasibleProblem(
            "full offloading cannot finish bits arriving in the final slot"
        )
    L0, L, R, result, dual_point = _restricted_dual_solve(inst, opts, use_local=False)
    return finish_report(
        inst,
        "full-offload",
        L0,
        np.zeros_like(L),
        R,
        result.best_value,
        dual_point,
        result.iterations,
        result.status,
        opts,
        t0,
        allow_local=False,
    )


# ---------------------------------------------------------------------------
# Myopic scheme
# ---------------------------------------------------------------------------


def _split_single_slot(A: float, g: float, tau: float, B: float, sigma2: float, zc3: float):
    """Split one slot's arrivals between local computing and offloading at
    the price where both marginal energies agree (user-energy optimal)."""
    if A <= 0.0:
        return 0.0, 0.0

    def bits_at_price(m: float) -> float:
        loc = np.sqrt(m * tau**2 / (3.0 * zc3))
        ratio = m * g * B / (sigma2 * _LN2)
        off = tau * B * np.log2(ratio) if ratio > 1.0 else 0.0
        return loc + max(off, 0.0)

    m_hi = max(3.0 * zc3 * A**2 / tau**2, (sigma2 * _LN2 / (g * B)) * 2.0 ** (A / (tau * B))) * 2.0
    if bits_at_price(m_hi) < A:  # numerical corner: push the bracket up
        while bits_at_price(m_hi) < A:
            m_hi *= 4.0
    m = brentq(lambda v: bits_at_price(v) - A, 0.0, m_hi, xtol=1e-300, rtol=1e-14)
    loc = float(np.sqrt(m * tau**2 / (3.0 * zc3)))
    loc = min(loc, A)
    return loc, A - loc


def _slot_instance(inst: Instance, i: int) -> Instance:
    from .model import ChannelRealization, SystemParams, TaskArrivals

    p = inst.params
    params = SystemParams(
        M=p.M, K=p.K, N=1, tau=p.tau, B=p.B, sigma2=p.sigma2,
        zeta0=p.zeta0, C0=p.C0, eta_k=p.eta_k, zeta_k=p.zeta_k, C_k=p.C_k,
    )
    ch = ChannelRealization(h=inst.channels.h[:, i : i + 1, :], g=inst.channels.g[:, i : i + 1])
    return Instance(params=params, channels=ch, tasks=TaskArrivals(A=inst.tasks.A[:, i : i + 1]))


def solve_myopic(inst: Instance, opts: SolverOptions | None = None) -> SolveReport:
    """Slot-by-slot design: each slot clears its own arrivals, harvested
    energy is spent in the slot it arrives (no banking), and the server
    executes the previous slot's offloads."""
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    rep = validate_instance(inst)
    if not rep.ok:
        raise ValueError("invalid instance: " + "; ".join(rep.violations))
    p = inst.params
    K, N, M = p.K, p.N, p.M
    if inst.total_bits == 0.0:
        return _zero_report(inst, "myopic", t0)

    L = np.zeros((K, N))
    R = np.zeros((K, N))
    zc3 = p.zeta_k * p.C_k**3
    for i in range(N):
        for k in range(K):
            if i == N - 1:
                L[k, i] = inst.tasks.A[k, i]  # final slot: offloads would expire
            else:
                L[k, i], R[k, i] = _split_single_slot(
                    float(inst.tasks.A[k, i]),
                    float(inst.channels.g[k, i]),
                    p.tau,
                    p.B,
                    p.sigma2,
                    float(zc3[k]),
                )
    L0 = np.concatenate([[0.0], R.sum(axis=0)[:-1]])

    Q = np.zeros((N, M, M), dtype=complex)
    e = user_energy_table(inst, L, R)  # (K, N) per-slot demands
    sdp_iters = 0
    gap_sum = 0.0
    status = "optimal"
    for i in range(N):
        sub = _slot_instance(inst, i)
        sol = solve_wpt_sdp(sub, e[:, i : i + 1], rel_gap=opts.sdp_rel_gap)
        Q[i] = sol.Q[0]
        sdp_iters += sol.iterations
        gap_sum += sol.gap_estimate
        if sol.status != "optimal":
            status = sol.status

    alloc = Allocation(Q=Q, L0=L0, L=L, R=R)
    tx = p.tau * float(np.real(np.trace(Q, axis1=1, axis2=2)).sum())
    primal = tx + server_energy(p.zeta0, p.C0, L0, p.tau)
    dual_val = primal - gap_sum
    return SolveReport(
        scheme="myopic",
        allocation=alloc,
        primal_objective=primal,
        dual_value=dual_val,
        duality_gap_rel=(primal - dual_val) / max(primal, 1e-12),
        residuals=eval_residuals(inst, alloc),
        iterations=sdp_iters,
        wall_time=time.perf_counter() - t0,
        repair_applied=False,
        repair_magnitude=0.0,
        repair_warning=False,
        dual_point=DualPoint.zeros(K, N),
        ellipsoid_status="not_used",
        sdp_status=status,
    )


# ---------------------------------------------------------------------------
# Separate design
# ---------------------------------------------------------------------------


def _per_user_bits(inst: Instance, k: int, opts: SolverOptions):
    """Minimize one user's own energy against task causality and deadline:
    ellipsoid over that user's task multipliers alone."""
    p = inst.params
    N = p.N
    A = inst.tasks.A[k]
    ca = np.cumsum(A)
    zc3 = float(p.zeta_k[k] * p.C_k[k] ** 3)
    g = inst.channels.g[k]
    off_coef = p.tau * p.sigma2 / g

    def minimizers(smu):
        L = np.sqrt(p.tau**2 * np.maximum(-smu, 0.0) / (3.0 * zc3))
        ratio = np.maximum(-smu, 0.0) * p.B * g / (p.sigma2 * _LN2)
        active = ratio > 1.0
        R = np.where(active, p.tau * p.B * np.log2(np.maximum(ratio, 1.0)), 0.0)
        R[-1] = 0.0
        ratio = np.where(active, ratio, 1.0)
        ratio[-1] = 1.0
        return L, R, ratio

    def oracle(x):
        if N > 1 and np.any(x[:-1] < 0):
            i = int(np.argmax(x[:-1] < 0))
            d = np.zeros(N)
            d[i] = 1.0
            return ellipsoid.InfeasibleCut(direction=d, kind="sign", depth=-float(x[i]))
        smu = np.flip(np.cumsum(np.flip(x)))
        L, R, ratio = minimizers(smu)
        value = float(
            np.sum(zc3 * L**3 / p.tau**2 + smu * L + off_coef * (ratio - 1.0) + smu * R)
        ) - float(np.sum(smu * A))
        sub = np.cumsum(L + R - A)
        return ellipsoid.FeasibleCut(value=value, supergradient=sub)

    marg = 3.0 * zc3 * max(float(A.sum()), 1.0) ** 2 / p.tau**2
    result = ellipsoid.maximize(
        oracle,
        np.zeros(N),
        np.full(N, 4.0 * marg + 1.0),
        tol=opts.ellipsoid_tol * max(marg, 1.0) * 1e-6,
        max_iter=opts.resolved_max_iter(N),
        deep_cuts=opts.deep_cuts,
    )
    x = result.best_point if result.best_point is not None else np.zeros(N)
    smu = np.flip(np.cumsum(np.flip(x)))
    L, R, _ = minimizers(smu)
    return L, R, x, result.iterations


def _server_schedule(inst: Instance, R: np.ndarray, opts: SolverOptions):
    """Server bits given offloads: ellipsoid over the AP task multipliers."""
    p = inst.params
    N = p.N
    avail_prev = np.concatenate([[0.0], np.cumsum(R.sum(axis=0))[:-1]])
    zc30 = p.zeta0 * p.C0**3

    def oracle(x):
        if N > 1 and np.any(x[:-1] < 0):
            i = int(np.argmax(x[:-1] < 0))
            d = np.zeros(N)
            d[i] = 1.0
            return ellipsoid.InfeasibleCut(direction=d, kind="sign", depth=-float(x[i]))
        snu = np.flip(np.cumsum(np.flip(x)))
        L0 = np.sqrt(p.tau**2 * np.maximum(-snu, 0.0) / (3.0 * zc30))
        value = float(np.sum(zc30 * L0**3 / p.tau**2 + snu * L0)) - float(np.sum(x * avail_prev))
        return ellipsoid.FeasibleCut(value=value, supergradient=np.cumsum(L0) - avail_prev)

    total = max(float(avail_prev[-1]), 1.0)
    marg = 3.0 * zc30 * total**2 / p.tau**2
    result = ellipsoid.maximize(
        oracle,
        np.zeros(N),
        np.full(N, 4.0 * marg + 1.0),
        tol=opts.ellipsoid_tol * max(marg, 1.0) * 1e-6,
        max_iter=opts.resolved_max_iter(N),
        deep_cuts=opts.deep_cuts,
    )
    x = result.best_point if result.best_point is not None else np.zeros(N)
    snu = np.flip(np.cumsum(np.flip(x)))
    L0 = np.sqrt(p.tau**2 * np.maximum(-snu, 0.0) / (3.0 * zc30))
    return L0, x, result.iterations


def solve_separate(inst: Instance, opts: SolverOptions | None = None) -> SolveReport:
    """Users schedule for their own energy, the server then schedules the
    offloads, and the covariances are sized last against the resulting
    demands (no coupling between transmit design and user scheduling)."""
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    rep = validate_instance(inst)
    if not rep.ok:
        raise ValueError("invalid instance: " + "; ".join(rep.violations))
    p = inst.params
    K, N = p.K, p.N
    if inst.total_bits == 0.0:
        return _zero_report(inst, "separate", t0)

    L = np.zeros((K, N))
    R = np.zeros((K, N))
    mu = np.zeros((K, N))
    iters = 0
    for k in range(K):
        L[k], R[k], mu[k], it = _per_user_bits(inst, k, opts)
        iters += it
    L0, nu, it = _server_schedule(inst, R, opts)
    iters += it

    report = finish_report(
        inst,
        "separate",
        L0,
        L,
        R,
        0.0,
        DualPoint(lam=np.zeros((K, N)), mu=mu, nu=nu),
        iters,
        "per_user_then_server",
        opts,
        t0,
    )
    # the staged design has no joint dual bound; report the achieved value
    # minus the beam solver's own gap estimate
    report.dual_value = report.primal_objective * (1.0 - opts.sdp_rel_gap)
    report.duality_gap_rel = (report.primal_objective - report.dual_value) / max(
        report.primal_objective, 1e-12
    )
    return report


SCHEMES = {
    "joint": None,  # filled lazily to avoid a circular import
    "local-only": solve_local_only,
    "full-offload": solve_full_offloading,
    "myopic": solve_myopic,
    "separate": solve_separate,
}


def run_scheme(name: str, inst: Instance, opts: SolverOptions | None = None) -> SolveReport:
    """Dispatch a scheme by CLI name."""
    from .solver import solve as joint_solve

    if name == "joint":
        return joint_solve(inst, opts)
    try:
        fn = SCHEMES[name]
    except KeyError:
        raise ValueError(
            f"unknown scheme {name!r}; expected one of {sorted(SCHEMES)}"
        ) from None
    return fn(inst, opts)
