"""Independent verification: brute-force grid search, KKT checks, and the
monotone-schedule check.

The grid oracle deliberately avoids the dual machinery of the main solver:
feasible bit schedules are enumerated on a grid, the server schedule and
the minimal transmit energy are closed forms for single-antenna systems
(a greedy waterline over the best channel seen so far, which is the exact
LP solution), and two-user systems fall back to a small linear program.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dual import check_dual_feasible
from .energy import harvest_table, user_energy_table
from .model import DualPoint, Instance, suffix_sums

__all__ = [
    "brute_force_tiny",
    "verify_kkt",
    "check_monotonicity",
    "OracleResult",
    "KktReport",
    "MonotonicityResult",
]

_LN2 = float(np.log(2.0))


@dataclass
class OracleResult:
    objective: float
    L0: np.ndarray  # (N,)
    L: np.ndarray  # (K, N)
    R: np.ndarray  # (K, N)


def _wpt_cost_single_user(inst: Instance, demands: np.ndarray) -> np.ndarray:
    """Minimal transmit energy meeting cumulative demands, K=1, M=1.

    demands: (..., N) cumulative joules.  Each demand increment can be
    delivered in any slot up to its deadline; delivering a joule at slot j
    costs 1/(eta |h_j|^2) transmit joules, so every increment rides the
    best channel seen so far.
    """
    p = inst.params
    hw2 = p.eta_k[0] * np.abs(inst.channels.h[0, :, 0]) ** 2  # (N,)
    best = np.maximum.accumulate(hw2)
    inc = np.diff(np.concatenate([np.zeros(demands.shape[:-1] + (1,)), demands], axis=-1), axis=-1)
    return np.sum(inc / best, axis=-1)


def _wpt_cost_lp(inst: Instance, demands: np.ndarray) -> float:
    """Minimal transmit energy for K >= 2, M = 1, by linear programming."""
    from scipy.optimize import linprog

    p = inst.params
    K, N = p.K, p.N
    hw2 = p.eta_k[:, None] * np.abs(inst.channels.h[:, :, 0]) ** 2  # (K, N)
    # variables: per-slot transmit energies e_j >= 0; user k receives
    # hw2[k, j] e_j; constraints: cumulative receipts >= demands
    Aub = np.zeros((K * N, N))
    bub = np.zeros(K * N)
    for k in range(K):
        for i in range(N):
            Aub[k * N + i, : i + 1] = -hw2[k, : i + 1]
            bub[k * N + i] = -demands[k, i]
    res = linprog(np.ones(N), A_ub=Aub, b_ub=bub, bounds=[(0, None)] * N, method="highs")
    if not res.success:
        return np.inf
    return float(res.fun)


def _server_split_vec(r_slot: np.ndarray, N: int) -> np.ndarray:
    """Exact cubic-optimal server schedules for N <= 3, vectorized.

    r_slot: (..., N) offloaded bits per slot (all users).  The server may
    execute, through slot i, at most the bits offloaded through slot i-1,
    and must finish everything offloaded through slot N-1.  With convex
    symmetric per-slot costs the optimum spreads the total as evenly as
    those prefix caps allow.
    """
    shape = r_slot.shape[:-1]
    L0 = np.zeros(shape + (N,))
    if N == 1:
        return L0
    if N == 2:
        L0[..., 1] = r_slot[..., 0]
        return L0
    total = r_slot[..., 0] + r_slot[..., 1]
    L0[..., 1] = np.minimum(total / 2.0, r_slot[..., 0])
    L0[..., 2] = total - L0[..., 1]
    return L0


def brute_force_tiny(inst: Instance, grid_resolution: int = 32) -> OracleResult:
    """Exhaustive 2-level grid search over bit schedules, K <= 2, N <= 3, M = 1.

    grid_resolution is the target effective points per free bit dimension:
    the coarse pass uses about a quarter of it and one local refinement
    around the incumbent multiplies the effective resolution well past the
    target.  Local bits of the final slot close each user's deadline; the
    server schedule is the exact cubic-optimal spread of the offloaded
    bits; the transmit cost is the exact single-antenna waterline (or a
    small LP for two users, where coarse resolutions are advisable).  The
    returned objective is an upper bound that converges from above as the
    grid refines; all-local schedules are always on the grid, so a
    feasible point always exists.
    """
    p = inst.params
    K, N = p.K, p.N
    if K > 2 or N > 3 or p.M != 1:
        raise ValueError("grid oracle supports K <= 2, N <= 3, M = 1")
    if grid_resolution < 4:
        raise ValueError("grid resolution too coarse")
    A = inst.tasks.A

    if not A.any():
        return OracleResult(0.0, np.zeros(N), np.zeros((K, N)), np.zeros((K, N)))

    # free coordinates per user: L[0..N-2] and R[0..N-2] (final-slot local
    # bits close the deadline; final-slot offloads are zero)
    nfree_per_user = 2 * (N - 1)
    nfree = K * nfree_per_user

    if nfree == 0:  # N == 1: everything local, single point
        L = A.copy()
        demands = np.cumsum(user_energy_table(inst, L, np.zeros((K, N))), axis=1)
        cost = (
            _wpt_cost_single_user(inst, demands[0]) if K == 1 else _wpt_cost_lp(inst, demands)
        )
        return OracleResult(float(cost), np.zeros(N), L, np.zeros((K, N)))

    ca = np.cumsum(A, axis=1)
    # cap both L_i and R_i by the bits that can have arrived by slot i
    hi0 = np.concatenate([np.repeat(ca[k, : N - 1], 2) for k in range(K)])
    lo0 = np.zeros(nfree)

    zc3 = p.zeta_k[:, None] * p.C_k[:, None] ** 3
    off_coef = p.tau * p.sigma2 / inst.channels.g

    def evaluate_grid(lo: np.ndarray, hi: np.ndarray, res: int):
        axes = [np.linspace(lo[d], hi[d], res) for d in range(nfree)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)  # (P, nfree)
        L = np.zeros((pts.shape[0], K, N))
        R = np.zeros((pts.shape[0], K, N))
        for k in range(K):
            base = k * nfree_per_user
            for i in range(N - 1):
                L[:, k, i] = pts[:, base + 2 * i]
                R[:, k, i] = pts[:, base + 2 * i + 1]
        L[:, :, N - 1] = ca[None, :, -1] - L[:, :, : N - 1].sum(axis=2) - R.sum(axis=2)

        feas = np.all(L[:, :, N - 1] >= -1e-9, axis=1)
        cl = np.cumsum(L, axis=2)
        cr = np.cumsum(R, axis=2)
        for i in range(N - 1):
            feas &= np.all(cl[:, :, i] + cr[:, :, i] <= ca[None, :, i] + 1e-9, axis=1)
        if not feas.any():
            return None
        L = np.maximum(L[feas], 0.0)
        R = R[feas]
        pts = pts[feas]

        e = zc3[None] * L**3 / p.tau**2 + off_coef[None] * np.expm1(_LN2 * R / (p.tau * p.B))
        demands = np.cumsum(e, axis=2)  # (Pf, K, N)

        L0s = _server_split_vec(R.sum(axis=1), N)
        server = np.sum(p.zeta0 * p.C0**3 * L0s**3 / p.tau**2, axis=1)

        if K == 1:
            wpt = _wpt_cost_single_user(inst, demands[:, 0, :])
        else:
            wpt = np.array([_wpt_cost_lp(inst, demands[idx]) for idx in range(demands.shape[0])])
        obj = wpt + server
        best = int(np.argmin(obj))
        return float(obj[best]), pts[best], L[best], R[best], L0s[best]

    res = max(4, int(grid_resolution) // 4 + 1)
    out = evaluate_grid(lo0, hi0, res)
    if out is None:
        raise RuntimeError("no feasible grid point at coarse level (must not happen)")
    best_obj, best_pt, bl, br, bl0 = out

    # one local refinement around the incumbent: +-1.5 coarse cells at the
    # same point count, boosting the effective resolution ~10x
    span = (hi0 - lo0) / (res - 1)
    lo1 = np.maximum(best_pt - 1.5 * span, lo0)
    hi1 = np.minimum(best_pt + 1.5 * span, hi0)
    out1 = evaluate_grid(lo1, hi1, res)
    if out1 is not None and out1[0] < best_obj:
        best_obj, best_pt, bl, br, bl0 = out1

    return OracleResult(best_obj, bl0, bl, br)


# ---------------------------------------------------------------------------
# KKT verification
# ---------------------------------------------------------------------------


@dataclass
class KktReport:
    stationarity_local: np.ndarray  # (K, N) relative residuals
    stationarity_offload: np.ndarray  # (K, N-1)
    stationarity_server: np.ndarray  # (N,)
    comp_user_causality: float
    comp_ap_causality: float
    comp_energy: float
    dual_feasible: bool

    @property
    def max_stationarity(self) -> float:
        vals = [self.stationarity_local.max(initial=0.0), self.stationarity_server.max(initial=0.0)]
        if self.stationarity_offload.size:
            vals.append(self.stationarity_offload.max(initial=0.0))
        return float(max(vals))

    @property
    def max_complementarity(self) -> float:
        return max(self.comp_user_causality, self.comp_ap_causality, self.comp_energy)

    def ok(self, tol: float) -> bool:
        return self.dual_feasible and self.max_stationarity <= tol and self.max_complementarity <= tol


def verify_kkt(inst: Instance, report, tol: float = 1e-4) -> KktReport:
    """Stationarity, complementary slackness and dual feasibility checks of
    a solve report's primal/dual pair.

    Stationarity residuals are relative: |derivative| scaled by the sum of
    its terms' magnitudes at interior points; at a zero bit allocation only
    a negative derivative (profitable increase) counts.  Complementarity
    products are scaled by the largest multiplier and residual per family.
    """
    p = inst.params
    alloc = report.allocation
    dual = report.dual_point
    slam = suffix_sums(dual.lam)
    smu = suffix_sums(dual.mu)
    snu = suffix_sums(dual.nu)
    snu_next = np.concatenate([snu[1:], [0.0]])
    tol_bits = 1e-6 * inst.bits_scale

    def rel_station(deriv_pos, deriv_neg, x):
        """deriv = deriv_pos + deriv_neg (pos >= 0, neg <= 0)."""
        scale = np.maximum(deriv_pos - deriv_neg, 1e-300)
        resid = np.abs(deriv_pos + deriv_neg) / scale
        at_zero = x <= tol_bits
        # at the boundary only a strictly negative derivative is a violation
        resid = np.where(at_zero, np.maximum(-(deriv_pos + deriv_neg), 0.0) / scale, resid)
        return resid

    d_loc_pos = 3.0 * slam * p.zeta_k[:, None] * p.C_k[:, None] ** 3 * alloc.L**2 / p.tau**2
    st_local = rel_station(d_loc_pos, smu, alloc.L)

    g = inst.channels.g
    d_off_pos = slam * (p.sigma2 * _LN2 / (g * p.B)) * np.exp2(alloc.R / (p.tau * p.B))
    st_off = rel_station(d_off_pos + np.maximum(smu - snu_next, 0.0),
                         np.minimum(smu - snu_next, 0.0), alloc.R)[:, :-1]

    d_srv_pos = 3.0 * p.zeta0 * p.C0**3 * alloc.L0**2 / p.tau**2
    st_server = rel_station(d_srv_pos, snu, alloc.L0)

    ca = np.cumsum(inst.tasks.A, axis=1)
    cl = np.cumsum(alloc.L, axis=1)
    cr = np.cumsum(alloc.R, axis=1)
    c1 = (ca - cl - cr)[:, :-1]
    mu_ineq = dual.mu[:, :-1]
    comp_user = _comp_scale(mu_ineq, c1)

    cr_prev = np.concatenate([[0.0], np.cumsum(alloc.R.sum(axis=0))[:-1]])
    c6 = (cr_prev - np.cumsum(alloc.L0))[:-1]
    comp_ap = _comp_scale(dual.nu[:-1], c6)

    slack_energy = np.cumsum(harvest_table(inst, alloc.Q), axis=1) - np.cumsum(
        user_energy_table(inst, alloc.L, alloc.R), axis=1
    )
    comp_energy = _comp_scale(dual.lam, slack_energy)

    feasible = check_dual_feasible(inst, dual) is None
    return KktReport(
        stationarity_local=st_local,
        stationarity_offload=st_off,
        stationarity_server=st_server,
        comp_user_causality=comp_user,
        comp_ap_causality=comp_ap,
        comp_energy=comp_energy,
        dual_feasible=feasible,
    )


def _comp_scale(mult: np.ndarray, resid: np.ndarray) -> float:
    mult = np.asarray(mult, dtype=float)
    resid = np.asarray(resid, dtype=float)
    if mult.size == 0:
        return 0.0
    scale = max(float(np.abs(mult).max(initial=0.0)) * float(np.abs(resid).max(initial=0.0)), 1e-300)
    return float(np.abs(mult * resid).max(initial=0.0) / scale) if scale > 1e-299 else 0.0


# ---------------------------------------------------------------------------
# Monotone schedule check
# ---------------------------------------------------------------------------


@dataclass
class MonotonicityResult:
    passed: bool
    entity: str | None = None  # "user k" (1-based) or "ap"
    slot: int | None = None  # first decreasing slot, 1-based

    def __bool__(self) -> bool:
        return self.passed


def check_monotonicity(report, tol_bits: float | None = None) -> MonotonicityResult:
    """Optimal executed bits must be nondecreasing over slots, for every
    user's local schedule and for the server schedule."""
    alloc = report.allocation
    K, N = alloc.L.shape
    if tol_bits is None:
        scale = max(1.0, float(alloc.L.sum() + alloc.R.sum() + alloc.L0.sum()))
        tol_bits = 1e-6 * scale
    for k in range(K):
        d = np.diff(alloc.L[k])
        bad = np.nonzero(d < -tol_bits)[0]
        if bad.size:
            return MonotonicityResult(False, f"user {k + 1}", int(bad[0]) + 2)
    d = np.diff(alloc.L0)
    bad = np.nonzero(d < -tol_bits)[0]
    if bad.size:
        return MonotonicityResult(False, "ap", int(bad[0]) + 2)
    return MonotonicityResult(True)
