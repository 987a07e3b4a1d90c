"""Dense Hermitian eigen-helpers and a barrier solver for beam recovery.

The beam-recovery program: given cumulative energy demands D[k, i] (joules
user k must have harvested by the end of slot i), find per-slot transmit
covariances Q_i >= 0 minimizing total transmit energy

    min  sum_i tau tr(Q_i)
    s.t. sum_{j<=i} tau eta_k h_{k,j}^H Q_j h_{k,j} >= D[k, i]   for all k, i.

Hermitian matrices are handled through an orthonormal real coordinate
basis (diagonal entries, then sqrt(2)-scaled real/imag parts of each
off-diagonal), so the program becomes a linear objective with dense linear
inequalities plus per-slot PSD cone constraints.  It is solved with a
log-det barrier on the cones, a log barrier on the inequality slacks,
damped Newton steps with backtracking, and a geometric barrier schedule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Instance, InfeasibleProblem

__all__ = [
    "min_eig_hermitian",
    "solve_wpt_sdp",
    "sdp_kkt_residuals",
    "SdpSolution",
    "SdpKktReport",
]


def min_eig_hermitian(H: np.ndarray, tol: float = 1e-12) -> tuple[float, np.ndarray]:
    """Smallest eigenvalue and a unit eigenvector of a Hermitian matrix.

    Raises on input whose asymmetry exceeds tol relative to its magnitude.
    """
    H = np.asarray(H, dtype=complex)
    scale = max(float(np.abs(H).max(initial=0.0)), 1e-300)
    if np.abs(H - H.conj().T).max() > tol * scale:
        raise ValueError("matrix is not Hermitian")
    vals, vecs = np.linalg.eigh(H)
    return float(vals[0]), vecs[:, 0]


# ---------------------------------------------------------------------------
# Hermitian <-> real coordinates (orthonormal under the trace inner product)
# ---------------------------------------------------------------------------

_SQRT2 = float(np.sqrt(2.0))


def _herm_basis(M: int) -> np.ndarray:
    """Stack of M^2 Hermitian basis matrices, orthonormal in tr(A B)."""
    mats = []
    for d in range(M):
        E = np.zeros((M, M), dtype=complex)
        E[d, d] = 1.0
        mats.append(E)
    for p in range(M):
        for q in range(p + 1, M):
            E = np.zeros((M, M), dtype=complex)
            E[p, q] = 1.0 / _SQRT2
            E[q, p] = 1.0 / _SQRT2
            mats.append(E)
            E = np.zeros((M, M), dtype=complex)
            E[p, q] = -1j / _SQRT2
            E[q, p] = 1j / _SQRT2
            mats.append(E)
    return np.stack(mats)


def _herm_to_coords(Q: np.ndarray, basis: np.ndarray) -> np.ndarray:
    return np.real(np.einsum("xab,ba->x", basis, Q))


def _coords_to_herm(x: np.ndarray, basis: np.ndarray) -> np.ndarray:
    return np.einsum("x,xab->ab", x, basis)


@dataclass
class SdpSolution:
    Q: np.ndarray  # (N, M, M) Hermitian PSD
    objective: float
    status: str  # "optimal" | "newton_failure"
    gap_estimate: float
    multipliers: np.ndarray  # (K, N), duals of the harvest constraints
    iterations: int


def _cumulative_harvest_rows(inst: Instance, basis: np.ndarray) -> np.ndarray:
    """Constraint gradient matrix, shape (K*N, N*M*M).

    Row (k, i) holds the coordinates of tau eta_k h_{k,j} h_{k,j}^H for
    every slot j <= i, zero for later slots.
    """
    p = inst.params
    K, N, M = p.K, p.N, p.M
    h = inst.channels.h
    per_slot = np.empty((K, N, M * M))
    for k in range(K):
        for j in range(N):
            hh = np.outer(h[k, j], h[k, j].conj())
            per_slot[k, j] = _herm_to_coords(p.tau * p.eta_k[k] * hh, basis)
    rows = np.zeros((K * N, N * M * M))
    for k in range(K):
        for i in range(N):
            for j in range(i + 1):
                rows[k * N + i, j * M * M : (j + 1) * M * M] = per_slot[k, j]
    return rows


def solve_wpt_sdp(
    inst: Instance,
    demands: np.ndarray,
    rel_gap: float = 1e-7,
    feas_tol: float | None = None,
    barrier_factor: float = 10.0,
    max_newton: int = 60,
    newton_tol: float = 1e-10,
) -> SdpSolution:
    """Minimize transmit energy subject to cumulative harvest demands.

    demands has shape (K, N) and must be finite and >= 0 (nondecreasing in
    the slot index for a consistent cumulative demand, though this is not
    required by the solver).  Raises InfeasibleProblem when some user has
    positive demand but zero channel energy through the deadline slot.
    """
    p = inst.params
    K, N, M = p.K, p.N, p.M
    D = np.asarray(demands, dtype=float)
    if D.shape != (K, N):
        raise ValueError(f"demands must have shape ({K}, {N})")
    if not np.all(np.isfinite(D)) or np.any(D < 0):
        raise ValueError("demands must be finite and >= 0")

    if not D.any():
        return SdpSolution(
            Q=np.zeros((N, M, M), dtype=complex),
            objective=0.0,
            status="optimal",
            gap_estimate=0.0,
            multipliers=np.zeros((K, N)),
            iterations=0,
        )

    # strictly feasible start Q_j = alpha I, alpha twice the worst ratio of
    # demand to the harvest an identity covariance would deliver
    hn2 = np.cumsum(np.sum(np.abs(inst.channels.h) ** 2, axis=2), axis=1)  # (K, N)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = D / (p.tau * p.eta_k[:, None] * hn2)
    bad = (D > 0) & ~(hn2 > 0)
    if bad.any():
        k = int(np.argmax(bad.any(axis=1)))
        raise InfeasibleProblem(
            f"user {k + 1} has positive demand but no channel energy by its deadline slot"
        )
    alpha = 2.0 * float(np.nanmax(np.where(D > 0, ratios, 0.0)))

    # work in units of alpha so the starting covariances are ~ identity
    scale = alpha
    Ds = D.ravel() / scale

    basis = _herm_basis(M)
    nvar = N * M * M
    C = _cumulative_harvest_rows(inst, basis)  # (K*N, nvar)
    c_obj = np.zeros(nvar)
    for j in range(N):
        c_obj[j * M * M : j * M * M + M] = p.tau  # diagonal coordinates

    x = np.zeros(nvar)
    for j in range(N):
        x[j * M * M : j * M * M + M] = 1.0  # Q_j = I (scaled units)

    m_total = K * N + N * M

    def blocks(xv):
        return [
            _coords_to_herm(xv[j * M * M : (j + 1) * M * M], basis) for j in range(N)
        ]

    def barrier_value(xv, t):
        s = C @ xv - Ds
        if np.any(s <= 0):
            return np.inf
        val = t * float(c_obj @ xv)
        for Qj in blocks(xv):
            sign, logdet = np.linalg.slogdet(Qj)
            if sign <= 0:
                return np.inf
            val -= logdet
        val -= float(np.sum(np.log(s)))
        return val

    obj0 = float(c_obj @ x)
    t = m_total / max(obj0, 1e-12)
    total_newton = 0
    status = "optimal"

    while True:
        for _ in range(max_newton):
            total_newton += 1
            s = C @ x - Ds
            Qs = blocks(x)
            Qinvs = [np.linalg.inv(Qj) for Qj in Qs]

            grad = t * c_obj - C.T @ (1.0 / s)
            H = C.T @ ((1.0 / s**2)[:, None] * C)
            for j, Qinv in enumerate(Qinvs):
                grad[j * M * M : (j + 1) * M * M] -= _herm_to_coords(Qinv, basis)
                S = np.einsum("ab,xbc,cd->xad", Qinv, basis, Qinv)
                Hb = np.real(np.einsum("xab,yba->xy", S, basis))
                sl = slice(j * M * M, (j + 1) * M * M)
                H[sl, sl] += Hb

            try:
                cho = np.linalg.cholesky(H + 1e-12 * np.trace(H) / nvar * np.eye(nvar))
            except np.linalg.LinAlgError:
                status = "newton_failure"
                break
            dx = -np.linalg.solve(cho.T, np.linalg.solve(cho, grad))
            decrement2 = float(-grad @ dx)
            if decrement2 / 2.0 <= newton_tol:
                break

            # largest step keeping slacks positive
            ds = C @ dx
            neg = ds < 0
            amax = 0.99 * float(np.min(-s[neg] / ds[neg])) if neg.any() else 1.0
            amax = min(amax, 1.0)
            phi0 = barrier_value(x, t)
            a = amax
            gd = float(grad @ dx)
            ok = False
            for _ls in range(60):
                if barrier_value(x + a * dx, t) <= phi0 + 0.25 * a * gd:
                    ok = True
                    break
                a *= 0.5
            if not ok:
                status = "newton_failure"
                break
            x = x + a * dx
        else:
            status = "newton_failure"

        if status == "newton_failure":
            break
        gap = m_total / t
        if gap <= rel_gap * max(abs(float(c_obj @ x)), 1e-12):
            break
        t *= barrier_factor

    s = C @ x - Ds
    mult = 1.0 / (t * np.maximum(s, 1e-300))  # constraint duals, scaled units
    Q = np.stack(blocks(x)) * scale
    obj = float(c_obj @ x) * scale
    return SdpSolution(
        Q=Q,
        objective=obj,
        status=status,
        gap_estimate=(m_total / t) * scale,
        multipliers=mult.reshape(K, N) / scale,
        iterations=total_newton,
    )


@dataclass
class SdpKktReport:
    slacks: np.ndarray  # (K, N) harvest minus demand
    min_eig_Q: np.ndarray  # (N,)
    comp_constraints: np.ndarray  # (K, N) multiplier * slack
    comp_psd: np.ndarray  # (N,) <Z_j, Q_j>
    stationarity: np.ndarray  # (N,) norm of the non-PSD part of tau I - sum(...)
    multipliers: np.ndarray  # (K, N)

    def max_relative_residual(self, objective_scale: float) -> float:
        scale = max(objective_scale, 1e-12)
        vals = [
            float(np.maximum(-self.slacks.min(initial=0.0), 0.0)) / max(1e-12, scale),
            float(np.abs(self.comp_constraints).max(initial=0.0)) / scale,
            float(np.abs(self.comp_psd).max(initial=0.0)) / scale,
            float(self.stationarity.max(initial=0.0)),
        ]
        return max(vals)


def sdp_kkt_residuals(
    inst: Instance,
    demands: np.ndarray,
    Q: np.ndarray,
    multipliers: np.ndarray | None = None,
    active_tol: float = 1e-7,
) -> SdpKktReport:
    """KKT diagnostics of a candidate beam-recovery solution.

    When multipliers are not supplied they are recovered by nonnegative
    least squares from stationarity projected onto the range of each Q_j
    (complementary slackness forces the dual slack to vanish there), with
    inactive harvest constraints pinned to zero.
    """
    from scipy.optimize import nnls

    p = inst.params
    K, N, M = p.K, p.N, p.M
    D = np.asarray(demands, dtype=float)
    Q = np.asarray(Q, dtype=complex)
    h = inst.channels.h

    harvest = np.cumsum(
        p.tau
        * p.eta_k[:, None]
        * np.real(np.einsum("knm,nmp,knp->kn", h.conj(), Q, h, optimize=True)),
        axis=1,
    )
    slacks = harvest - D
    scale = max(1.0, float(np.abs(D).max(initial=0.0)))
    active = slacks <= active_tol * scale

    if multipliers is None:
        # stationarity restricted to range(Q_j): P (tau I - sum_k S_k tau eta h h^H) P = 0
        rows = []
        rhs = []
        cols = np.argwhere(active)  # list of (k, i) allowed nonzero
        for j in range(N):
            vals, vecs = np.linalg.eigh((Q[j] + Q[j].conj().T) / 2.0)
            rng = vecs[:, vals > 1e-8 * max(vals.max(initial=0.0), 1e-300)]
            if rng.shape[1] == 0:
                continue
            Pj = rng @ rng.conj().T
            base = p.tau * Pj  # projected tau I
            target = base
            coeff = []
            for (k, i) in cols:
                if i >= j:  # constraint (k,i) involves slot j iff j <= i
                    hh = np.outer(h[k, j], h[k, j].conj())
                    coeff.append((Pj @ (p.tau * p.eta_k[k] * hh) @ Pj).ravel())
                else:
                    coeff.append(np.zeros(M * M, dtype=complex))
            if coeff:
                Amat = np.stack(coeff, axis=1)
                rows.append(np.concatenate([Amat.real, Amat.imag]))
                rhs.append(np.concatenate([target.ravel().real, target.ravel().imag]))
        mult = np.zeros((K, N))
        if rows and len(cols):
            Amat = np.concatenate(rows)
            bvec = np.concatenate(rhs)
            sol, _ = nnls(Amat, bvec)
            for idx, (k, i) in enumerate(cols):
                mult[k, i] = sol[idx]
    else:
        mult = np.asarray(multipliers, dtype=float)

    smult = np.flip(np.cumsum(np.flip(mult, axis=1), axis=1), axis=1)  # (K, N) suffix sums
    min_eig_Q = np.empty(N)
    comp_psd = np.empty(N)
    stationarity = np.empty(N)
    for j in range(N):
        Qj = (Q[j] + Q[j].conj().T) / 2.0
        min_eig_Q[j] = float(np.linalg.eigvalsh(Qj)[0])
        Zraw = p.tau * np.eye(M, dtype=complex)
        for k in range(K):
            hh = np.outer(h[k, j], h[k, j].conj())
            Zraw -= smult[k, j] * p.tau * p.eta_k[k] * hh
        vals, vecs = np.linalg.eigh(Zraw)
        Z = (vecs * np.maximum(vals, 0.0)) @ vecs.conj().T
        stationarity[j] = float(np.linalg.norm(Zraw - Z) / max(p.tau, 1e-300))
        comp_psd[j] = float(np.real(np.trace(Z @ Qj)))

    return SdpKktReport(
        slacks=slacks,
        min_eig_Q=min_eig_Q,
        comp_constraints=mult * slacks,
        comp_psd=comp_psd,
        stationarity=stationarity,
        multipliers=mult,
    )
