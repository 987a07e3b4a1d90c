"""Energy formulas and constraint residuals of the scheduling problem.

All functions are pure and accept scalars or numpy arrays elementwise
where that makes sense.  Residual sign convention: causality residuals
>= 0 mean feasible, deadline residuals must be ~0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Allocation, Instance

__all__ = [
    "local_energy",
    "offload_energy",
    "harvested_energy",
    "server_energy",
    "objective",
    "residuals",
    "user_energy_table",
    "harvest_table",
    "ConstraintReport",
]


def local_energy(zeta, C, L, tau):
    """Joules burned computing L bits locally in one slot of length tau.

    The CPU runs at exactly C*L/tau cycles per second, so the energy is
    zeta * C^3 * L^3 / tau^2 (cubic in the load).
    """
    L = np.asarray(L, dtype=float)
    if np.any(L < 0):
        raise ValueError("bit load L must be >= 0")
    out = zeta * C**3 * L**3 / tau**2
    return out if out.ndim else float(out)

def offload_energy(g, R, tau, B, sigma2):
    """Transmit energy for offloading R bits over bandwidth B in one slot.

    Inverts the AWGN rate formula at rate R/tau over gain g:
    (tau * sigma2 / g) * (2^(R/(tau*B)) - 1).
    """
    g = np.asarray(g, dtype=float)
    if np.any(g <= 0):
        raise ValueError("uplink gain g must be > 0")
    R = np.asarray(R, dtype=float)
    out = (tau * sigma2 / g) * np.expm1(np.log(2.0) * R / (tau * B))
    return out if out.ndim else float(out)

def harvested_energy(Q, h, eta, tau, tol_psd: float = 1e-9):
    """Energy harvested from transmit covariance Q over channel h.

    tau * eta * h^H Q h, real by Hermitian symmetry of Q.  Raises when Q
    is not Hermitian within tol_psd relative asymmetry.
    """
    Q = np.asarray(Q, dtype=complex)
    scale = max(1.0, float(np.abs(Q).max()) if Q.size else 0.0)
    if np.abs(Q - Q.conj().T).max() > tol_psd * scale:
        raise ValueError("covariance matrix must be Hermitian")
    h = np.asarray(h, dtype=complex)
    return float(tau * eta * np.real(h.conj() @ Q @ h))

def server_energy(zeta0, C0, L0, tau):
    """Total server energy over the horizon for per-slot loads L0."""
    L0 = np.asarray(L0, dtype=float)
    if np.any(L0 < 0):
        raise ValueError("server loads must be >= 0")
    return float(np.sum(zeta0 * C0**3 * L0**3 / tau**2))


def user_energy_table(inst: Instance, L: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Per-(user, slot) consumption: local plus offload energy, shape (K, N)."""
    p = inst.params
    e_loc = p.zeta_k[:, None] * p.C_k[:, None] ** 3 * np.asarray(L, float) ** 3 / p.tau**2
    e_off = (p.tau * p.sigma2 / inst.channels.g) * np.expm1(
        np.log(2.0) * np.asarray(R, float) / (p.tau * p.B)
    )
    return e_loc + e_off


def harvest_table(inst: Instance, Q: np.ndarray) -> np.ndarray:
    """Per-(user, slot) harvested energy for per-slot covariances Q (N, M, M)."""
    p = inst.params
    h = inst.channels.h  # (K, N, M)
    quad = np.einsum("knm,nmp,knp->kn", h.conj(), np.asarray(Q, complex), h, optimize=True)
    return p.tau * p.eta_k[:, None] * np.real(quad)


def objective(inst: Instance, alloc: Allocation) -> float:
    """AP energy over the horizon: transmit energy plus server energy."""
    p = inst.params
    tx = p.tau * float(np.real(np.trace(alloc.Q, axis1=1, axis2=2)).sum())
    return tx + server_energy(p.zeta0, p.C0, alloc.L0, p.tau)


@dataclass
class ConstraintReport:
    """Raw residuals of every constraint family, plus nonnegativity checks.

    user_task_causality[k, i] (i < N) and ap_task_causality[i] (i < N) must
    be >= 0; user_deadline[k] and ap_deadline must be ~0;
    energy_causality[k, i] (harvested minus consumed, cumulative) must be
    >= 0.  r_last[k] is the raw value of R[k, N], which must be 0.
    """

    user_task_causality: np.ndarray  # (K, N-1)
    user_deadline: np.ndarray  # (K,)
    ap_task_causality: np.ndarray  # (N-1,)
    ap_deadline: float
    energy_causality: np.ndarray  # (K, N)
    nonneg_violations: list[str]
    r_last: np.ndarray  # (K,)
    bits_scale: float

    def is_feasible(self, causality_tol: float | None = None, equality_tol: float | None = None) -> bool:
        if causality_tol is None:
            causality_tol = 1e-9 * self.bits_scale
        if equality_tol is None:
            equality_tol = 1e-9 * self.bits_scale
        energy_tol = 1e-9 * max(1.0, float(np.abs(self.energy_causality).max(initial=0.0)))
        checks = [
            not self.nonneg_violations,
            self.user_task_causality.min(initial=0.0) >= -causality_tol,
            np.abs(self.user_deadline).max(initial=0.0) <= equality_tol,
            self.ap_task_causality.min(initial=0.0) >= -causality_tol,
            abs(self.ap_deadline) <= equality_tol,
            self.energy_causality.min(initial=0.0) >= -energy_tol,
            np.abs(self.r_last).max(initial=0.0) <= equality_tol,
        ]
        return all(checks)


def residuals(inst: Instance, alloc: Allocation) -> ConstraintReport:
    """Evaluate every constraint of the problem at the given allocation."""
    p = inst.params
    A, L, R, L0 = inst.tasks.A, alloc.L, alloc.R, alloc.L0

    nonneg = []
    for name, arr in (("L", L), ("R", R), ("L0", L0)):
        if np.asarray(arr).min(initial=0.0) < 0:
            nonneg.append(f"{name} has negative entries")
    min_eigs = np.linalg.eigvalsh((alloc.Q + alloc.Q.conj().transpose(0, 2, 1)) / 2.0)[:, 0]
    tr = np.real(np.trace(alloc.Q, axis1=1, axis2=2))
    if np.any(min_eigs < -1e-10 * np.maximum(1.0, tr)):
        nonneg.append("Q has a covariance that is not PSD")

    ca = np.cumsum(A, axis=1)
    cl = np.cumsum(L, axis=1)
    cr = np.cumsum(R, axis=1)
    user_caus = (ca - cl - cr)[:, :-1]  # slots 1..N-1
    user_dead = ca[:, -1] - cl[:, -1] - cr[:, -1]

    cr_all = cr.sum(axis=0)  # cumulative offloaded bits, all users
    cr_prev = np.concatenate([[0.0], cr_all[:-1]])  # through the previous slot
    cl0 = np.cumsum(L0)
    ap_caus = (cr_prev - cl0)[:-1] if p.N > 1 else np.zeros(0)
    ap_dead = float(cr_prev[-1] - cl0[-1]) if p.N > 1 else float(-cl0[-1])

    consumed = np.cumsum(user_energy_table(inst, L, R), axis=1)
    harvested = np.cumsum(harvest_table(inst, alloc.Q), axis=1)
    energy_caus = harvested - consumed

    return ConstraintReport(
        user_task_causality=user_caus,
        user_deadline=user_dead,
        ap_task_causality=ap_caus,
        ap_deadline=ap_dead,
        energy_causality=energy_caus,
        nonneg_violations=nonneg,
        r_last=R[:, -1].copy(),
        bits_scale=inst.bits_scale,
    )
