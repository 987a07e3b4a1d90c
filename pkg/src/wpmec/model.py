"""Domain types for the wireless-powered MEC scheduling problem.

A single access point (AP) with M antennas charges K single-antenna users
over N slots of duration tau.  Users spend harvested energy on local
computing and on offloading task bits to the AP, which executes offloaded
bits on its co-located server.  All quantities live in SI units: seconds,
watts, joules, hertz; task loads are nonnegative real bit counts.

Slots and users are indexed 1..N and 1..K in the public scalar helpers,
matching the usual scheduling convention; array storage is 0-based.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "SystemParams",
    "ChannelRealization",
    "TaskArrivals",
    "Instance",
    "Allocation",
    "DualPoint",
    "ValidationReport",
    "InfeasibleProblem",
    "validate_instance",
    "suffix_sums",
    "wpt_price_matrices",
    "wpt_price_matrix",
    "load_instance",
    "save_instance",
    "instance_to_dict",
    "instance_from_dict",
    "EPS_LAMBDA",
    "TOL_PSD",
]


class InfeasibleProblem(Exception):
    """Raised when a scheduling problem has no feasible allocation."""

# Surrogate for the strict positivity required of suffix-summed energy
# multipliers: the dual feasible set must be closed for the cutting-plane
# solver, so "> 0" becomes ">= EPS_LAMBDA".
EPS_LAMBDA = 1e-12

# Absolute slack allowed when testing Hermitian matrices for positive
# semidefiniteness (the price matrices below are O(1) by construction).
TOL_PSD = 1e-10


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.array(a)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SystemParams:
    """Static system parameters.

    Per-user arrays (eta_k, zeta_k, C_k) have length K.  zeta values are
    effective switched-capacitance coefficients in J*s^2/cycles^3; C values
    are CPU cycles per task input-bit.
    """

    M: int
    K: int
    N: int
    tau: float
    B: float
    sigma2: float
    zeta0: float
    C0: float
    eta_k: np.ndarray
    zeta_k: np.ndarray
    C_k: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "eta_k", _freeze(np.asarray(self.eta_k, dtype=float)))
        object.__setattr__(self, "zeta_k", _freeze(np.asarray(self.zeta_k, dtype=float)))
        object.__setattr__(self, "C_k", _freeze(np.asarray(self.C_k, dtype=float)))


@dataclass(frozen=True)
class ChannelRealization:
    """Per-slot channels: h[k, i] is the complex M-vector downlink channel
    to user k in slot i; g[k, i] is the effective uplink power gain after
    maximal-ratio combining (linear, > 0)."""

    h: np.ndarray  # complex, shape (K, N, M)
    g: np.ndarray  # float, shape (K, N)

    def __post_init__(self):
        object.__setattr__(self, "h", _freeze(np.asarray(self.h, dtype=complex)))
        object.__setattr__(self, "g", _freeze(np.asarray(self.g, dtype=float)))


@dataclass(frozen=True)
class TaskArrivals:
    """A[k, i]: task input-bits arriving at user k at the start of slot i."""

    A: np.ndarray  # float, shape (K, N)

    def __post_init__(self):
        object.__setattr__(self, "A", _freeze(np.asarray(self.A, dtype=float)))


@dataclass(frozen=True)
class Instance:
    """A complete problem instance: parameters, channels and arrivals."""

    params: SystemParams
    channels: ChannelRealization
    tasks: TaskArrivals

    @property
    def total_bits(self) -> float:
        return float(self.tasks.A.sum())

    @property
    def bits_scale(self) -> float:
        """Scale used for bit-valued tolerances."""
        return max(1.0, self.total_bits)


@dataclass(frozen=True)
class Allocation:
    """Primal decision variables.

    Q[i] is the M x M Hermitian transmit energy covariance of slot i (watts);
    L0[i] the bits executed by the AP server in slot i; L[k, i] and R[k, i]
    the bits locally executed and offloaded by user k in slot i.
    """

    Q: np.ndarray  # complex, shape (N, M, M)
    L0: np.ndarray  # float, shape (N,)
    L: np.ndarray  # float, shape (K, N)
    R: np.ndarray  # float, shape (K, N)

    def __post_init__(self):
        object.__setattr__(self, "Q", _freeze(np.asarray(self.Q, dtype=complex)))
        object.__setattr__(self, "L0", _freeze(np.asarray(self.L0, dtype=float)))
        object.__setattr__(self, "L", _freeze(np.asarray(self.L, dtype=float)))
        object.__setattr__(self, "R", _freeze(np.asarray(self.R, dtype=float)))

    @staticmethod
    def zeros(params: SystemParams) -> "Allocation":
        K, N, M = params.K, params.N, params.M
        return Allocation(
            Q=np.zeros((N, M, M), dtype=complex),
            L0=np.zeros(N),
            L=np.zeros((K, N)),
            R=np.zeros((K, N)),
        )


@dataclass(frozen=True)
class DualPoint:
    """Multipliers of the energy/task causality and deadline constraints.

    lam[k, i] >= 0 prices user k's cumulative energy budget through slot i.
    mu[k, i] >= 0 for i < N prices user task causality; mu[k, N] (any sign)
    prices the user deadline equality.  nu[i] >= 0 for i < N prices AP task
    causality; nu[N] (any sign) prices the AP deadline equality.
    """

    lam: np.ndarray  # shape (K, N)
    mu: np.ndarray  # shape (K, N)
    nu: np.ndarray  # shape (N,)

    def __post_init__(self):
        object.__setattr__(self, "lam", _freeze(np.asarray(self.lam, dtype=float)))
        object.__setattr__(self, "mu", _freeze(np.asarray(self.mu, dtype=float)))
        object.__setattr__(self, "nu", _freeze(np.asarray(self.nu, dtype=float)))

    @staticmethod
    def zeros(K: int, N: int) -> "DualPoint":
        return DualPoint(lam=np.zeros((K, N)), mu=np.zeros((K, N)), nu=np.zeros(N))

    def to_vector(self) -> np.ndarray:
        """Flatten as [lam (k-major), mu (k-major), nu]."""
        return np.concatenate([self.lam.ravel(), self.mu.ravel(), self.nu])

    @staticmethod
    def from_vector(x: np.ndarray, K: int, N: int) -> "DualPoint":
        x = np.asarray(x, dtype=float)
        if x.shape != (2 * K * N + N,):
            raise ValueError(f"dual vector must have length {2 * K * N + N}, got {x.shape}")
        return DualPoint(
            lam=x[: K * N].reshape(K, N),
            mu=x[K * N : 2 * K * N].reshape(K, N),
            nu=x[2 * K * N :],
        )


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, message: str) -> None:
        self.violations.append(message)


def validate_instance(inst: Instance) -> ValidationReport:
    """Check every structural invariant of an instance.

    Report-style: returns the full list of violations instead of raising,
    so callers can surface all problems at once.
    """
    rep = ValidationReport()
    p = inst.params
    if p.M < 1:
        rep.add(f"antenna count M must be >= 1, got {p.M}")
    if p.K < 1:
        rep.add(f"user count K must be >= 1, got {p.K}")
    if p.N < 1:
        rep.add(f"slot count N must be >= 1, got {p.N}")
    for name in ("tau", "B", "sigma2", "zeta0", "C0"):
        v = getattr(p, name)
        if not np.isfinite(v) or v <= 0:
            rep.add(f"{name} must be finite and > 0, got {v}")
    for name, lo_open in (("eta_k", True), ("zeta_k", True), ("C_k", True)):
        arr = getattr(p, name)
        if arr.shape != (p.K,):
            rep.add(f"{name} must have shape ({p.K},), got {arr.shape}")
            continue
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            rep.add(f"{name} entries must be finite and > 0")
    if p.eta_k.shape == (p.K,) and np.any(p.eta_k > 1.0):
        rep.add("eta_k entries must be <= 1")

    h, g, A = inst.channels.h, inst.channels.g, inst.tasks.A
    if h.shape != (p.K, p.N, p.M):
        rep.add(f"h must have shape ({p.K}, {p.N}, {p.M}), got {h.shape}")
    elif not np.all(np.isfinite(h.real)) or not np.all(np.isfinite(h.imag)):
        rep.add("h entries must be finite")
    if g.shape != (p.K, p.N):
        rep.add(f"g must have shape ({p.K}, {p.N}), got {g.shape}")
    else:
        if not np.all(np.isfinite(g)):
            rep.add("g entries must be finite")
        elif np.any(g <= 0):
            rep.add("uplink gain nonpositive: g must be > 0 everywhere")
    if A.shape != (p.K, p.N):
        rep.add(f"A must have shape ({p.K}, {p.N}), got {A.shape}")
    else:
        if not np.all(np.isfinite(A)):
            rep.add("A entries must be finite")
        elif np.any(A < 0):
            rep.add("A entries must be >= 0")
    return rep


def suffix_sums(a: np.ndarray, axis: int = -1) -> np.ndarray:
    """suffix_sums(a)[..., i] = sum over j >= i of a[..., j]."""
    a = np.asarray(a, dtype=float)
    return np.flip(np.cumsum(np.flip(a, axis=axis), axis=axis), axis=axis)


def wpt_price_matrices(inst: Instance, dual: DualPoint) -> np.ndarray:
    """Per-slot price matrices of the transmit-covariance subproblem.

    Slot i's matrix is I_M minus the sum over users of the suffix-summed
    energy multipliers weighted by eta_k and the channel outer product
    h_{k,i} h_{k,i}^H.  Hermitian by construction; must stay PSD for the
    dual function to be bounded.  Returns shape (N, M, M).
    """
    p = inst.params
    slam = suffix_sums(dual.lam)  # (K, N)
    h = inst.channels.h  # (K, N, M)
    w = slam * p.eta_k[:, None]  # (K, N)
    acc = np.einsum("kn,knm,knp->nmp", w, h, h.conj(), optimize=True)
    eye = np.eye(p.M, dtype=complex)
    return eye[None, :, :] - acc


def wpt_price_matrix(inst: Instance, dual: DualPoint, i: int) -> np.ndarray:
    """Price matrix of slot i (1-based).  Raises on an out-of-range slot."""
    N = inst.params.N
    if not 1 <= i <= N:
        raise ValueError(f"slot index must be in 1..{N}, got {i}")
    return wpt_price_matrices(inst, dual)[i - 1]


# ---------------------------------------------------------------------------
# JSON serialization.  Complex numbers are stored as [re, im] pairs; key
# names follow the field names of the dataclasses above.
# ---------------------------------------------------------------------------


def _complex_to_pairs(a: np.ndarray):
    return np.stack([a.real, a.imag], axis=-1).tolist()


def _pairs_to_complex(lst) -> np.ndarray:
    arr = np.asarray(lst, dtype=float)
    if arr.shape[-1] != 2:
        raise ValueError("complex entries must be [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def instance_to_dict(inst: Instance) -> dict:
    p = inst.params
    return {
        "params": {
            "M": p.M,
            "K": p.K,
            "N": p.N,
            "tau": p.tau,
            "B": p.B,
            "sigma2": p.sigma2,
            "zeta0": p.zeta0,
            "C0": p.C0,
            "eta_k": p.eta_k.tolist(),
            "zeta_k": p.zeta_k.tolist(),
            "C_k": p.C_k.tolist(),
        },
        "channels": {
            "h": _complex_to_pairs(inst.channels.h),
            "g": inst.channels.g.tolist(),
        },
        "tasks": {"A": inst.tasks.A.tolist()},
    }


def instance_from_dict(doc: dict) -> Instance:
    try:
        par = doc["params"]
        params = SystemParams(
            M=int(par["M"]),
            K=int(par["K"]),
            N=int(par["N"]),
            tau=float(par["tau"]),
            B=float(par["B"]),
            sigma2=float(par["sigma2"]),
            zeta0=float(par["zeta0"]),
            C0=float(par["C0"]),
            eta_k=np.asarray(par["eta_k"], dtype=float),
            zeta_k=np.asarray(par["zeta_k"], dtype=float),
            C_k=np.asarray(par["C_k"], dtype=float),
        )
        channels = ChannelRealization(
            h=_pairs_to_complex(doc["channels"]["h"]),
            g=np.asarray(doc["channels"]["g"], dtype=float),
        )
        tasks = TaskArrivals(A=np.asarray(doc["tasks"]["A"], dtype=float))
    except KeyError as exc:
        raise KeyError(f"missing instance field: {exc}") from exc
    return Instance(params=params, channels=channels, tasks=tasks)


def save_instance(inst: Instance, path) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_dict(inst), fh)


def load_instance(path) -> Instance:
    with open(path) as fh:
        return instance_from_dict(json.load(fh))
