"""Instance generation and Monte-Carlo sweeps over user count or task load.

Channels follow a distance-dependent Rayleigh model: each downlink entry is
circularly-symmetric complex Gaussian with per-entry variance
10^(pathloss_ref_db/10) * d^-pathloss_exponent; the uplink gain is the
squared norm of an independent vector drawn the same way (maximal-ratio
combining across the array).  Arrivals are uniform on [A_min, A_max].
Everything is deterministic given (seed, axis index, trial index).
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .baselines import run_scheme
from .model import (
    ChannelRealization,
    Instance,
    InfeasibleProblem,
    SystemParams,
    TaskArrivals,
)
from .solver import SolverOptions

__all__ = [
    "ExperimentConfig",
    "SweepResult",
    "SweepCell",
    "gen_instance",
    "run_sweep",
    "emit_outputs",
    "read_sweep_csv",
    "ALL_SCHEMES",
]

ALL_SCHEMES = ("joint", "local-only", "full-offload", "myopic", "separate")


@dataclass(frozen=True)
class ExperimentConfig:
    """Simulation setup.  distances may be a scalar (shared by all users,
    with K taken from the axis when sweeping over K) or a per-user list."""

    M: int = 4
    N: int = 10
    tau: float = 0.1
    B: float = 2e6
    sigma2: float = 1e-9
    eta: float = 0.3
    C0: float = 1e3
    Ck: float = 1e3
    zeta0: float = 1e-29
    zetak: float = 1e-28
    pathloss_ref_db: float = -32.0
    pathloss_exponent: float = 3.0
    distances: float | Sequence[float] = 4.0
    A_min: float = 1e5
    A_max: float = 1e6
    trials: int = 50
    seed: int = 0
    axis: str = "K"  # "K" or "A_max"
    values: Sequence[float] = (2, 4, 6, 8)
    schemes: Sequence[str] = ALL_SCHEMES

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.A_min > self.A_max:
            raise ValueError("A_min must be <= A_max")
        if self.axis not in ("K", "A_max"):
            raise ValueError("axis must be 'K' or 'A_max'")
        d = np.atleast_1d(np.asarray(self.distances, dtype=float))
        if np.any(d <= 0):
            raise ValueError("distances must be > 0")
        unknown = set(self.schemes) - set(ALL_SCHEMES)
        if unknown:
            raise ValueError(f"unknown schemes: {sorted(unknown)}")

    def user_distances(self, K: int) -> np.ndarray:
        d = np.atleast_1d(np.asarray(self.distances, dtype=float))
        if d.size == 1:
            return np.full(K, float(d[0]))
        if d.size != K:
            raise ValueError(f"distances has length {d.size}, expected {K}")
        return d

    def resolve_point(self, axis_value: float) -> tuple[int, float]:
        """(K, A_max) at one sweep point."""
        if self.axis == "K":
            return int(axis_value), self.A_max
        d = np.atleast_1d(np.asarray(self.distances, dtype=float))
        K = d.size if d.size > 1 else 1
        return K, float(axis_value)


def gen_instance(cfg: ExperimentConfig, trial_seed, K: int | None = None, A_max: float | None = None) -> Instance:
    """Deterministic random instance.  trial_seed may be an int or a tuple
    (fed to numpy's SeedSequence)."""
    if K is None:
        K, _ = cfg.resolve_point(cfg.values[0] if cfg.axis == "K" else 0)
    if A_max is None:
        A_max = cfg.A_max
    d = cfg.user_distances(K)
    pl = 10.0 ** (cfg.pathloss_ref_db / 10.0) * d**-cfg.pathloss_exponent  # (K,)

    rng = np.random.default_rng(np.random.SeedSequence(trial_seed))
    shape = (K, cfg.N, cfg.M)
    scale = np.sqrt(pl / 2.0)[:, None, None]
    h = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    gvec = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    g = np.sum(np.abs(gvec) ** 2, axis=2)
    A = rng.uniform(cfg.A_min, A_max, size=(K, cfg.N))

    params = SystemParams(
        M=cfg.M,
        K=K,
        N=cfg.N,
        tau=cfg.tau,
        B=cfg.B,
        sigma2=cfg.sigma2,
        zeta0=cfg.zeta0,
        C0=cfg.C0,
        eta_k=np.full(K, cfg.eta),
        zeta_k=np.full(K, cfg.zetak),
        C_k=np.full(K, cfg.Ck),
    )
    return Instance(
        params=params,
        channels=ChannelRealization(h=h, g=g),
        tasks=TaskArrivals(A=A),
    )


@dataclass
class SweepCell:
    axis_value: float
    scheme: str
    mean: float | None  # per-slot AP energy, J; None when no trial succeeded
    stderr: float | None
    n_ok: int
    n_infeasible: int


@dataclass
class SweepResult:
    axis_name: str
    cells: list[SweepCell]

    def cell(self, axis_value: float, scheme: str) -> SweepCell:
        for c in self.cells:
            if c.scheme == scheme and c.axis_value == axis_value:
                return c
        raise KeyError((axis_value, scheme))

    @property
    def axis_values(self) -> list[float]:
        seen: list[float] = []
        for c in self.cells:
            if c.axis_value not in seen:
                seen.append(c.axis_value)
        return seen

    @property
    def schemes(self) -> list[str]:
        seen: list[str] = []
        for c in self.cells:
            if c.scheme not in seen:
                seen.append(c.scheme)
        return seen


def _run_trial(args) -> list[tuple[int, int, str, float | None, str]]:
    """One work item: all schemes on one generated instance.

    Returns rows (axis_index, trial_index, scheme, per_slot_energy|None, reason).
    """
    cfg, opts, axis_idx, trial_idx = args
    axis_value = cfg.values[axis_idx]
    K, A_max = cfg.resolve_point(axis_value)
    inst = gen_instance(cfg, (cfg.seed, axis_idx, trial_idx), K=K, A_max=A_max)
    rows = []
    for scheme in cfg.schemes:
        try:
            rep = run_scheme(scheme, inst, opts)
            rows.append((axis_idx, trial_idx, scheme, rep.primal_objective / cfg.N, ""))
        except InfeasibleProblem as exc:
            rows.append((axis_idx, trial_idx, scheme, None, f"infeasible: {exc}"))
        except Exception as exc:  # scheme failure counts as a lost trial
            rows.append((axis_idx, trial_idx, scheme, None, f"error: {exc}"))
    return rows


def run_sweep(
    cfg: ExperimentConfig,
    opts: SolverOptions | None = None,
    workers: int | None = None,
) -> SweepResult:
    """Monte-Carlo sweep: per-slot AP energy of each scheme, averaged over
    trials, with per-scheme infeasible-trial accounting.

    Trials run as independent work items (parallel across processes when
    workers > 1); results are reduced in sorted order so the outcome does
    not depend on scheduling.
    """
    if workers is None:
        workers = min(os.cpu_count() or 1, cfg.trials * len(cfg.values))
    items = [
        (cfg, opts, ai, ti) for ai in range(len(cfg.values)) for ti in range(cfg.trials)
    ]
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_trial, items, chunksize=1))
    else:
        chunks = [_run_trial(item) for item in items]
    rows = sorted(
        (row for chunk in chunks for row in chunk),
        key=lambda r: (r[0], r[2], r[1]),
    )

    cells = []
    for ai, axis_value in enumerate(cfg.values):
        for scheme in cfg.schemes:
            vals = [r[3] for r in rows if r[0] == ai and r[2] == scheme and r[3] is not None]
            n_bad = sum(1 for r in rows if r[0] == ai and r[2] == scheme and r[3] is None)
            if vals:
                arr = np.asarray(vals)
                mean = float(arr.mean())
                stderr = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
            else:
                mean = None
                stderr = None
            cells.append(
                SweepCell(
                    axis_value=float(axis_value),
                    scheme=scheme,
                    mean=mean,
                    stderr=stderr,
                    n_ok=len(vals),
                    n_infeasible=n_bad,
                )
            )
    return SweepResult(axis_name=cfg.axis, cells=cells)


# ---------------------------------------------------------------------------
# Outputs
# ---------------------------------------------------------------------------

_CSV_HEADER = ["axis_name", "axis_value", "scheme", "mean_J_per_slot", "stderr", "n_ok", "n_infeasible"]


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def emit_outputs(result: SweepResult, out_dir, log_y: bool = False) -> tuple[str, str]:
    """Write sweep.csv and sweep.svg under out_dir; returns their paths.

    The CSV is byte-deterministic for a given result (floats are written
    with repr, which round-trips exactly).
    """
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "sweep.csv")
    svg_path = os.path.join(out_dir, "sweep.svg")

    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_HEADER)
        for c in result.cells:
            writer.writerow(
                [
                    result.axis_name,
                    repr(float(c.axis_value)),
                    c.scheme,
                    _fmt(c.mean),
                    _fmt(c.stderr),
                    c.n_ok,
                    c.n_infeasible,
                ]
            )

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for scheme in result.schemes:
        xs, ys = [], []
        for c in result.cells:
            if c.scheme == scheme and c.mean is not None:
                xs.append(c.axis_value)
                ys.append(c.mean)
        if xs:
            ax.plot(xs, ys, marker="o", label=scheme)
    ax.set_xlabel(result.axis_name)
    ax.set_ylabel("average AP energy per slot (J)")
    if log_y:
        ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(svg_path)
    plt.close(fig)
    return csv_path, svg_path


def read_sweep_csv(path) -> SweepResult:
    """Parse a sweep.csv back into a SweepResult (exact round trip)."""
    cells = []
    axis_name = ""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != _CSV_HEADER:
            raise ValueError(f"unexpected CSV header: {header}")
        for row in reader:
            axis_name = row[0]
            cells.append(
                SweepCell(
                    axis_value=float(row[1]),
                    scheme=row[2],
                    mean=float(row[3]) if row[3] else None,
                    stderr=float(row[4]) if row[4] else None,
                    n_ok=int(row[5]),
                    n_infeasible=int(row[6]),
                )
            )
    return SweepResult(axis_name=axis_name, cells=cells)
