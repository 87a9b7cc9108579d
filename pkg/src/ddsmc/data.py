"""Excitation experiments and the data matrices U0, X0, X1, Z0."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import csvblocks
from .errors import CollectionError, FormatError, InputError
from .plants import (
    STREAM_COLLECTION,
    STREAM_EXCITATION,
    DisturbanceSpec,
    PlantModel,
    draw_disturbances,
    eval_basis,
    make_rng,
    step,
)

DEFAULT_BLOWUP = 1e6


@dataclass(frozen=True)
class ExcitationSpec:
    """Open-loop excitation: ``T`` uniform input samples in ``input_range``.

    ``x0=None`` draws the initial state uniformly in ``[-x0_spread, x0_spread]``
    per component. With ``restarts=True`` every sample starts from such a
    fresh state instead of continuing one trajectory.
    """

    T: int
    input_range: tuple = (-1.0, 1.0)
    x0: tuple | None = None
    seed: int = 0
    restarts: bool = False
    x0_spread: float = 0.1

    def __post_init__(self):
        if int(self.T) != self.T or self.T < 1:
            raise InputError(f"T must be a positive integer, got {self.T}")
        lo, hi = self.bounds(1)
        if np.any(lo > hi):
            raise InputError(f"input_range lower bound exceeds upper bound: {self.input_range}")

    def bounds(self, n_u: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.input_range
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (n_u,))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (n_u,))
        return lo, hi


@dataclass(frozen=True, eq=False)
class DataSet:
    """Data matrices with samples as columns. ``W0`` is simulation-only truth."""

    U0: np.ndarray
    X0: np.ndarray
    X1: np.ndarray
    Z0: np.ndarray
    delta: float
    W0: np.ndarray | None = None

    def __post_init__(self):
        T = self.U0.shape[1]
        for name in ("X0", "X1", "Z0"):
            if getattr(self, name).shape[1] != T:
                raise InputError(f"{name} has {getattr(self, name).shape[1]} columns, expected {T}")
        if self.X0.shape != self.X1.shape:
            raise InputError("X0 and X1 must have the same shape")
        if self.Z0.shape[0] < self.X0.shape[0]:
            raise InputError("Z0 must have at least n_x rows")
        if self.W0 is not None and self.W0.shape[1] != T:
            raise InputError(f"W0 has {self.W0.shape[1]} columns, expected {T}")

    @property
    def T(self) -> int:
        return self.U0.shape[1]

    @property
    def n_x(self) -> int:
        return self.X0.shape[0]

    @property
    def n_z(self) -> int:
        return self.Z0.shape[0]

    def __eq__(self, other):
        if not isinstance(other, DataSet):
            return NotImplemented
        if (self.W0 is None) != (other.W0 is None):
            return False
        same = all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in ("U0", "X0", "X1", "Z0")
        )
        if self.W0 is not None:
            same = same and np.array_equal(self.W0, other.W0)
        return same and self.delta == other.delta

    __hash__ = None


def collect(
    model: PlantModel,
    dist: DisturbanceSpec,
    exc: ExcitationSpec,
    blowup: float = DEFAULT_BLOWUP,
) -> DataSet:
    """Run the excitation experiment on ``model`` and record the data matrices."""
    rng = make_rng(exc.seed, STREAM_EXCITATION)
    lo, hi = exc.bounds(model.n_u)
    T = exc.T

    def fresh_state():
        return rng.uniform(-exc.x0_spread, exc.x0_spread, size=model.n_x)

    if exc.x0 is None:
        x = fresh_state()
    else:
        x = np.asarray(exc.x0, dtype=float).reshape(-1)
        if x.size != model.n_x:
            raise InputError(f"x0 must have dimension {model.n_x}, got {x.size}")
    W = draw_disturbances(dist, T, model.n_w, STREAM_COLLECTION).T

    U0 = np.empty((model.n_u, T))
    X0 = np.empty((model.n_x, T))
    X1 = np.empty((model.n_x, T))
    Z0 = np.empty((model.n_z, T))
    for t in range(T):
        if exc.restarts and t > 0:
            x = fresh_state()
        u = rng.uniform(lo, hi)
        x_next = step(model, x, u, W[:, t])
        if not np.all(np.abs(x_next) <= blowup):
            raise CollectionError(f"trajectory left the blow-up bound {blowup:g} at step {t}", step=t)
        U0[:, t] = u
        X0[:, t] = x
        X1[:, t] = x_next
        Z0[:, t] = eval_basis(model, x)
        x = x_next
    return DataSet(U0=U0, X0=X0, X1=X1, Z0=Z0, delta=float(dist.delta), W0=W)


class Richness(NamedTuple):
    rank: int
    smallest_sv: float
    rich: bool


def richness_check(ds: DataSet, tol: float = 1e-8) -> Richness:
    """Numerical row rank of Z0; singular values below ``tol * s_max`` count as zero."""
    n_z = ds.Z0.shape[0]
    sv = np.linalg.svd(ds.Z0, compute_uv=False)
    # fewer columns than rows: the missing singular values are exactly zero
    sv = np.concatenate([sv, np.zeros(max(0, n_z - sv.size))])
    if sv.size == 0 or sv[0] == 0.0:
        return Richness(0, 0.0, False)
    rank = int(np.sum(sv > tol * sv[0]))
    return Richness(rank, float(sv[n_z - 1]), rank == n_z)


def save_dataset(ds: DataSet, path, timestamp: bool = True) -> None:
    matrices = {"U0": ds.U0, "X0": ds.X0, "X1": ds.X1, "Z0": ds.Z0}
    if ds.W0 is not None:
        matrices["W0_oracle"] = ds.W0
    csvblocks.write(
        path,
        matrices=matrices,
        scalars={"delta": ds.delta, "T": ds.T},
        title="ddsmc dataset",
        timestamp=timestamp,
    )


def load_dataset(path) -> DataSet:
    matrices, scalars, _ = csvblocks.read(path)
    missing = {"U0", "X0", "X1", "Z0"} - set(matrices)
    if missing:
        raise FormatError(f"dataset {path}: missing matrices {sorted(missing)}")
    if "delta" not in scalars:
        raise FormatError(f"dataset {path}: missing scalar 'delta'")
    try:
        ds = DataSet(
            U0=matrices["U0"],
            X0=matrices["X0"],
            X1=matrices["X1"],
            Z0=matrices["Z0"],
            delta=scalars["delta"],
            W0=matrices.get("W0_oracle"),
        )
    except InputError as exc:
        raise FormatError(f"dataset {path}: {exc}") from None
    if "T" in scalars and scalars["T"] != ds.T:
        raise FormatError(f"dataset {path}: header T={scalars['T']:g} but matrices have {ds.T} columns")
    return ds
