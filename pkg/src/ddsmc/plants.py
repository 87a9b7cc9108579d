"""Discrete-time nonlinear plants of the form

    x(k+1) = A_x x(k) + A_q Q(x(k)) + B u(k) + D w(k)

with a registered nonlinear basis Q. The synthesis side only ever sees basis
evaluations, never ``A_x`` or ``A_q``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InputError, NumericError

BasisFunction = Callable[[np.ndarray], float]

_BASIS_REGISTRY: dict[str, BasisFunction] = {}


def register_basis(name: str):
    """Decorator registering a scalar nonlinear function of the state under ``name``."""

    def wrap(fn: BasisFunction) -> BasisFunction:
        if name in _BASIS_REGISTRY:
            raise ValueError(f"basis function {name!r} already registered")
        _BASIS_REGISTRY[name] = fn
        return fn

    return wrap


def basis_function(name: str) -> BasisFunction:
    try:
        return _BASIS_REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(_BASIS_REGISTRY))
        raise InputError(f"unknown basis function {name!r} (known: {known})") from None


def registered_bases() -> list[str]:
    return sorted(_BASIS_REGISTRY)


@register_basis("sin_x1")
def _sin_x1(x):
    return np.sin(x[0])


@register_basis("sin_x2")
def _sin_x2(x):
    return np.sin(x[1])


@register_basis("exp_neg_x1_times_x1")
def _exp_neg_x1_times_x1(x):
    return np.exp(-x[0]) * x[0]


@register_basis("x1_cubed")
def _x1_cubed(x):
    return x[0] ** 3


@register_basis("x1_sq_x2")
def _x1_sq_x2(x):
    return x[0] ** 2 * x[1]


@dataclass(frozen=True)
class NonlinearBasis:
    """Ordered list of registered nonlinear scalar functions Q(x)."""

    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        for name in self.names:
            basis_function(name)

    @property
    def n_q(self) -> int:
        return len(self.names)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.array([basis_function(name)(x) for name in self.names], dtype=float)


def _as_matrix(name, value, rows=None, cols=None):
    arr = np.array(value, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise InputError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    if rows is not None and arr.shape[0] != rows:
        raise InputError(f"{name} must have {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise InputError(f"{name} must have {cols} columns, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PlantModel:
    """Ground-truth plant. ``t_s`` is metadata; the dynamics are already discrete."""

    A_x: np.ndarray
    A_q: np.ndarray
    B: np.ndarray
    D: np.ndarray
    basis: NonlinearBasis
    t_s: float = 1.0
    name: str = "custom"

    def __post_init__(self):
        A_x = _as_matrix("A_x", self.A_x)
        n_x = A_x.shape[0]
        if A_x.shape[1] != n_x:
            raise InputError(f"A_x must be square, got {A_x.shape}")
        object.__setattr__(self, "A_x", A_x)
        object.__setattr__(self, "A_q", _as_matrix("A_q", self.A_q, n_x, self.basis.n_q))
        object.__setattr__(self, "B", _as_matrix("B", self.B, n_x))
        object.__setattr__(self, "D", _as_matrix("D", self.D, n_x))

    @property
    def n_x(self) -> int:
        return self.A_x.shape[0]

    @property
    def n_q(self) -> int:
        return self.basis.n_q

    @property
    def n_z(self) -> int:
        return self.n_x + self.n_q

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_w(self) -> int:
        return self.D.shape[1]

    @property
    def A(self) -> np.ndarray:
        """The (unknown to synthesis) lifted matrix [A_x, A_q]."""
        return np.hstack([self.A_x, self.A_q])


@dataclass(frozen=True)
class DisturbanceSpec:
    """Componentwise uniform disturbance on [-delta, delta]."""

    delta: float
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.delta) or self.delta < 0:
            raise InputError(f"delta must be finite and >= 0, got {self.delta}")


# Independent random streams derived from one seed.
STREAM_EXCITATION = 0
STREAM_COLLECTION = 1
STREAM_SIMULATION = 2


def make_rng(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, stream)."""
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), int(stream)]))


def draw_disturbances(dist: DisturbanceSpec, count: int, n_w: int, stream: int) -> np.ndarray:
    """``count`` disturbance vectors as an ``(count, n_w)`` array."""
    rng = make_rng(dist.seed, stream)
    return rng.uniform(-dist.delta, dist.delta, size=(count, n_w))


def _check_vector(name, v, n):
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.shape[0] != n:
        raise InputError(f"{name} must have dimension {n}, got {arr.shape[0]}")
    return arr


def eval_basis(model: PlantModel, x) -> np.ndarray:
    """Lifted state Z(x) = [x; Q(x)]."""
    x = _check_vector("x", x, model.n_x)
    return np.concatenate([x, model.basis(x)])


def step(model: PlantModel, x, u, w) -> np.ndarray:
    x = _check_vector("x", x, model.n_x)
    u = _check_vector("u", u, model.n_u)
    w = _check_vector("w", w, model.n_w)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u)) and np.all(np.isfinite(w))):
        raise NumericError("non-finite state, input or disturbance")
    return model.A_x @ x + model.A_q @ model.basis(x) + model.B @ u + model.D @ w


def make_pendulum(t_s=0.1, m0=1.0, length=1.0, g=9.8, mu=0.01) -> PlantModel:
    """Inverted pendulum, x = [angle, angular velocity], u = torque."""
    inertia = m0 * length**2
    return PlantModel(
        A_x=[[1.0, t_s], [0.0, 1.0 - t_s * mu / inertia]],
        A_q=[[0.0], [t_s * g / length]],
        B=[[0.0], [t_s / inertia]],
        D=[[0.0], [t_s]],
        basis=NonlinearBasis(("sin_x1",)),
        t_s=t_s,
        name="pendulum",
    )


def make_cart_spring(t_s=0.02, m0=1.0, k_e=0.33, d_f=1.0) -> PlantModel:
    """Cart on a hardening/softening spring, x = [position, velocity], u = force."""
    return PlantModel(
        A_x=[[1.0, t_s], [0.0, 1.0 - t_s * d_f / m0]],
        A_q=[[0.0], [-t_s * k_e / m0]],
        B=[[0.0], [t_s / m0]],
        D=[[0.0], [t_s]],
        basis=NonlinearBasis(("exp_neg_x1_times_x1",)),
        t_s=t_s,
        name="cart_spring",
    )


BUILTIN_PLANTS: dict[str, Callable[[], PlantModel]] = {
    "pendulum": make_pendulum,
    "cart_spring": make_cart_spring,
}


def plant_to_dict(model: PlantModel) -> dict:
    """Structured form of a plant (matrices as row-major nested lists)."""
    return {
        "name": model.name,
        "t_s": float(model.t_s),
        "A_x": model.A_x.tolist(),
        "A_q": model.A_q.tolist(),
        "B": model.B.tolist(),
        "D": model.D.tolist(),
        "basis": list(model.basis.names),
    }


_PLANT_KEYS = {"name", "t_s", "A_x", "A_q", "B", "D", "basis"}


def plant_from_dict(data: dict) -> PlantModel:
    unknown = set(data) - _PLANT_KEYS
    if unknown:
        raise InputError(f"unknown plant keys: {sorted(unknown)}")
    missing = {"A_x", "A_q", "B", "D", "basis"} - set(data)
    if missing:
        raise InputError(f"missing plant keys: {sorted(missing)}")
    return PlantModel(
        A_x=data["A_x"],
        A_q=data["A_q"],
        B=data["B"],
        D=data["D"],
        basis=NonlinearBasis(tuple(data["basis"])),
        t_s=float(data.get("t_s", 1.0)),
        name=str(data.get("name", "custom")),
    )


def sample_states(box: Sequence[tuple[float, float]], count: int, seed: int) -> np.ndarray:
    """Uniform random states in an axis-aligned box, shape ``(count, n_x)``."""
    lo = np.array([b[0] for b in box], dtype=float)
    hi = np.array([b[1] for b in box], dtype=float)
    return make_rng(seed, 99).uniform(lo, hi, size=(count, lo.size))


__all__ = [
    "NonlinearBasis",
    "PlantModel",
    "DisturbanceSpec",
    "register_basis",
    "registered_bases",
    "basis_function",
    "eval_basis",
    "step",
    "make_pendulum",
    "make_cart_spring",
    "BUILTIN_PLANTS",
    "plant_to_dict",
    "plant_from_dict",
    "draw_disturbances",
    "make_rng",
    "sample_states",
]
