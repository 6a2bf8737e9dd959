"""Lumped RC thermal network for box-shaped zones with four exterior walls.

State layout of one zone (all in degC)::

    [T_z, T_n_wi, T_e_wi, T_w_wi, T_s_wi, T_n_wo, T_e_wo, T_w_wo, T_s_wo]

Each wall has an inside and an outside surface node.  The air node couples
to the inside surfaces through convection, the surfaces couple through the
wall conduction resistance, and the outside surface exchanges heat with the
adjacent outdoor temperature and absorbs solar radiation.

Disturbances are carried as a length-10 vector::

    [T_out_n, T_out_e, T_out_w, T_out_s,
     Q_rad_n, Q_rad_e, Q_rad_w, Q_rad_s,
     Q_internal, Q_zone_solar]
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

ORIENTATIONS = ("n", "e", "w", "s")
N_STATES = 9
N_DISTURBANCES = 10


class Mode(str, Enum):
    HEATING = "heating"
    COOLING = "cooling"

    @property
    def sign(self) -> float:
        return 1.0 if self is Mode.HEATING else -1.0


def _as_orientation_tuple(value, name: str) -> tuple[float, float, float, float]:
    if isinstance(value, Mapping):
        try:
            value = [value[o] for o in ORIENTATIONS]
        except KeyError as exc:
            raise ValueError(f"{name}: missing orientation {exc.args[0]!r}") from None
    out = tuple(float(v) for v in value)
    if len(out) != 4:
        raise ValueError(f"{name}: expected 4 values (n, e, w, s), got {len(out)}")
    return out


@dataclass(frozen=True)
class ZoneThermalParams:
    """R (K/W) and C (J/K) constants of one zone, per wall orientation n, e, w, s.

    ``r_in`` is the inside convection resistance, ``r_wall`` the conduction
    resistance through the wall, ``r_out`` the outside convection resistance
    and ``c_wall`` the capacity lumped at each wall surface node.
    """

    r_in: tuple[float, float, float, float]
    r_wall: tuple[float, float, float, float]
    r_out: tuple[float, float, float, float]
    c_wall: tuple[float, float, float, float]
    c_zone: float

    def __post_init__(self):
        for name in ("r_in", "r_wall", "r_out", "c_wall"):
            values = _as_orientation_tuple(getattr(self, name), name)
            object.__setattr__(self, name, values)
            if not all(np.isfinite(v) and v > 0 for v in values):
                raise ValueError(f"{name} must be finite and > 0, got {values}")
        object.__setattr__(self, "c_zone", float(self.c_zone))
        if not (np.isfinite(self.c_zone) and self.c_zone > 0):
            raise ValueError(f"c_zone must be finite and > 0, got {self.c_zone}")

    @classmethod
    def reference(cls) -> "ZoneThermalParams":
        """Reference office zone (east/west and north/south walls paired)."""
        return cls(
            r_in=(0.0310, 0.0232, 0.0232, 0.0310),
            r_wall=(0.0238, 0.0179, 0.0179, 0.0238),
            r_out=(0.0116, 0.0087, 0.0087, 0.0116),
            c_wall=(8.5e5, 1.1e6, 1.1e6, 8.5e5),
            c_zone=4.8e4,
        )

    def scaled(self, r_factor: float = 1.0, c_factor: float = 1.0) -> "ZoneThermalParams":
        """Copy with every resistance multiplied by ``r_factor`` and capacity by ``c_factor``."""
        mul = lambda t, k: tuple(v * k for v in t)  # noqa: E731
        return replace(
            self,
            r_in=mul(self.r_in, r_factor),
            r_wall=mul(self.r_wall, r_factor),
            r_out=mul(self.r_out, r_factor),
            c_wall=mul(self.c_wall, c_factor),
            c_zone=self.c_zone * c_factor,
        )

    def to_dict(self) -> dict:
        return {
            "r_in": list(self.r_in),
            "r_wall": list(self.r_wall),
            "r_out": list(self.r_out),
            "c_wall": list(self.c_wall),
            "c_zone": self.c_zone,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ZoneThermalParams":
        return cls(**{k: data[k] for k in ("r_in", "r_wall", "r_out", "c_wall", "c_zone")})


@dataclass(frozen=True)
class DisturbanceSample:
    """Exogenous inputs of one zone over one sampling interval."""

    t_out: tuple[float, float, float, float]
    q_rad: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    q_internal: float = 0.0
    q_zone_solar: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "t_out", _as_orientation_tuple(self.t_out, "t_out"))
        object.__setattr__(self, "q_rad", _as_orientation_tuple(self.q_rad, "q_rad"))
        if min(self.q_rad) < 0 or self.q_internal < 0 or self.q_zone_solar < 0:
            raise ValueError("heat gains must be >= 0")

    def vector(self) -> np.ndarray:
        return np.array([*self.t_out, *self.q_rad, self.q_internal, self.q_zone_solar])


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ContinuousZoneModel:
    """``dx/dt = A x + B q + E w`` with heat flux ``q = sign(mode) * u``."""

    A: np.ndarray
    B: np.ndarray
    E: np.ndarray
    mode: Mode = Mode.COOLING

    def d_bar(self, sample: DisturbanceSample | np.ndarray) -> np.ndarray:
        w = sample.vector() if isinstance(sample, DisturbanceSample) else np.asarray(sample, float)
        return self.E @ w

    def derivative(self, x: np.ndarray, u: float, w: np.ndarray) -> np.ndarray:
        return self.A @ x + self.B * (self.mode.sign * u) + self.E @ w


def build_zone_matrices(params: ZoneThermalParams, mode: Mode | str = Mode.COOLING) -> ContinuousZoneModel:
    """Assemble the continuous-time matrices of one zone from its R/C constants."""
    mode = Mode(mode)
    r, rw, ro, cw, cz = params.r_in, params.r_wall, params.r_out, params.c_wall, params.c_zone
    A = np.zeros((N_STATES, N_STATES))
    A[0, 0] = -sum(1.0 / ri for ri in r) / cz
    E = np.zeros((N_STATES, N_DISTURBANCES))
    for i in range(4):
        wi, wo = 1 + i, 5 + i
        A[0, wi] = 1.0 / (cz * r[i])
        A[wi, 0] = 1.0 / (cw[i] * r[i])
        A[wi, wi] = (-r[i] - rw[i]) / (cw[i] * r[i] * rw[i])
        A[wi, wo] = 1.0 / (cw[i] * rw[i])
        A[wo, wi] = 1.0 / (cw[i] * rw[i])
        A[wo, wo] = (-ro[i] - rw[i]) / (cw[i] * ro[i] * rw[i])
        E[wo, i] = 1.0 / (cw[i] * ro[i])
        E[wo, 4 + i] = 1.0 / cw[i]
    E[0, 8] = E[0, 9] = 1.0 / cz
    B = np.zeros(N_STATES)
    B[0] = 1.0 / cz
    return ContinuousZoneModel(_frozen(A), _frozen(B), _frozen(E), mode)


@dataclass(frozen=True)
class DiscreteZoneModel:
    """Sampled zone model ``x+ = A x + B u + d`` with ``d = E w`` held over the step.

    ``B`` already carries the heating/cooling sign, so ``u >= 0`` is always
    input power.
    """

    A: np.ndarray
    B: np.ndarray
    E: np.ndarray
    dt: float
    mode: Mode = Mode.COOLING
    C: np.ndarray = field(default_factory=lambda: _frozen(np.eye(1, N_STATES)[0]))

    n_zones = 1

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    def disturbance(self, w: DisturbanceSample | np.ndarray) -> np.ndarray:
        """Discrete additive term for one step, or for a (T, 10) block of steps."""
        if isinstance(w, DisturbanceSample):
            w = w.vector()
        w = np.asarray(w, float)
        if w.shape[-1] != N_DISTURBANCES:
            raise ValueError(f"disturbance vector must have {N_DISTURBANCES} entries, got {w.shape}")
        return w @ self.E.T

    def step(self, x: np.ndarray, u, d: np.ndarray) -> np.ndarray:
        return step(self, x, u, d)

    def output(self, x: np.ndarray) -> float:
        return float(self.C @ x)


def discretize(model: ContinuousZoneModel, dt: float) -> DiscreteZoneModel:
    """Zero-order-hold sampling of the input and the disturbances."""
    if not dt > 0:
        raise ValueError(f"sampling period must be > 0, got {dt}")
    n = N_STATES
    # exp([[A, I], [0, 0]] dt) = [[Ad, int_0^dt exp(A s) ds], [0, I]]
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = model.A
    M[:n, n:] = np.eye(n)
    Md = scipy.linalg.expm(M * dt)
    Ad, Gamma = Md[:n, :n], Md[:n, n:]
    Bd = Gamma @ model.B * model.mode.sign
    Ed = Gamma @ model.E
    return DiscreteZoneModel(_frozen(Ad), _frozen(Bd), _frozen(Ed), float(dt), model.mode)


def discrete_zone(params: ZoneThermalParams, dt: float = 900.0, mode: Mode | str = Mode.COOLING) -> DiscreteZoneModel:
    return discretize(build_zone_matrices(params, mode), dt)


@dataclass(frozen=True)
class MultiZoneModel:
    """Block-diagonal composition of N zone models.

    ``adjacency`` maps ``(zone, wall)`` with ``wall`` in 0..3 (n, e, w, s) to
    the index of the neighbouring zone whose air temperature replaces the
    outdoor temperature on that wall.  Unlisted walls face ambient air.
    """

    zones: tuple[DiscreteZoneModel, ...]
    adjacency: Mapping[tuple[int, int], int] = field(default_factory=dict)
    A: np.ndarray = field(init=False, repr=False)
    B: np.ndarray = field(init=False, repr=False)
    C: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        zones = tuple(self.zones)
        object.__setattr__(self, "zones", zones)
        if not zones:
            raise ValueError("a multi-zone model needs at least one zone")
        dts = {z.dt for z in zones}
        if len(dts) != 1:
            raise ValueError(f"zones sampled at different periods: {sorted(dts)}")
        for (m, wall), j in self.adjacency.items():
            if not (0 <= m < len(zones) and 0 <= j < len(zones) and 0 <= wall < 4):
                raise ValueError(f"adjacency entry {(m, wall)} -> {j} out of range")
            if m == j:
                raise ValueError(f"zone {m} wall {wall} mapped to its own zone")
        object.__setattr__(self, "A", _frozen(scipy.linalg.block_diag(*[z.A for z in zones])))
        object.__setattr__(self, "B", _frozen(scipy.linalg.block_diag(*[z.B[:, None] for z in zones])))
        object.__setattr__(self, "C", _frozen(scipy.linalg.block_diag(*[z.C[None, :] for z in zones])))

    @property
    def n_zones(self) -> int:
        return len(self.zones)

    @property
    def n_states(self) -> int:
        return N_STATES * self.n_zones

    @property
    def dt(self) -> float:
        return self.zones[0].dt

    def resolve(self, w: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Replace outdoor temperatures of internal walls by neighbour air temperatures.

        ``w`` has shape (N, 10) or (N, T, 10); neighbour values come from the
        current state ``x`` and are held over every time slice.
        """
        if not self.adjacency:
            return w
        w = np.array(w, float)
        for (m, wall), j in self.adjacency.items():
            w[m, ..., wall] = x[N_STATES * j]
        return w

    def disturbance(self, w: np.ndarray, x: np.ndarray | None = None) -> np.ndarray:
        """Stacked additive term: (N, 10) -> (9N,), or (N, T, 10) -> (T, 9N)."""
        w = np.asarray(w, float)
        if w.shape[0] != self.n_zones:
            raise ValueError(f"expected disturbances for {self.n_zones} zones, got {w.shape[0]}")
        if self.adjacency:
            if x is None:
                raise ValueError("adjacent walls need the current state to resolve")
            w = self.resolve(w, x)
        parts = [z.disturbance(w[m]) for m, z in enumerate(self.zones)]
        return np.concatenate(parts, axis=-1)

    def step(self, x: np.ndarray, u, d: np.ndarray) -> np.ndarray:
        return step(self, x, u, d)

    def output(self, x: np.ndarray) -> np.ndarray:
        return self.C @ x


def compose_multizone(
    zones: Sequence[DiscreteZoneModel], adjacency: Mapping[tuple[int, int], int] | None = None
) -> MultiZoneModel:
    return MultiZoneModel(tuple(zones), dict(adjacency or {}))


def step(model: DiscreteZoneModel | MultiZoneModel, x: np.ndarray, u, d: np.ndarray) -> np.ndarray:
    """One sampling step ``A x + B u + d``; pure."""
    x = np.asarray(x, float)
    d = np.asarray(d, float)
    u = np.atleast_1d(np.asarray(u, float))
    n = model.n_states
    if x.shape != (n,) or d.shape != (n,):
        raise ValueError(f"state and disturbance must have shape ({n},), got {x.shape} and {d.shape}")
    if u.shape != (model.n_zones,):
        raise ValueError(f"input must have {model.n_zones} entries, got {u.shape}")
    B = model.B if model.B.ndim == 2 else model.B[:, None]
    return model.A @ x + B @ u + d
