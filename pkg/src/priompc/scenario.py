"""Scenario definitions: zones, priorities, comfort bands, tariffs and synthetic weather.

A :class:`Scenario` keeps only compact, human-editable parameters (time
bands, weather shape, R/C constants).  :meth:`Scenario.profiles` expands
them into per-step arrays for the simulator.  Scenarios round-trip through
TOML files; the builtin ``small3`` and ``large36`` configs ship with the
package.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .thermal import N_DISTURBANCES, Mode, ZoneThermalParams

STRATEGIES = ("centralized", "decentralized", "distributed")
PROTOCOLS = ("auto", "one-to-one", "multi-to-one")
BUILTIN = ("small3", "large36")


class ConfigError(ValueError):
    """Scenario file or field is malformed."""


@dataclass(frozen=True)
class Band:
    """Half-open daily interval [start, end) in hours with an attached value or range."""

    start: float
    end: float
    low: float
    high: float | None = None

    def __post_init__(self):
        if not (0 <= self.start < self.end <= 24):
            raise ConfigError(f"band [{self.start}, {self.end}) outside 0..24 h")

    def contains(self, hour: np.ndarray) -> np.ndarray:
        return (hour >= self.start) & (hour < self.end)

    def to_list(self) -> list:
        return [float(v) for v in (self.start, self.end, self.low)] + ([] if self.high is None else [float(self.high)])

    @classmethod
    def from_list(cls, item: Sequence) -> "Band":
        if len(item) not in (3, 4):
            raise ConfigError(f"band must be [start, end, value] or [start, end, low, high], got {item!r}")
        return cls(*(float(v) for v in item))


# time-of-use tariff (CNY/kWh)
PRICE_BANDS = (
    Band(0.0, 8.0, 0.3358),
    Band(8.0, 14.0, 0.6629),
    Band(14.0, 17.0, 1.0881),
    Band(17.0, 19.0, 0.6629),
    Band(19.0, 22.0, 1.0881),
    Band(22.0, 24.0, 0.6629),
)


def comfort_bands(widen: float) -> tuple[Band, ...]:
    """Occupied-hours comfort bands; ``widen`` shifts every upper limit (degC)."""
    return (
        Band(10, 14, 22.0, 24.0 + widen),
        Band(14, 17, 22.0, 25.0 + widen),
        Band(17, 19, 22.0, 24.0 + widen),
        Band(19, 20, 22.0, 25.0 + widen),
    )


@dataclass(frozen=True)
class WeatherSpec:
    """Deterministic diurnal cooling-season weather and internal gains.

    Outdoor air follows ``mean + amplitude * cos(2 pi (h - peak_hour) / 24)``.
    Solar gains on the outside wall surfaces are clipped half-sines: east
    06-14 h, south 06-18 h, west 10-18 h, none on the north wall.
    """

    t_mean: float = 25.0
    t_amplitude: float = 6.0
    peak_hour: float = 15.0
    solar_east: float = 250.0
    solar_south: float = 200.0
    solar_west: float = 250.0
    solar_zone: float = 100.0
    occupant_density: float = 1.0 / 12.0  # people per m2
    occupant_gain: float = 100.0  # W per person
    lighting: float = 0.75  # W/m2
    equipment: float = 0.4  # W/m2
    t_noise: float = 0.0  # std of additive outdoor temperature noise, degC

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class ZoneSpec:
    name: str
    priority: int
    comfort: tuple[Band, ...]
    params: ZoneThermalParams = field(default_factory=ZoneThermalParams.reference)
    floor_area: float = 36.0

    def __post_init__(self):
        if self.priority < 1:
            raise ConfigError(f"zone {self.name}: priority levels start at 1")
        if self.floor_area <= 0:
            raise ConfigError(f"zone {self.name}: floor area must be > 0")
        for band in self.comfort:
            if band.high is None or band.low > band.high:
                raise ConfigError(f"zone {self.name}: comfort band needs low <= high")


@dataclass(frozen=True)
class Profiles:
    """Per-step arrays covering ``n_steps = K + P`` sampling instants.

    Index ``k`` refers to time ``k * dt``.  ``w`` holds the raw disturbance
    vectors (zone, step, 10).
    """

    hours: np.ndarray
    w: np.ndarray
    y_min: np.ndarray
    y_max: np.ndarray
    occupied: np.ndarray
    price: np.ndarray
    cap: np.ndarray


@dataclass(frozen=True)
class Scenario:
    name: str
    zones: tuple[ZoneSpec, ...]
    theta: tuple[float, ...] = (1.0, 0.1, 0.01)
    cap: float | tuple[float, ...] = 800.0
    alpha: float = 1e6
    horizon: int = 8
    days: float = 7.0
    dt: float = 900.0
    u_min: float = 0.0
    u_max: float = 1500.0
    occupancy: tuple[float, float] = (10.0, 20.0)
    prices: tuple[Band, ...] = PRICE_BANDS
    weather: WeatherSpec = field(default_factory=WeatherSpec)
    mode: str = "cooling"
    initial_temperature: float = 28.0
    strategy: str = "distributed"
    protocol: str = "auto"
    mismatch: float = 0.0
    plant_noise: float = 0.0
    seed: int = 0
    adjacency: tuple[tuple[int, int, int], ...] = ()

    def __post_init__(self):
        zones = tuple(self.zones)
        object.__setattr__(self, "zones", zones)
        if not zones:
            raise ConfigError("scenario needs at least one zone")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; choose from {', '.join(STRATEGIES)}")
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}; choose from {', '.join(PROTOCOLS)}")
        Mode(self.mode)
        levels = sorted({z.priority for z in zones})
        if levels != list(range(1, len(levels) + 1)):
            raise ConfigError(f"priority levels must be 1..N_o without gaps, got {levels}")
        theta = tuple(float(t) for t in self.theta)
        object.__setattr__(self, "theta", theta)
        if len(theta) < len(levels):
            raise ConfigError(f"need a weight per priority level ({len(levels)}), got {len(theta)}")
        if any(t <= 0 for t in theta) or any(a < b for a, b in zip(theta, theta[1:])):
            raise ConfigError("priority weights must be positive and non-increasing")
        if self.horizon < 1 or self.days <= 0 or self.dt <= 0:
            raise ConfigError("horizon, days and dt must be positive")
        if not (0 <= self.u_min <= self.u_max):
            raise ConfigError("need 0 <= u_min <= u_max")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if isinstance(self.cap, (list, tuple)):
            cap = tuple(float(c) for c in self.cap)
            if len(cap) < self.n_steps + self.horizon:
                raise ConfigError(f"cap profile needs >= {self.n_steps + self.horizon} entries, got {len(cap)}")
            object.__setattr__(self, "cap", cap)
            if min(cap) < 0:
                raise ConfigError("cap must be >= 0")
        elif self.cap < 0:
            raise ConfigError("cap must be >= 0")
        for m, wall, j in self.adjacency:
            if m == j or not (0 <= m < len(zones) and 0 <= j < len(zones) and 0 <= wall < 4):
                raise ConfigError(f"bad adjacency entry {(m, wall, j)}")

    # ------------------------------------------------------------------
    @property
    def n_zones(self) -> int:
        return len(self.zones)

    @property
    def n_steps(self) -> int:
        """Closed-loop duration K in sampling steps."""
        return int(round(self.days * 86400.0 / self.dt))

    @property
    def priorities(self) -> tuple[int, ...]:
        return tuple(z.priority for z in self.zones)

    @property
    def n_levels(self) -> int:
        return max(self.priorities)

    def zone_theta(self) -> np.ndarray:
        return np.array([self.theta[z.priority - 1] for z in self.zones])

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)

    def profiles(self, n_steps: int | None = None) -> Profiles:
        n = (self.n_steps if n_steps is None else n_steps) + self.horizon
        hours = (np.arange(n) * self.dt / 3600.0) % 24.0
        wx = self.weather
        rng = np.random.default_rng(self.seed)
        t_out = wx.t_mean + wx.t_amplitude * np.cos(2 * math.pi * (hours - wx.peak_hour) / 24.0)
        if wx.t_noise > 0:
            t_out = t_out + rng.normal(0.0, wx.t_noise, n)

        def half_sine(start, end):
            return np.where((hours >= start) & (hours <= end), np.sin(math.pi * (hours - start) / (end - start)), 0.0)

        solar = np.stack([
            np.zeros(n),
            wx.solar_east * half_sine(6, 14),
            wx.solar_west * half_sine(10, 18),
            wx.solar_south * half_sine(6, 18),
        ], axis=1)
        q_zone_solar = wx.solar_zone * half_sine(6, 18)
        occ_start, occ_end = self.occupancy
        occupied = ((hours >= occ_start) & (hours < occ_end)).astype(float)

        N = self.n_zones
        w = np.zeros((N, n, N_DISTURBANCES))
        y_min = np.full((N, n), -np.inf)
        y_max = np.full((N, n), np.inf)
        for m, zone in enumerate(self.zones):
            w[m, :, 0:4] = t_out[:, None]
            w[m, :, 4:8] = solar
            density = wx.occupant_density * wx.occupant_gain + wx.lighting + wx.equipment
            w[m, :, 8] = occupied * density * zone.floor_area
            w[m, :, 9] = q_zone_solar
            for band in zone.comfort:
                inside = band.contains(hours)
                y_min[m, inside] = band.low
                y_max[m, inside] = band.high

        price = np.full(n, np.nan)
        for band in self.prices:
            price[band.contains(hours)] = band.low
        if np.isnan(price).any():
            raise ConfigError("price bands do not cover the whole day")
        if isinstance(self.cap, tuple):
            cap = np.asarray(self.cap[:n], float)
            if len(cap) < n:
                raise ConfigError(f"cap profile shorter than {n} steps")
        else:
            cap = np.full(n, float(self.cap))
        # a zone is only penalised while occupied; "no limit" hours carry no band
        occ = np.broadcast_to(occupied, (N, n)).copy()
        return Profiles(hours, w, y_min, y_max, occ, price, cap)

    # ------------------------------------------------------------------
    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "strategy": self.strategy,
            "protocol": self.protocol,
            "theta": list(self.theta),
            "cap": list(self.cap) if isinstance(self.cap, tuple) else self.cap,
            "alpha": self.alpha,
            "horizon": self.horizon,
            "days": self.days,
            "dt": self.dt,
            "u_min": self.u_min,
            "u_max": self.u_max,
            "occupancy": list(self.occupancy),
            "mode": self.mode,
            "initial_temperature": self.initial_temperature,
            "mismatch": self.mismatch,
            "plant_noise": self.plant_noise,
            "seed": self.seed,
            "prices": [b.to_list() for b in self.prices],
            "adjacency": [list(a) for a in self.adjacency],
            "weather": self.weather.to_dict(),
            "zones": [
                {
                    "name": z.name,
                    "priority": z.priority,
                    "floor_area": z.floor_area,
                    "comfort": [b.to_list() for b in z.comfort],
                    "params": z.params.to_dict(),
                }
                for z in self.zones
            ],
        }
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "Scenario":
        try:
            zones = tuple(
                ZoneSpec(
                    name=str(z["name"]),
                    priority=int(z["priority"]),
                    comfort=tuple(Band.from_list(b) for b in z.get("comfort", [])),
                    params=ZoneThermalParams.from_dict(z["params"]) if "params" in z else ZoneThermalParams.reference(),
                    floor_area=float(z.get("floor_area", 36.0)),
                )
                for z in data["zones"]
            )
            cap = data.get("cap", 800.0)
            kwargs = dict(
                name=str(data.get("name", "custom")),
                zones=zones,
                theta=tuple(data.get("theta", (1.0, 0.1, 0.01))),
                cap=tuple(cap) if isinstance(cap, list) else float(cap),
                weather=WeatherSpec(**data.get("weather", {})),
                prices=tuple(Band.from_list(b) for b in data["prices"]) if "prices" in data else PRICE_BANDS,
                occupancy=tuple(float(h) for h in data.get("occupancy", (10.0, 20.0))),
                adjacency=tuple(tuple(int(i) for i in a) for a in data.get("adjacency", [])),
            )
            for key, conv in (
                ("alpha", float), ("horizon", int), ("days", float), ("dt", float), ("u_min", float),
                ("u_max", float), ("mode", str), ("initial_temperature", float), ("strategy", str),
                ("protocol", str), ("mismatch", float), ("plant_noise", float), ("seed", int),
            ):
                if key in data:
                    kwargs[key] = conv(data[key])
            return cls(**kwargs)
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid scenario: {exc}") from exc


def dumps(scenario: Scenario) -> str:
    return tomli_w.dumps(scenario.to_dict())


def loads(text: str) -> Scenario:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse scenario file: {exc}") from exc
    return Scenario.from_dict(data)


def load_scenario(source: str | Path) -> Scenario:
    """Load a builtin scenario by name or a TOML file by path."""
    if str(source) in BUILTIN:
        text = resources.files("priompc.scenarios").joinpath(f"{source}.toml").read_text()
        return loads(text)
    path = Path(source)
    if not path.is_file():
        raise ConfigError(f"no builtin scenario or file named {str(source)!r}")
    return loads(path.read_text())


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(dumps(scenario))


# ----------------------------------------------------------------------
def build_small_scale() -> Scenario:
    """Three equal zones, one per priority level, with progressively wider bands."""
    zones = tuple(
        ZoneSpec(name=f"zone{m + 1}", priority=m + 1, comfort=comfort_bands(0.5 * m))
        for m in range(3)
    )
    return Scenario(name="small3", zones=zones, cap=800.0)


def build_large_scale() -> Scenario:
    """Nine floors of four zones; floor 1 first priority, floor 3 second, the rest third."""
    zones = []
    for floor in range(1, 10):
        for col in range(4):
            priority = 1 if floor == 1 else 2 if floor == 3 else 3
            zones.append(ZoneSpec(name=f"{floor}0{col + 1}", priority=priority, comfort=comfort_bands(0.5 * col)))
    return Scenario(name="large36", zones=tuple(zones), cap=800.0 * 36 / 3)


def sufficient_cap(n_zones: int) -> float:
    return 2500.0 * n_zones / 3


def scarce_cap(n_zones: int) -> float:
    return 800.0 * n_zones / 3
