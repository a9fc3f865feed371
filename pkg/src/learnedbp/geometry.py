"""Reconstruction grid, detection geometry and detector directivity.

The measurement setup is a circle of detectors around a square pixel grid.
Three canonical arrangements are supported:

* ``A_limited_view``  -- many detectors on the left half circle,
* ``B_sparse``        -- few detectors equidistant on the full circle,
* ``C_limited_sparse`` -- few detectors on the left half circle,

plus ``custom`` for arbitrary arcs.  All geometry objects are immutable
after construction and safe to share between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

SCENARIO_LABELS = ("A_limited_view", "B_sparse", "C_limited_sparse", "custom")

HALF_CIRCLE_START = 0.5 * math.pi
HALF_CIRCLE_END = 1.5 * math.pi


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ImageGrid:
    """Square pixel grid covering the domain [-extent, extent]^2.

    Pixel (i, j) is centered at
    ``(-extent + (j + 0.5) * h, extent - (i + 0.5) * h)`` with
    ``h = 2 * extent / n``: rows run top to bottom, columns left to right.
    """

    n: int
    extent: float = 1.0

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError(f"grid needs n >= 2 pixels per side, got {self.n}")
        if not self.extent > 0:
            raise ConfigError(f"grid extent must be positive, got {self.extent}")

    @property
    def spacing(self) -> float:
        """Pixel side length."""
        return 2.0 * self.extent / self.n

    def axis_x(self) -> np.ndarray:
        """Column center x-coordinates, increasing."""
        h = self.spacing
        return -self.extent + (np.arange(self.n) + 0.5) * h

    def axis_y(self) -> np.ndarray:
        """Row center y-coordinates, decreasing (row 0 is on top)."""
        h = self.spacing
        return self.extent - (np.arange(self.n) + 0.5) * h

    def pixel_centers(self) -> np.ndarray:
        """All pixel centers as an (n, n, 2) array of (x, y) pairs."""
        x = self.axis_x()
        y = self.axis_y()
        out = np.empty((self.n, self.n, 2))
        out[:, :, 0] = x[None, :]
        out[:, :, 1] = y[:, None]
        return out

    def center_of(self, i: int, j: int) -> tuple[float, float]:
        h = self.spacing
        return (-self.extent + (j + 0.5) * h, self.extent - (i + 0.5) * h)

    def nearest_index(self, point) -> tuple[int, int]:
        """Row/column of the pixel whose center is closest to ``point``."""
        x, y = float(point[0]), float(point[1])
        h = self.spacing
        i = int(np.clip(round((self.extent - y) / h - 0.5), 0, self.n - 1))
        j = int(np.clip(round((x + self.extent) / h - 0.5), 0, self.n - 1))
        return i, j


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time samples t_k = k * t_final / n_t for k = 1..n_t.

    t = 0 is deliberately excluded so that 1/t filtering is finite.
    """

    n_t: int
    t_final: float

    def __post_init__(self):
        if self.n_t < 2:
            raise ConfigError(f"time grid needs n_t >= 2, got {self.n_t}")
        if not self.t_final > 0:
            raise ConfigError(f"t_final must be positive, got {self.t_final}")

    @property
    def dt(self) -> float:
        return self.t_final / self.n_t

    def samples(self) -> np.ndarray:
        return np.arange(1, self.n_t + 1) * (self.t_final / self.n_t)


@dataclass(frozen=True)
class DetectorArray:
    """Point detectors on a circle of given radius around the origin.

    ``positions`` is (n_s, 2), ``normals`` the matching outward unit
    normals, and ``arc_weight`` the arc length each detector represents in
    the boundary integral (one shared value; the arrays are read-only).
    """

    positions: np.ndarray
    normals: np.ndarray
    arc_weight: float
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "positions", _readonly(self.positions))
        object.__setattr__(self, "normals", _readonly(self.normals))
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise ConfigError("detector positions must have shape (n_s, 2)")
        if self.normals.shape != self.positions.shape:
            raise ConfigError("detector normals must match positions in shape")
        if not self.arc_weight > 0:
            raise ConfigError("arc_weight must be positive")
        if not self.radius > 0:
            raise ConfigError("detection radius must be positive")
        r = np.linalg.norm(self.positions, axis=1)
        if np.any(np.abs(r - self.radius) > 1e-12 * self.radius):
            raise ConfigError("detector positions must lie on the detection circle")

    @property
    def n_s(self) -> int:
        return self.positions.shape[0]


def make_detectors(
    label: str,
    n_s: int,
    radius: float,
    start_angle: float = HALF_CIRCLE_START,
    end_angle: float = HALF_CIRCLE_END,
) -> DetectorArray:
    """Place ``n_s`` detectors for a scenario label.

    ``B_sparse`` distributes them over the full circle at angles
    2*pi*k/n_s with arc weight 2*pi*R/n_s.  ``A_limited_view`` and
    ``C_limited_sparse`` place them on the left half circle (the arc from
    pi/2 to 3*pi/2, facing the object): each detector sits at the midpoint
    of its own arc segment so the segments tile the half circle exactly,
    with arc weight pi*R/n_s.  ``custom`` uses the same midpoint rule on
    [start_angle, end_angle].
    """
    if label not in SCENARIO_LABELS:
        raise ConfigError(f"unknown scenario label {label!r}")
    if n_s < 1:
        raise ConfigError(f"need at least one detector, got n_s={n_s}")
    if not radius > 0:
        raise ConfigError(f"detection radius must be positive, got {radius}")

    if label == "B_sparse":
        angles = 2.0 * math.pi * np.arange(n_s) / n_s
        arc_weight = 2.0 * math.pi * radius / n_s
    else:
        if label != "custom":
            start_angle, end_angle = HALF_CIRCLE_START, HALF_CIRCLE_END
        span = end_angle - start_angle
        if not span > 0:
            raise ConfigError("detector arc must have positive angular span")
        angles = start_angle + (np.arange(n_s) + 0.5) * span / n_s
        arc_weight = span * radius / n_s

    normals = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    positions = radius * normals
    return DetectorArray(positions, normals, arc_weight, radius)


def directivity(normal, ray):
    """Angle-dependent detector sensitivity in [0, 1].

    ``normal`` is the outward detector normal, ``ray`` the unit direction
    from the detector toward the source point.  With alpha the angle
    between ``ray`` and the inward direction ``-normal``, the sensitivity
    is cos(alpha)^2 for |alpha| < pi/2 and 0 beyond: the detector is most
    sensitive facing the domain and blind toward its back side.  Both
    arguments broadcast over a trailing axis of length 2.
    """
    normal = np.asarray(normal, dtype=np.float64)
    ray = np.asarray(ray, dtype=np.float64)
    for name, v in (("normal", normal), ("ray", ray)):
        norms = np.sqrt(np.sum(v * v, axis=-1))
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ConfigError(f"directivity {name} must be a unit vector")
    c = -np.sum(normal * ray, axis=-1)
    out = np.where(c > 0.0, c * c, 0.0)
    return float(out) if out.ndim == 0 else out


def directivity_factors(normals: np.ndarray, rays: np.ndarray) -> np.ndarray:
    """Unchecked cos^2 sensitivity table for unit ``normals`` (n_s, 2)
    against unit ``rays`` (m, 2); returns (n_s, m)."""
    c = -(normals @ rays.T)
    return np.where(c > 0.0, c * c, 0.0)


@dataclass(frozen=True)
class Scenario:
    """Complete measurement configuration for simulation and training."""

    grid: ImageGrid
    detectors: DetectorArray
    time: TimeGrid
    directivity_enabled: bool = True
    sound_speed: float = 1.0
    label: str = "custom"

    def __post_init__(self):
        if not self.sound_speed > 0:
            raise ConfigError(f"sound speed must be positive, got {self.sound_speed}")
        if self.label not in SCENARIO_LABELS:
            raise ConfigError(f"unknown scenario label {self.label!r}")
        pos = self.detectors.positions
        if self.label in ("A_limited_view", "C_limited_sparse"):
            if np.any(pos[:, 0] > 1e-9 * self.detectors.radius):
                raise ConfigError(f"label {self.label} requires detectors on the left half circle")
        elif self.label == "B_sparse":
            angles = np.sort(np.mod(np.arctan2(pos[:, 1], pos[:, 0]), 2.0 * math.pi))
            gaps = np.diff(np.concatenate([angles, angles[:1] + 2.0 * math.pi]))
            if np.any(np.abs(gaps - 2.0 * math.pi / len(angles)) > 1e-9):
                raise ConfigError("label B_sparse requires equidistant detectors on the full circle")


# default detector counts for the three canonical arrangements
_DEFAULT_N_S = {"A_limited_view": 100, "B_sparse": 20, "C_limited_sparse": 20}


def make_scenario(
    label: str,
    n: int = 256,
    n_s: int | None = None,
    n_t: int = 400,
    t_final: float = 3.0,
    extent: float = 1.0,
    radius: float = 1.0,
    directivity_enabled: bool = True,
    sound_speed: float = 1.0,
) -> Scenario:
    """Build one of the canonical scenarios with standard defaults."""
    if label not in _DEFAULT_N_S:
        raise ConfigError(f"make_scenario handles canonical labels only, got {label!r}")
    if n_s is None:
        n_s = _DEFAULT_N_S[label]
    return Scenario(
        grid=ImageGrid(n=n, extent=extent),
        detectors=make_detectors(label, n_s, radius),
        time=TimeGrid(n_t=n_t, t_final=t_final),
        directivity_enabled=directivity_enabled,
        sound_speed=sound_speed,
        label=label,
    )
