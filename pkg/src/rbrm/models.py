"""Vehicle, process and sensor models.

The estimated state is the planar position ``(x, y)``. Heading only exists
to book-keep the nominal trajectory; no sensor observes it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from shapely import prepared
from shapely.geometry import Point, Polygon

from . import numerics
from .errors import InvalidInputError, OutOfRangeError

RANGE_BEACON = "range-beacon"
CORNER_DETECTOR = "corner-detector"
LINEAR = "linear"
SENSOR_KINDS = (RANGE_BEACON, CORNER_DETECTOR, LINEAR)

# Distances below this make range/bearing Jacobians meaningless.
MIN_DISTANCE = 1e-9


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]; -pi maps to pi."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.heading)):
            raise InvalidInputError("vehicle state must be finite")
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


def propagate_state(s: VehicleState, step_length: float, heading: float) -> VehicleState:
    return VehicleState(
        s.x + step_length * math.cos(heading),
        s.y + step_length * math.sin(heading),
        heading,
    )


@dataclass(frozen=True, eq=False)
class ProcessModel:
    """Linear motion ``x' = F x + u + n`` with ``n ~ N(0, Q)``.

    ``u`` is the commanded displacement of the nominal trajectory. ``F``
    defaults to the identity, which is the planar kinematic case.
    """

    Q: np.ndarray
    F: Optional[np.ndarray] = None
    speed: float = 0.05

    def __post_init__(self):
        Q = numerics.as_symmetric(self.Q)
        if not numerics.is_psd(Q):
            raise InvalidInputError("process noise Q must be PSD")
        n = Q.shape[0]
        F = np.eye(n) if self.F is None else np.atleast_2d(np.asarray(self.F, dtype=float))
        if F.shape != (n, n):
            raise InvalidInputError(f"F has shape {F.shape}, expected {(n, n)}")
        if not self.speed > 0:
            raise InvalidInputError("speed must be positive")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "F", F)

    @property
    def state_dim(self) -> int:
        return self.Q.shape[0]

    def transition(self, x, u=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = self.F @ x
        return out if u is None else out + np.asarray(u, dtype=float)


# -- detection probability fields -------------------------------------------


def _check_prob(p, name="p"):
    if not (0.0 <= p <= 1.0):
        raise InvalidInputError(f"{name}={p} outside [0, 1]")


@dataclass(frozen=True)
class ConstantField:
    p: float

    def __post_init__(self):
        _check_prob(self.p)


@dataclass(frozen=True)
class GradientField:
    """Linear ramp along one axis, clamped outside ``[lo, hi]``."""

    axis: int
    p_at_min: float
    p_at_max: float
    lo: float
    hi: float

    def __post_init__(self):
        _check_prob(self.p_at_min, "p_at_min")
        _check_prob(self.p_at_max, "p_at_max")
        if self.axis not in (0, 1):
            raise InvalidInputError("gradient axis must be 0 (x) or 1 (y)")
        if not self.hi > self.lo:
            raise InvalidInputError("gradient bounds need hi > lo")


@dataclass(frozen=True, eq=False)
class RegionField:
    """Polygonal regions, each with its own probability; first match wins."""

    regions: tuple
    default: float
    _shapes: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _check_prob(self.default, "default")
        shapes = []
        for verts, p in self.regions:
            _check_prob(p)
            shapes.append((prepared.prep(Polygon(verts)), float(p)))
        object.__setattr__(self, "_shapes", tuple(shapes))


DetectionField = ConstantField | GradientField | RegionField


def detection_prob(f: DetectionField, pos) -> float:
    if isinstance(f, ConstantField):
        return float(f.p)
    if isinstance(f, GradientField):
        s = (float(pos[f.axis]) - f.lo) / (f.hi - f.lo)
        s = min(1.0, max(0.0, s))
        p = f.p_at_min + s * (f.p_at_max - f.p_at_min)
        return min(1.0, max(0.0, p))
    if isinstance(f, RegionField):
        pt = Point(float(pos[0]), float(pos[1]))
        for shape, p in f._shapes:
            if shape.covers(pt):
                return p
        return float(f.default)
    raise InvalidInputError(f"unknown detection field {f!r}")


# -- sensors -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SensorSpec:
    """One sensor with a single detection indicator per time step.

    range-beacon
        scalar range to ``position``; std ``alpha * d + sigma0``.
    corner-detector
        range (and by default bearing) to every vertex in ``vertices`` within
        ``max_range``. One detection indicator covers the whole scan.
    linear
        ``y = H x + v`` with ``v ~ N(0, R)``; optional range gate around
        ``position``.
    """

    kind: str
    detection: DetectionField = ConstantField(1.0)
    name: str = ""
    position: Optional[np.ndarray] = None
    vertices: Optional[np.ndarray] = None
    sigma0: float = 0.1
    alpha: float = 0.0
    fixed_variance: float = 0.1
    bearing_variance: Optional[float] = None
    max_range: float = math.inf
    H: Optional[np.ndarray] = None
    R: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in SENSOR_KINDS:
            raise InvalidInputError(f"unknown sensor kind {self.kind!r}")
        if not self.max_range > 0:
            raise InvalidInputError("max_range must be positive")
        if self.position is not None:
            object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        if self.kind == RANGE_BEACON:
            if self.position is None:
                raise InvalidInputError("range beacon needs a position")
            if not self.sigma0 > 0 or not self.alpha >= 0:
                raise InvalidInputError("beacon needs sigma0 > 0 and alpha >= 0")
        elif self.kind == CORNER_DETECTOR:
            verts = np.atleast_2d(np.asarray(self.vertices, dtype=float))
            if verts.ndim != 2 or verts.shape[1] != 2:
                raise InvalidInputError("corner detector needs an (n, 2) vertex list")
            object.__setattr__(self, "vertices", verts)
            if not self.fixed_variance > 0:
                raise InvalidInputError("fixed_variance must be positive")
            if self.bearing_variance is not None and not self.bearing_variance > 0:
                raise InvalidInputError("bearing_variance must be positive")
        else:
            H = np.atleast_2d(np.asarray(self.H, dtype=float))
            R = numerics.as_symmetric(self.R)
            if R.shape[0] != H.shape[0]:
                raise InvalidInputError("R must match the rows of H")
            if not numerics.eig_extremes(R).lambda_min > 0:
                raise InvalidInputError("R must be positive definite")
            object.__setattr__(self, "H", H)
            object.__setattr__(self, "R", R)

    @property
    def uses_bearing(self) -> bool:
        return self.kind == CORNER_DETECTOR and self.bearing_variance is not None

    def visible_vertices(self, pos) -> np.ndarray:
        d = np.hypot(*(self.vertices - np.asarray(pos, dtype=float)[:2]).T)
        return self.vertices[(d <= self.max_range) & (d > MIN_DISTANCE)]

    def in_range(self, pos) -> bool:
        if self.kind == CORNER_DETECTOR:
            return len(self.visible_vertices(pos)) > 0
        if math.isinf(self.max_range) or self.position is None:
            return True
        return float(np.linalg.norm(np.asarray(pos)[:2] - self.position)) <= self.max_range

    def linearize(self, pos, vertices=None):
        """Return ``(h, H, R)`` at ``pos``.

        ``vertices`` pins the corner set (defaults to those visible from
        ``pos``) so a measurement and its Jacobian stay row-aligned.
        """
        pos = np.asarray(pos, dtype=float)
        if self.kind == LINEAR:
            return self.H @ pos, self.H, self.R
        if self.kind == RANGE_BEACON:
            delta = pos[:2] - self.position
            d = float(np.hypot(*delta))
            sigma = measurement_noise_sigma(self, d)
            H = np.zeros((1, pos.size))
            if d > MIN_DISTANCE:
                H[0, :2] = delta / d
            return np.array([d]), H, np.array([[sigma * sigma]])
        verts = self.visible_vertices(pos) if vertices is None else vertices
        rows, hs, var = [], [], []
        for v in verts:
            dx, dy = v[0] - pos[0], v[1] - pos[1]
            d = math.hypot(dx, dy)
            r_row = np.zeros(pos.size)
            r_row[:2] = (-dx / d, -dy / d)
            rows.append(r_row)
            hs.append(d)
            var.append(self.fixed_variance)
            if self.uses_bearing:
                b_row = np.zeros(pos.size)
                b_row[:2] = (dy / (d * d), -dx / (d * d))
                rows.append(b_row)
                hs.append(math.atan2(dy, dx))
                var.append(self.bearing_variance)
        H = np.array(rows).reshape(len(rows), pos.size)
        return np.array(hs), H, np.diag(var)


def measurement_noise_sigma(spec: SensorSpec, d: float) -> float:
    """Range-noise standard deviation at distance ``d``."""
    if d < 0:
        raise InvalidInputError("distance must be non-negative")
    if spec.kind == RANGE_BEACON:
        return spec.alpha * d + spec.sigma0
    if spec.kind == CORNER_DETECTOR:
        return math.sqrt(spec.fixed_variance)
    return math.sqrt(float(spec.R[0, 0]))


def info_matrix(spec: SensorSpec, s) -> np.ndarray:
    """Information contribution ``H' R^-1 H`` at the nominal state ``s``.

    ``s`` is a VehicleState or a state vector. Raises OutOfRangeError when
    the sensor cannot see the state.
    """
    pos = s.position if isinstance(s, VehicleState) else np.asarray(s, dtype=float)
    if not spec.in_range(pos):
        raise OutOfRangeError(f"sensor {spec.name or spec.kind} out of range at {pos}")
    if spec.kind == LINEAR:
        return info_matrix_unchecked(spec)
    _, H, R = spec.linearize(pos)
    # R is diagonal for the geometric sensors
    out = (H.T / np.diag(R)) @ H
    return 0.5 * (out + out.T)


def sample_measurement(
    spec: SensorSpec,
    true_state,
    gamma: int,
    rng: np.random.Generator,
    nominal=None,
    noiseless: bool = False,
) -> Optional[np.ndarray]:
    """Draw one measurement, or None on misdetection / out of range.

    The range gate and the corner set are evaluated at ``nominal`` when given
    (the filter linearizes there), otherwise at the true state.
    """
    if not gamma:
        return None
    true_pos = true_state.position if isinstance(true_state, VehicleState) else np.asarray(true_state, dtype=float)
    gate_pos = true_pos if nominal is None else np.asarray(nominal, dtype=float)
    if not spec.in_range(gate_pos):
        return None
    verts = spec.visible_vertices(gate_pos) if spec.kind == CORNER_DETECTOR else None
    h, _, R = spec.linearize(true_pos, vertices=verts)
    if noiseless:
        return h
    if spec.kind == LINEAR:
        return h + rng.multivariate_normal(np.zeros(h.size), R)
    return h + rng.standard_normal(h.size) * np.sqrt(np.diag(R))


def sensor_probs(sensors: Sequence[SensorSpec], pos) -> np.ndarray:
    return np.array([detection_prob(s.detection, pos) for s in sensors])


def batch_info(spec: SensorSpec, positions, state_dim: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """Information matrices and in-range mask at many nominal positions.

    Returns ``(infos, mask)`` with ``infos`` of shape ``(k, n, n)``, ``n``
    being ``state_dim`` (default: the width of ``positions``); entries where
    ``mask`` is False are zero. Same values as ``info_matrix``.
    """
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    k = pos.shape[0]
    n = pos.shape[1] if state_dim is None else int(state_dim)
    if spec.kind == LINEAR and spec.H.shape[1] != n:
        raise InvalidInputError(f"H has {spec.H.shape[1]} columns, state dimension is {n}")
    if spec.kind != LINEAR and n < 2:
        raise InvalidInputError("geometric sensors need a planar state")
    infos = np.zeros((k, n, n))
    if spec.kind == RANGE_BEACON:
        delta = pos[:, :2] - spec.position
        d = np.hypot(delta[:, 0], delta[:, 1])
        sigma = spec.alpha * d + spec.sigma0
        u = np.divide(delta, d[:, None], out=np.zeros_like(delta), where=d[:, None] > MIN_DISTANCE)
        infos[:, :2, :2] = u[:, :, None] * u[:, None, :] / (sigma * sigma)[:, None, None]
        mask = np.ones(k, dtype=bool) if math.isinf(spec.max_range) else d <= spec.max_range
        infos[~mask] = 0.0
        return infos, mask
    if spec.kind == LINEAR:
        base = info_matrix_unchecked(spec)
        if spec.position is None or math.isinf(spec.max_range):
            mask = np.ones(k, dtype=bool)
        else:
            mask = np.hypot(*(pos[:, :2] - spec.position).T) <= spec.max_range
        infos[mask] = base
        return infos, mask
    # corner detector: sum over visible vertices
    dx = spec.vertices[None, :, 0] - pos[:, 0:1]
    dy = spec.vertices[None, :, 1] - pos[:, 1:2]
    d = np.hypot(dx, dy)
    vis = (d <= spec.max_range) & (d > MIN_DISTANCE)
    dsafe = np.where(vis, d, 1.0)
    ux, uy = dx / dsafe, dy / dsafe
    w_r = vis / spec.fixed_variance
    infos[:, 0, 0] = np.sum(w_r * ux * ux, axis=1)
    infos[:, 0, 1] = np.sum(w_r * ux * uy, axis=1)
    infos[:, 1, 1] = np.sum(w_r * uy * uy, axis=1)
    if spec.uses_bearing:
        w_b = vis / (dsafe * dsafe * spec.bearing_variance)
        # bearing gradient is perpendicular to the line of sight
        infos[:, 0, 0] += np.sum(w_b * uy * uy, axis=1)
        infos[:, 0, 1] -= np.sum(w_b * ux * uy, axis=1)
        infos[:, 1, 1] += np.sum(w_b * ux * ux, axis=1)
    infos[:, 1, 0] = infos[:, 0, 1]
    return infos, vis.any(axis=1)


def info_matrix_unchecked(spec: SensorSpec) -> np.ndarray:
    out = spec.H.T @ numerics.invert_pd(spec.R) @ spec.H
    return 0.5 * (out + out.T)
