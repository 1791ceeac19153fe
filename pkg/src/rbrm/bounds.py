"""Upper bounds on the largest covariance eigenvalue.

Every step map here has the shape ``ell -> (a*ell + b) * F(ell)`` where
``a`` is the squared spectral norm of the transition Jacobian, ``b`` the
largest eigenvalue of the process noise, and ``F`` mixes rational terms
``1 / (c_S*ell + d_S)`` over detection patterns ``S``. With
``d_S = b*c_S/a + 1`` each term equals the single-step deterministic bound
for the information collected by ``S``.

Sensor subsets are indexed by bitmask over the sensors of a step; mask 0 is
the empty set with ``(c, d) = (0, 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels, numerics
from .errors import ComplexityGuardError, InvalidInputError, NumericalFailureError, UnsupportedInputError

MAX_SUBSET_SENSORS = 20


def subset_coeff_arrays(infos, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """``(c, d)`` arrays indexed by bitmask for every subset of ``infos``."""
    if not a > 0:
        raise InvalidInputError("a must be positive")
    m = len(infos)
    if m > MAX_SUBSET_SENSORS:
        raise ComplexityGuardError(f"{m} sensors exceed the 2^m guard of {MAX_SUBSET_SENSORS}")
    if m == 0:
        return np.zeros(1), np.ones(1)
    infos = np.asarray(infos, dtype=float)
    n = infos.shape[-1]
    sums = np.zeros((1 << m, n, n))
    for mask in range(1, 1 << m):
        low = mask & -mask
        sums[mask] = sums[mask ^ low] + infos[low.bit_length() - 1]
    lo, _ = numerics.batch_eig_extremes(sums)
    lo[0] = 0.0
    c = a * lo
    d = b * c / a + 1.0
    return c, d


def subset_coeffs(infos, a: float, b: float) -> dict[frozenset, tuple[float, float]]:
    """Map each sensor subset (frozenset of indices) to its ``(c_S, d_S)``."""
    c, d = subset_coeff_arrays(infos, a, b)
    out = {}
    for mask in range(len(c)):
        members = frozenset(j for j in range(len(infos)) if mask >> j & 1)
        out[members] = (float(c[mask]), float(d[mask]))
    return out


@dataclass(frozen=True, eq=False)
class StepBoundParams:
    """Everything one bound step needs.

    ``probs[j]`` and ``infos[j]`` describe the j-th in-range sensor;
    ``sensor_ids`` maps those back to scenario sensor indices and
    ``position`` is the nominal pose where they were evaluated.
    """

    a: float
    b: float
    probs: np.ndarray
    infos: np.ndarray
    c: np.ndarray
    d: np.ndarray
    sensor_ids: tuple = ()
    position: Optional[np.ndarray] = None

    @property
    def m(self) -> int:
        return len(self.probs)

    def subset_coeffs(self) -> dict:
        return subset_coeffs(self.infos, self.a, self.b)

    def with_probs(self, probs) -> "StepBoundParams":
        probs = np.asarray(probs, dtype=float)
        if probs.shape != self.probs.shape:
            raise InvalidInputError("probability vector length changed")
        return StepBoundParams(self.a, self.b, probs, self.infos, self.c, self.d, self.sensor_ids, self.position)


def make_step_params(a, b, probs, infos, sensor_ids=(), position=None, n=None) -> StepBoundParams:
    probs = np.asarray(probs, dtype=float).reshape(-1)
    if np.any((probs < 0) | (probs > 1)):
        raise InvalidInputError("detection probabilities must lie in [0, 1]")
    if not b >= 0:
        raise InvalidInputError("b must be non-negative")
    if len(infos):
        infos = np.asarray(infos, dtype=float)
    else:
        infos = np.zeros((0, n or 0, n or 0))
    if len(infos) != len(probs):
        raise InvalidInputError("need one information matrix per probability")
    c, d = subset_coeff_arrays(infos, a, b)
    # concavity precondition a*d_S - b*c_S = a > 0
    if not np.allclose(a * d - b * c, a, rtol=1e-9, atol=0.0):
        raise NumericalFailureError("subset coefficients violate a*d - b*c = a")
    return StepBoundParams(float(a), float(b), probs, infos, c, d, tuple(sensor_ids), position)


# -- single-step maps ----------------------------------------------------------


def bound_step_deterministic(ell: float, a: float, b: float, lambda_min_info: float) -> float:
    grow = a * ell + b
    return grow / (lambda_min_info * grow + 1.0)


def bound_step_stochastic(ell_bar: float, params: StepBoundParams) -> float:
    if params.m > MAX_SUBSET_SENSORS:
        raise ComplexityGuardError("too many sensors for subset enumeration; use the uniform variant")
    return kernels.step_value(ell_bar, params.a, params.b, params.probs, params.c, params.d, kernels.STOCHASTIC)


def bound_step_simplified(ell_bar: float, params: StepBoundParams) -> float:
    return kernels.step_value(ell_bar, params.a, params.b, params.probs, params.c, params.d, kernels.SIMPLIFIED)


def bound_step_uniform(ell_bar: float, a: float, b: float, c_bar: float, p_all_miss: float) -> float:
    d_bar = b * c_bar / a + 1.0
    return (a * ell_bar + b) * (p_all_miss + (1.0 - p_all_miss) / (c_bar * ell_bar + d_bar))


# -- closed-form horizon bound --------------------------------------------------


@dataclass(frozen=True)
class HorizonBoundInputs:
    """Uniform constants for the closed-form horizon bound.

    ``c`` is the coefficient of the rational step map
    ``ell -> (a*ell + b) / (c*ell + d)``, i.e. ``a`` times the uniform lower
    bound on the smallest information eigenvalue (see ``from_information``).
    ``kappa`` counts open-loop steps among the ``T`` steps.
    """

    a: float
    b: float
    c: float
    kappa: int
    T: int
    ell0: float

    @classmethod
    def from_information(cls, a, b, lambda_min_info, kappa, T, ell0):
        return cls(a, b, a * lambda_min_info, kappa, T, ell0)

    @property
    def d(self) -> float:
        return self.b * self.c / self.a + 1.0

    @property
    def zeta(self) -> float:
        dm = self.d - self.a
        return (dm + math.sqrt(dm * dm + 4.0 * self.b * self.c)) / (2.0 * self.c)


def bound_horizon_closed_form(inp: HorizonBoundInputs) -> float:
    """Bound after ``T`` steps, ``kappa`` of them without information.

    Exact for the schedule that runs every informative step first and the
    open-loop steps last; dominates every other placement when ``a >= 1``.
    """
    a, b, c = inp.a, inp.b, inp.c
    if not c > 0:
        raise UnsupportedInputError("closed form needs c > 0")
    if not (a > 0 and b >= 0):
        raise InvalidInputError("need a > 0 and b >= 0")
    if not (0 <= inp.kappa <= inp.T) or inp.ell0 < 0:
        raise InvalidInputError("need 0 <= kappa <= T and ell0 >= 0")
    zeta, d = inp.zeta, inp.d
    k = inp.T - inp.kappa
    ratio = (d - zeta * c) / (zeta * c + a)
    gain = c / (zeta * c + a)
    if abs(1.0 - ratio) < 1e-14:
        geom = float(k)
    else:
        geom = (1.0 - ratio**k) / (1.0 - ratio)
    denom = ratio**k / (zeta + inp.ell0) + gain * geom
    if not denom > 0:
        raise NumericalFailureError("closed-form denominator is not positive")
    ak = a**inp.kappa
    open_loop = b * sum(a ** (j - 1) for j in range(1, inp.kappa + 1))
    return open_loop - ak * zeta + ak / denom


def iterate_schedule(ell0: float, a: float, b: float, c: float, open_loop) -> float:
    """Run the two scalar maps over a schedule (True = open-loop step)."""
    d = b * c / a + 1.0
    ell = ell0
    for is_open in open_loop:
        ell = a * ell + b if is_open else (a * ell + b) / (c * ell + d)
    return ell


# -- packed sequences ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PackedSteps:
    """Flat arrays describing a step sequence, ready for the kernels."""

    a: np.ndarray
    b: np.ndarray
    m: np.ndarray
    p_flat: np.ndarray
    p_off: np.ndarray
    c_flat: np.ndarray
    d_flat: np.ndarray
    cd_off: np.ndarray
    sensor_flat: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self):
        return len(self.a)

    def with_p(self, p_flat) -> "PackedSteps":
        p_flat = np.ascontiguousarray(p_flat, dtype=float)
        if p_flat.shape != self.p_flat.shape:
            raise InvalidInputError("probability array length changed")
        return PackedSteps(self.a, self.b, self.m, p_flat, self.p_off, self.c_flat, self.d_flat, self.cd_off, self.sensor_flat)

    def reversed(self) -> "PackedSteps":
        return pack_steps(list(unpack_coeffs(self))[::-1])

    def fold(self, ell0: float, variant="stochastic") -> float:
        return kernels.fold_bound(
            float(ell0), self.a, self.b, self.m, self.p_flat, self.p_off,
            self.c_flat, self.d_flat, self.cd_off, kernels.variant_code(variant),
        )

    def trace(self, ell0: float, variant="stochastic") -> np.ndarray:
        out = np.empty(len(self.a) + 1)
        kernels.fold_bound(
            float(ell0), self.a, self.b, self.m, self.p_flat, self.p_off,
            self.c_flat, self.d_flat, self.cd_off, kernels.variant_code(variant), out,
        )
        return out


def _offsets(sizes) -> np.ndarray:
    off = np.zeros(len(sizes) + 1, dtype=np.int64)
    np.cumsum(sizes, out=off[1:])
    return off


def pack_steps(steps: Sequence) -> PackedSteps:
    """Pack StepBoundParams (or ``(a, b, probs, c, d, sensor_ids)`` tuples)."""
    rows = [(s.a, s.b, s.probs, s.c, s.d, s.sensor_ids) if isinstance(s, StepBoundParams) else s for s in steps]
    m = np.array([len(r[2]) for r in rows], dtype=np.int64)
    if np.any(m > MAX_SUBSET_SENSORS):
        raise ComplexityGuardError("a step exceeds the 2^m sensor guard")
    cat = lambda xs, dt=float: np.ascontiguousarray(np.concatenate(xs) if xs else np.zeros(0), dtype=dt)  # noqa: E731
    return PackedSteps(
        a=np.ascontiguousarray([r[0] for r in rows], dtype=float),
        b=np.ascontiguousarray([r[1] for r in rows], dtype=float),
        m=m,
        p_flat=cat([np.asarray(r[2], dtype=float) for r in rows]),
        p_off=_offsets(m),
        c_flat=cat([r[3] for r in rows]),
        d_flat=cat([r[4] for r in rows]),
        cd_off=_offsets([1 << int(k) for k in m]),
        sensor_flat=cat([np.asarray(r[5], dtype=np.int64) for r in rows], np.int64),
    )


def unpack_coeffs(ps: PackedSteps):
    """Yield ``(a, b, probs, c, d, sensor_ids)`` per step."""
    for k in range(len(ps.a)):
        p0, p1 = ps.p_off[k], ps.p_off[k + 1]
        c0, c1 = ps.cd_off[k], ps.cd_off[k + 1]
        yield (ps.a[k], ps.b[k], ps.p_flat[p0:p1], ps.c_flat[c0:c1], ps.d_flat[c0:c1], tuple(ps.sensor_flat[p0:p1]))


def concat_packed(parts: Sequence[PackedSteps]) -> PackedSteps:
    rows = [row for part in parts for row in unpack_coeffs(part)]
    return pack_steps(rows)


def propagate_bound_sequence(ell0: float, steps, variant="stochastic") -> np.ndarray:
    """Bound trace ``[ell0, ell1, ..., ellK]`` over a step sequence."""
    if ell0 < 0:
        raise InvalidInputError("ell0 must be non-negative")
    packed = steps if isinstance(steps, PackedSteps) else pack_steps(list(steps))
    return packed.trace(ell0, variant)
