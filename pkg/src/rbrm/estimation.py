"""EKF with intermittent measurements, written in information form.

All Jacobians are evaluated on the nominal trajectory, so the covariance
sequence depends only on which sensors reported, never on the measured
values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import numerics
from .errors import InvalidInputError, NumericalFailureError, SingularMatrixError
from .models import CORNER_DETECTOR, ProcessModel, SensorSpec, sample_measurement

DEFAULT_P0_SCALE = 0.01


@dataclass(frozen=True, eq=False)
class BeliefState:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = numerics.project_psd(self.covariance)
        if cov.shape != (mean.size, mean.size):
            raise InvalidInputError(f"covariance shape {cov.shape} does not match mean size {mean.size}")
        if not np.all(np.isfinite(mean)):
            raise InvalidInputError("mean must be finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @classmethod
    def _trusted(cls, mean, covariance) -> "BeliefState":
        """Construct from a covariance that has already been projected."""
        b = object.__new__(cls)
        object.__setattr__(b, "mean", np.atleast_1d(np.asarray(mean, dtype=float)))
        object.__setattr__(b, "covariance", covariance)
        return b

    @property
    def max_eig(self) -> float:
        return numerics.eig_extremes(self.covariance).lambda_max

    @property
    def trace(self) -> float:
        return float(np.trace(self.covariance))


class Linearization(NamedTuple):
    h: np.ndarray
    H: np.ndarray
    R: np.ndarray
    info: np.ndarray
    bearing_rows: np.ndarray


def linearize(spec: SensorSpec, nominal) -> Linearization:
    h, H, R = spec.linearize(nominal)
    Rinv = numerics.invert_pd(R)
    info = H.T @ Rinv @ H
    bearing = np.zeros(len(h), dtype=bool)
    if spec.kind == CORNER_DETECTOR and spec.uses_bearing:
        bearing[1::2] = True
    return Linearization(h, H, R, 0.5 * (info + info.T), bearing)


def _checked(cov, step=None):
    if not np.all(np.isfinite(cov)):
        raise NumericalFailureError("non-finite covariance", step)
    try:
        return numerics.project_psd(cov)
    except InvalidInputError as exc:
        raise NumericalFailureError(str(exc), step) from exc


def ekf_predict(b: BeliefState, model: ProcessModel, nominal_motion=None, step=None) -> BeliefState:
    F = model.F
    mean = model.transition(b.mean, nominal_motion)
    cov = F @ b.covariance @ F.T + model.Q
    return BeliefState._trusted(mean, _checked(cov, step))


def information_update(b: BeliefState, terms, step=None) -> BeliefState:
    """Add ``H' R^-1 H`` for each term ``(H, R, z)``.

    ``z`` is the linearized measurement ``y - h(x_nom) + H x_nom``; pass
    ``None`` to update the covariance only (the mean is then kept).
    """
    if not terms:
        return b
    try:
        pred_info = numerics.invert_pd(b.covariance)
    except SingularMatrixError as exc:
        raise NumericalFailureError(f"predicted covariance is singular: {exc}", step) from exc
    info = pred_info.copy()
    eta = pred_info @ b.mean
    use_mean = True
    for H, R, z in terms:
        H = np.atleast_2d(H)
        HtRinv = H.T @ numerics.invert_pd(R)
        info += HtRinv @ H
        if z is None:
            use_mean = False
        else:
            eta += HtRinv @ np.atleast_1d(z)
    try:
        cov = numerics.invert_pd(0.5 * (info + info.T))
    except SingularMatrixError as exc:
        raise NumericalFailureError(str(exc), step) from exc
    cov = _checked(cov, step)
    mean = cov @ eta if use_mean else b.mean
    if not np.isfinite(mean).all():
        raise NumericalFailureError("non-finite mean", step)
    return BeliefState._trusted(mean, cov)


def _wrap(r, mask):
    if mask.any():
        r = r.copy()
        r[mask] = np.mod(r[mask] + np.pi, 2.0 * np.pi) - np.pi
    return r


def ekf_update(b: BeliefState, detections, nominal=None, step=None) -> BeliefState:
    """Measurement update for ``(SensorSpec, gamma, measurement)`` triples.

    Jacobians are taken at ``nominal`` (defaults to the predicted mean).
    Entries with ``gamma == 0`` or no measurement are skipped.
    """
    x_nom = b.mean if nominal is None else np.asarray(nominal, dtype=float)
    terms = []
    for spec, gamma, y in detections:
        if gamma not in (0, 1):
            raise InvalidInputError("gamma must be 0 or 1")
        if not gamma or y is None:
            continue
        lin = linearize(spec, x_nom)
        resid = _wrap(np.atleast_1d(y) - lin.h, lin.bearing_rows)
        terms.append((lin.H, lin.R, resid + lin.H @ x_nom))
    return information_update(b, terms, step)


def linearize_trajectory(poses, sensors: Sequence[SensorSpec]):
    """Per step ``t >= 1``: dict of in-range sensor index -> Linearization."""
    out = []
    for pos in poses[1:]:
        pos = np.asarray(pos, dtype=float)
        out.append({j: linearize(s, pos) for j, s in enumerate(sensors) if s.in_range(pos)})
    return out


def run_filter(
    poses,
    sensors: Sequence[SensorSpec],
    model: ProcessModel,
    gamma_schedule,
    P0=None,
    rng: Optional[np.random.Generator] = None,
    lin=None,
) -> list[BeliefState]:
    """Run predict/update along a nominal trajectory.

    ``poses[0]`` is the initial nominal state and ``poses[t]`` the nominal
    state after step ``t``. ``gamma_schedule[t-1][j]`` says whether sensor
    ``j`` reported at step ``t``. Without ``rng`` only the covariance is
    propagated and the mean follows the nominal path; with ``rng`` a true
    trajectory is simulated with process noise and measurements are drawn
    from it.
    """
    poses = [np.asarray(p, dtype=float) for p in poses]
    n = model.state_dim
    if P0 is None:
        P0 = DEFAULT_P0_SCALE * np.eye(n)
    if len(gamma_schedule) < len(poses) - 1:
        raise InvalidInputError("gamma schedule shorter than the path")
    lin = linearize_trajectory(poses, sensors) if lin is None else lin
    belief = BeliefState(poses[0], P0)
    out = [belief]
    truth = poses[0].copy()
    if rng is not None:
        truth = truth + rng.multivariate_normal(np.zeros(n), belief.covariance)
    for t in range(1, len(poses)):
        u = poses[t] - model.F @ poses[t - 1]
        if rng is not None:
            truth = model.transition(truth, u) + rng.multivariate_normal(np.zeros(n), model.Q)
        try:
            belief = ekf_predict(belief, model, u, step=t)
            terms = []
            for j, li in lin[t - 1].items():
                if not gamma_schedule[t - 1][j]:
                    continue
                if rng is None:
                    terms.append((li.H, li.R, None))
                    continue
                y = sample_measurement(sensors[j], truth, 1, rng, nominal=poses[t])
                resid = _wrap(y - li.h, li.bearing_rows)
                terms.append((li.H, li.R, resid + li.H @ poses[t]))
            if rng is None:
                belief = information_update(belief, terms, step=t)
                belief = BeliefState._trusted(poses[t], belief.covariance)
            else:
                belief = information_update(belief, terms, step=t)
        except NumericalFailureError as exc:
            if exc.step is None:
                raise NumericalFailureError(str(exc), t) from exc
            raise
        out.append(belief)
    return out
