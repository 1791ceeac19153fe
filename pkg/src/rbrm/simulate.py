"""Monte Carlo validation, exact small-instance expectations and sweeps."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels, numerics
from .bounds import MAX_SUBSET_SENSORS, PackedSteps, StepBoundParams, concat_packed, pack_steps
from .errors import ComplexityGuardError, InvalidInputError, NoPathError, NumericalFailureError
from .estimation import DEFAULT_P0_SCALE, Linearization, run_filter
from .models import CORNER_DETECTOR, RANGE_BEACON, ConstantField, ProcessModel, SensorSpec
from .roadmap import Roadmap, rbrm_search

CHI2_95_2DOF = 5.991464547
EXACT_GUARD = 24
ROUNDOFF_TOL = 1e-12


@dataclass(eq=False)
class PathProblem:
    """A nominal trajectory with everything needed to bound and simulate it.

    ``poses[0]`` is the start; ``poses[t]`` (t >= 1) is the nominal position
    where step ``t``'s measurements are taken, described by ``steps[t-1]``.
    """

    sensors: Sequence[SensorSpec]
    model: ProcessModel
    poses: np.ndarray
    steps: list
    P0: np.ndarray
    packed: Optional[PackedSteps] = None

    def __post_init__(self):
        self.poses = np.atleast_2d(np.asarray(self.poses, dtype=float))
        if len(self.poses) != len(self.steps) + 1:
            raise InvalidInputError("need one more pose than steps")
        self.P0 = numerics.project_psd(self.P0)
        if self.packed is None:
            self.packed = pack_steps(self.steps)

    @property
    def T(self) -> int:
        return len(self.steps)

    @property
    def ell0(self) -> float:
        return numerics.eig_extremes(self.P0).lambda_max

    def bound_trace(self, variant="stochastic") -> np.ndarray:
        return self.packed.trace(self.ell0, variant)

    def linearizations(self) -> list:
        """Per-step ``{sensor index: Linearization}`` consistent with ``steps``."""
        out = []
        for t, s in enumerate(self.steps):
            pos = self.poses[t + 1]
            row = {}
            for k, j in enumerate(s.sensor_ids):
                h, H, R = self.sensors[j].linearize(pos)
                bearing = np.zeros(len(h), dtype=bool)
                if self.sensors[j].uses_bearing:
                    bearing[1::2] = True
                row[j] = Linearization(h, H, R, s.infos[k], bearing)
            out.append(row)
        return out

    def truncated(self, T: int) -> "PathProblem":
        if not 0 <= T <= self.T:
            raise InvalidInputError("horizon outside the path length")
        return PathProblem(self.sensors, self.model, self.poses[: T + 1], self.steps[:T], self.P0)


def default_P0(n: int) -> np.ndarray:
    return DEFAULT_P0_SCALE * np.eye(n)


def path_problem(r: Roadmap, path, sensors, model: ProcessModel, P0=None) -> PathProblem:
    """Build the measurement trajectory of a roadmap path."""
    if P0 is None:
        P0 = default_P0(model.state_dim)
    start = r.positions[path[0]]
    n = model.state_dim
    transfers = r.path_transfers(path)
    steps = [s for t in transfers for s in t.steps]
    pts = [np.asarray(start)] + [p for t in transfers for p in t.positions]
    poses = np.zeros((len(pts), n))
    poses[:, :2] = np.array(pts)[:, : min(2, n)]
    packed = concat_packed([t.packed for t in transfers]) if transfers else pack_steps([])
    return PathProblem(sensors, model, poses, steps, P0, packed)


# -- Monte Carlo -------------------------------------------------------------------


@dataclass
class MetricsTrace:
    bound: np.ndarray
    mc_mean_max_eig: np.ndarray
    mc_stderr_max_eig: np.ndarray
    mc_mean_trace: np.ndarray
    mc_stderr_trace: np.ndarray
    mc_trials: int
    failures: list = field(default_factory=list)
    seed: int = 0

    @property
    def t(self) -> np.ndarray:
        return np.arange(len(self.bound))

    def rows(self):
        n_ok = self.mc_trials - len(self.failures)
        for t in range(len(self.bound)):
            yield (
                t, self.bound[t], self.mc_mean_max_eig[t], self.mc_stderr_max_eig[t],
                self.mc_mean_trace[t], self.mc_stderr_trace[t], n_ok, len(self.failures),
            )

    def dominance_violations(self, k_sigma: float = 3.0, roundoff: float = ROUNDOFF_TOL) -> np.ndarray:
        """Time steps where the MC mean exceeds the bound plus k standard errors.

        ``roundoff`` absorbs summation error where the bound is attained
        exactly (e.g. t = 0, where every trial equals the bound).
        """
        excess = self.mc_mean_max_eig - (self.bound + k_sigma * self.mc_stderr_max_eig)
        return np.flatnonzero(excess > roundoff * np.maximum(1.0, np.abs(self.bound)))


@dataclass
class TrialResult:
    index: int
    max_eig: Optional[np.ndarray]
    trace: Optional[np.ndarray]
    error: Optional[str] = None


def trial_rng(master_seed: int, index: int) -> np.random.Generator:
    """Generator of trial ``index``; independent of how trials are scheduled."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(index,)))


def draw_gammas(problem: PathProblem, rng: np.random.Generator) -> list:
    """Per-step dict ``{sensor index: 0/1}`` drawn at the nominal poses."""
    out = []
    for s in problem.steps:
        u = rng.random(s.m)
        out.append({j: int(u[k] < s.probs[k]) for k, j in enumerate(s.sensor_ids)})
    return out


def run_trial(problem: PathProblem, master_seed: int, index: int, lin=None) -> TrialResult:
    rng = trial_rng(master_seed, index)
    gammas = draw_gammas(problem, rng)
    lin = problem.linearizations() if lin is None else lin
    try:
        beliefs = run_filter(problem.poses, problem.sensors, problem.model, gammas, problem.P0, rng, lin)
    except NumericalFailureError as exc:
        return TrialResult(index, None, None, str(exc))
    covs = np.array([b.covariance for b in beliefs])
    lo_hi = numerics.batch_eig_extremes(covs)[1]
    return TrialResult(index, lo_hi, np.trace(covs, axis1=1, axis2=2))


def run_trials(problem: PathProblem, indices, master_seed: int, workers: int = 1) -> list[TrialResult]:
    lin = problem.linearizations()
    job = lambda i: run_trial(problem, master_seed, i, lin)  # noqa: E731
    indices = list(indices)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(job, indices))
    return [job(i) for i in indices]


def _mean_stderr(x: np.ndarray):
    mean = x.mean(axis=0)
    if len(x) < 2:
        return mean, np.zeros_like(mean)
    return mean, x.std(axis=0, ddof=1) / math.sqrt(len(x))


def aggregate(problem: PathProblem, results: Sequence[TrialResult], master_seed: int, variant="stochastic") -> MetricsTrace:
    """Combine trial results (any partition, merged) into a MetricsTrace.

    Results are ordered by trial index before reduction, so the means do not
    depend on how the trials were split or scheduled.
    """
    results = sorted(results, key=lambda r: r.index)
    ok = [r for r in results if r.error is None]
    failures = [(r.index, r.error) for r in results if r.error is not None]
    if not ok:
        raise NumericalFailureError(f"all {len(results)} trials failed")
    me, se = _mean_stderr(np.array([r.max_eig for r in ok]))
    mt, st = _mean_stderr(np.array([r.trace for r in ok]))
    return MetricsTrace(problem.bound_trace(variant), me, se, mt, st, len(results), failures, master_seed)


def run_monte_carlo(problem: PathProblem, trials: int, master_seed: int, variant="stochastic", workers: int = 1) -> MetricsTrace:
    if trials < 1:
        raise InvalidInputError("trials must be >= 1")
    return aggregate(problem, run_trials(problem, range(trials), master_seed, workers), master_seed, variant)


# -- exact expectation -----------------------------------------------------------


def _subset_sums(infos: np.ndarray, n: int) -> np.ndarray:
    m = len(infos)
    sums = np.zeros((1 << m, n, n))
    for mask in range(1, 1 << m):
        low = mask & -mask
        sums[mask] = sums[mask ^ low] + infos[low.bit_length() - 1]
    return sums


def exact_expectation_small(problem: PathProblem, T: Optional[int] = None) -> np.ndarray:
    """Exact ``E[lambda_max(P_t)]``, t = 0..T, over every detection pattern."""
    T = problem.T if T is None else T
    if not 0 <= T <= problem.T:
        raise InvalidInputError("horizon outside the path length")
    steps = problem.steps[:T]
    total = sum(s.m for s in steps)
    if total > EXACT_GUARD:
        raise ComplexityGuardError(f"{total} sensor-steps exceed the enumeration guard of {EXACT_GUARD}")
    n = problem.model.state_dim
    W = [kernels.subset_weights(s.probs) for s in steps]
    M = [_subset_sums(s.infos, n) for s in steps]
    n_sub = np.array([len(w) for w in W], dtype=np.int64)
    off = np.zeros(T + 1, dtype=np.int64)
    np.cumsum(n_sub, out=off[1:])
    W_flat = np.concatenate(W) if W else np.zeros(0)
    M_flat = np.concatenate(M) if M else np.zeros((0, n, n))
    F = np.broadcast_to(problem.model.F, (T, n, n)).copy()
    Q = np.broadcast_to(problem.model.Q, (T, n, n)).copy()
    return kernels.exact_expectation(problem.P0, F, Q, n_sub, W_flat, M_flat, off)


# -- reliability sweep ---------------------------------------------------------------


@dataclass
class SweepCell:
    p_laser: float
    p_beacon: float
    goal_bound: Optional[float]
    laser_count: Optional[int]
    path: Optional[list]
    status: str = "ok"


@dataclass
class SweepGrid:
    laser_ps: list
    beacon_ps: list
    cells: list

    def cell(self, p_laser, p_beacon) -> SweepCell:
        for c in self.cells:
            if c.p_laser == p_laser and c.p_beacon == p_beacon:
                return c
        raise KeyError((p_laser, p_beacon))

    def path_ids(self) -> list:
        """Stable small integer id per distinct path, in first-seen order."""
        seen = {}
        out = []
        for c in self.cells:
            key = None if c.path is None else tuple(c.path)
            if key is not None and key not in seen:
                seen[key] = len(seen)
            out.append(None if key is None else seen[key])
        return out


def laser_step_count(r: Roadmap, path, sensors) -> int:
    """Steps along ``path`` with a corner detector in range and p > 0."""
    count = 0
    for t in r.path_transfers(path):
        for s in t.steps:
            if any(sensors[j].kind == CORNER_DETECTOR and s.probs[k] > 0 for k, j in enumerate(s.sensor_ids)):
                count += 1
    return count


def override_probs(sensors, p_laser: float, p_beacon: float) -> list:
    """Copies of ``sensors`` with constant detection fields per kind."""
    out = []
    for s in sensors:
        if s.kind == CORNER_DETECTOR:
            p = p_laser
        elif s.kind == RANGE_BEACON:
            p = p_beacon
        else:
            out.append(s)
            continue
        out.append(_replace_field(s, ConstantField(float(p))))
    return out


def _replace_field(s: SensorSpec, f) -> SensorSpec:
    from dataclasses import replace

    return replace(s, detection=f)


def sweep_reliability(
    r: Roadmap,
    sensors,
    ell0: float,
    laser_ps: Sequence[float],
    beacon_ps: Sequence[float],
    variant="stochastic",
    workers: int = 1,
) -> SweepGrid:
    """Re-plan on a compiled roadmap for every (laser p, beacon p) cell."""
    for p in list(laser_ps) + list(beacon_ps):
        if not 0.0 <= p <= 1.0:
            raise InvalidInputError(f"probability {p} outside [0, 1]")
    is_laser = np.array([s.kind == CORNER_DETECTOR for s in sensors])
    is_beacon = np.array([s.kind == RANGE_BEACON for s in sensors])

    def cell(pl, pb):
        pvec = np.array([
            pl if is_laser[j] else pb if is_beacon[j] else np.nan for j in range(len(sensors))
        ])
        rr = r.with_sensor_probs(pvec)
        try:
            path, goal = rbrm_search(rr, ell0, variant)
        except NoPathError as exc:
            return SweepCell(pl, pb, None, None, None, f"no-path: {exc}")
        return SweepCell(pl, pb, goal, laser_step_count(rr, path, sensors), path)

    grid = [(float(pl), float(pb)) for pl in laser_ps for pb in beacon_ps]
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            cells = list(ex.map(lambda c: cell(*c), grid))
    else:
        cells = [cell(*c) for c in grid]
    return SweepGrid([float(p) for p in laser_ps], [float(p) for p in beacon_ps], cells)


# -- ellipses ------------------------------------------------------------------------


@dataclass(frozen=True)
class Ellipse:
    center: tuple
    axes: tuple
    orientation: float


def confidence_ellipses(covariances, centers=None, level: float = 0.95) -> list[Ellipse]:
    """Confidence ellipses of 2D covariances (only the 0.95 level is tabulated)."""
    if level != 0.95:
        raise InvalidInputError("only the 0.95 level is supported")
    covs = list(covariances)
    centers = [(0.0, 0.0)] * len(covs) if centers is None else list(centers)
    out = []
    for P, c in zip(covs, centers):
        P = np.asarray(P, dtype=float)
        if P.shape != (2, 2):
            raise InvalidInputError("confidence ellipses need 2x2 covariances")
        if not numerics.is_psd(numerics.as_symmetric(P)):
            raise InvalidInputError("covariance is not PSD")
        w, v = np.linalg.eigh(numerics.project_psd(P))
        major = v[:, 1]
        angle = math.atan2(major[1], major[0])
        # fold into [-pi/2, pi/2): an axis has no direction
        if angle >= math.pi / 2:
            angle -= math.pi
        elif angle < -math.pi / 2:
            angle += math.pi
        axes = tuple(math.sqrt(CHI2_95_2DOF * max(x, 0.0)) for x in (w[1], w[0]))
        out.append(Ellipse((float(c[0]), float(c[1])), axes, angle))
    return out
