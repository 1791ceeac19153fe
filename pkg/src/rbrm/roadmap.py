"""Probabilistic roadmap, per-edge bound transfers and the graph searches."""

from __future__ import annotations

import heapq
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from shapely import prepared
from shapely.geometry import LineString, Point, Polygon, box
from shapely.ops import unary_union

from . import kernels, numerics
from .bounds import MAX_SUBSET_SENSORS, PackedSteps, StepBoundParams, pack_steps, subset_coeff_arrays
from .errors import ComplexityGuardError, InvalidInputError, NoPathError
from .models import ProcessModel, SensorSpec, VehicleState, batch_info, detection_prob

DEFAULT_RESOLUTION = 0.05
IMPROVEMENT_TOL = 1e-12
EXACT_MAX_LABELS = 200_000
SEARCH_METHODS = ("label-correcting", "exact")


@dataclass(eq=False)
class Workspace:
    bounds: tuple
    obstacles: list = field(default_factory=list)

    def __post_init__(self):
        xmin, ymin, xmax, ymax = map(float, self.bounds)
        if not (xmax > xmin and ymax > ymin):
            raise InvalidInputError("workspace bounds need xmax > xmin and ymax > ymin")
        self.bounds = (xmin, ymin, xmax, ymax)
        self.obstacles = [np.asarray(o, dtype=float) for o in self.obstacles]
        polys = []
        for i, verts in enumerate(self.obstacles):
            poly = Polygon(verts)
            if not poly.is_valid or poly.area <= 0:
                raise InvalidInputError(f"obstacle {i} is not a simple polygon")
            polys.append(poly)
        self._box = box(*self.bounds)
        self._blocked = prepared.prep(unary_union(polys)) if polys else None

    @property
    def vertices(self) -> np.ndarray:
        if not self.obstacles:
            return np.zeros((0, 2))
        return np.concatenate(self.obstacles)

    def point_free(self, p) -> bool:
        pt = Point(float(p[0]), float(p[1]))
        if not self._box.covers(pt):
            return False
        return self._blocked is None or not self._blocked.intersects(pt)


def segment_collision_free(p, q, w: Workspace) -> bool:
    """True iff segment pq touches no obstacle (interior or boundary)."""
    if w._blocked is None:
        return True
    if np.allclose(p, q):
        geom = Point(float(p[0]), float(p[1]))
    else:
        geom = LineString([(float(p[0]), float(p[1])), (float(q[0]), float(q[1]))])
    return not w._blocked.intersects(geom)


@dataclass
class BeliefNode:
    id: int
    pose: VehicleState
    bound: float = math.inf
    path: tuple = ()


@dataclass(eq=False)
class EdgeTransfer:
    """Bound transfer along one directed edge.

    ``positions[k]`` is where step ``k`` takes its measurements (the midpoint
    of the k-th sub-segment), so a reversed edge visits the same points in
    reverse order.
    """

    edge: tuple
    steps: list
    packed: PackedSteps
    positions: np.ndarray
    F: np.ndarray
    Q: np.ndarray
    info_total: np.ndarray

    def __len__(self):
        return len(self.steps)

    def apply(self, ell_in: float, variant="stochastic") -> float:
        return self.packed.fold(ell_in, variant)

    def reversed(self) -> "EdgeTransfer":
        steps = self.steps[::-1]
        return EdgeTransfer(
            (self.edge[1], self.edge[0]), steps, pack_steps(steps), self.positions[::-1].copy(),
            self.F[::-1].copy(), self.Q[::-1].copy(), self.info_total[::-1].copy(),
        )

    def with_sensor_probs(self, p_by_sensor) -> "EdgeTransfer":
        """Copy with detection probabilities ``p_by_sensor[sensor index]``."""
        p_by_sensor = np.asarray(p_by_sensor, dtype=float)
        steps = [s.with_probs(p_by_sensor[list(s.sensor_ids)]) for s in self.steps]
        packed = self.packed.with_p(p_by_sensor[self.packed.sensor_flat])
        return EdgeTransfer(self.edge, steps, packed, self.positions, self.F, self.Q, self.info_total)

    def with_probs(self, sensors: Sequence[SensorSpec]) -> "EdgeTransfer":
        """Re-price detection probabilities from ``sensors``' fields."""
        steps = [
            s.with_probs([detection_prob(sensors[j].detection, s.position) for j in s.sensor_ids])
            for s in self.steps
        ]
        return EdgeTransfer(self.edge, steps, pack_steps(steps), self.positions, self.F, self.Q, self.info_total)


def apply_transfer(t: EdgeTransfer, ell_in: float, variant="stochastic") -> float:
    if ell_in < 0:
        raise InvalidInputError("ell_in must be non-negative")
    return t.apply(ell_in, variant)


def sample_positions(p, q, resolution: float) -> np.ndarray:
    p = np.asarray(p, dtype=float)[:2]
    q = np.asarray(q, dtype=float)[:2]
    if not resolution > 0:
        raise InvalidInputError("resolution must be positive")
    length = float(np.hypot(*(q - p)))
    k = max(1, math.ceil(length / resolution - 1e-9))
    frac = (np.arange(1, k + 1) - 0.5) / k
    return p + frac[:, None] * (q - p)


def compile_positions(
    positions, sensors: Sequence[SensorSpec], model: ProcessModel, edge=(None, None)
) -> EdgeTransfer:
    """Bound step parameters at each nominal measurement position."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    k = len(positions)
    n = model.state_dim
    a = numerics.spectral_norm_sq(model.F)
    b = numerics.eig_extremes(model.Q).lambda_max
    infos = np.zeros((len(sensors), k, n, n))
    mask = np.zeros((len(sensors), k), dtype=bool)
    for j, s in enumerate(sensors):
        infos[j], mask[j] = batch_info(s, positions, n)
    steps = []
    for t in range(k):
        ids = tuple(int(j) for j in np.flatnonzero(mask[:, t]))
        if len(ids) > MAX_SUBSET_SENSORS:
            raise ComplexityGuardError(f"{len(ids)} sensors in range at {positions[t]}; guard is {MAX_SUBSET_SENSORS}")
        step_infos = infos[list(ids), t] if ids else np.zeros((0, n, n))
        c, d = subset_coeff_arrays(step_infos, a, b)
        probs = np.array([detection_prob(sensors[j].detection, positions[t]) for j in ids])
        steps.append(StepBoundParams(a, b, probs, step_infos, c, d, ids, positions[t]))
    F = np.broadcast_to(model.F, (k, n, n)).copy()
    Q = np.broadcast_to(model.Q, (k, n, n)).copy()
    total = infos.sum(axis=0) if len(sensors) else np.zeros((k, n, n))
    return EdgeTransfer(tuple(edge), steps, pack_steps(steps), positions, F, Q, total)


def compile_edge_transfer(
    edge,
    w: Optional[Workspace],
    sensors: Sequence[SensorSpec],
    model: ProcessModel,
    resolution: float = DEFAULT_RESOLUTION,
    roadmap: Optional["Roadmap"] = None,
) -> EdgeTransfer:
    """Compile the transfer for ``edge``.

    ``edge`` is either a node-id pair (needs ``roadmap``) or a pair of
    positions.
    """
    if roadmap is not None:
        i, l = edge
        p, q = roadmap.positions[i], roadmap.positions[l]
        ids = (i, l)
    else:
        p, q = (np.asarray(e, dtype=float) for e in edge)
        ids = (None, None)
    if w is not None and not segment_collision_free(p, q, w):
        raise InvalidInputError(f"edge {ids} is not collision-free")
    return compile_positions(sample_positions(p, q, resolution), sensors, model, ids)


@dataclass(eq=False)
class Roadmap:
    nodes: list
    adjacency: list
    start_id: int = 0
    goal_id: int = 1
    transfers: dict = field(default_factory=dict)

    @property
    def positions(self) -> np.ndarray:
        return np.array([[nd.pose.x, nd.pose.y] for nd in self.nodes])

    def edges(self):
        """Undirected edges as ``(i, l)`` with ``i < l``."""
        return [(i, l) for i, nbrs in enumerate(self.adjacency) for l in nbrs if i < l]

    def compile(self, w, sensors, model, resolution=DEFAULT_RESOLUTION, workers: int = 1) -> "Roadmap":
        """Compile both directions of every edge (forward once, then reversed)."""
        edges = self.edges()
        job = lambda e: compile_edge_transfer(e, w, sensors, model, resolution, roadmap=self)  # noqa: E731
        if workers > 1:
            with ThreadPoolExecutor(workers) as ex:
                compiled = list(ex.map(job, edges))
        else:
            compiled = [job(e) for e in edges]
        self.transfers = {}
        for e, t in zip(edges, compiled):
            self.transfers[e] = t
            self.transfers[(e[1], e[0])] = t.reversed()
        return self

    def _map_transfers(self, fn) -> "Roadmap":
        out = Roadmap(self.nodes, self.adjacency, self.start_id, self.goal_id)
        for e, t in self.transfers.items():
            if e[0] < e[1]:
                fwd = fn(t)
                out.transfers[e] = fwd
                out.transfers[(e[1], e[0])] = fwd.reversed()
        return out

    def with_probs(self, sensors) -> "Roadmap":
        """Copy with every transfer re-priced for new detection fields."""
        return self._map_transfers(lambda t: t.with_probs(sensors))

    def with_sensor_probs(self, p_by_sensor) -> "Roadmap":
        """Copy with one constant detection probability per sensor."""
        return self._map_transfers(lambda t: t.with_sensor_probs(p_by_sensor))

    def path_transfers(self, path) -> list:
        return [self.transfers[(path[i], path[i + 1])] for i in range(len(path) - 1)]


def _connected(adjacency, s, g) -> bool:
    seen = {s}
    stack = [s]
    while stack:
        u = stack.pop()
        if u == g:
            return True
        for v in adjacency[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return False


def build_prm(w: Workspace, n_samples: int, radius: float, start, goal, rng: np.random.Generator, max_tries: int = 1000) -> Roadmap:
    """Uniform rejection-sampled PRM; node 0 is the start, node 1 the goal."""
    start = start if isinstance(start, VehicleState) else VehicleState(*start)
    goal = goal if isinstance(goal, VehicleState) else VehicleState(*goal)
    for name, s in (("start", start), ("goal", goal)):
        if not w.point_free(s.position):
            raise InvalidInputError(f"{name} pose is not collision-free")
    xmin, ymin, xmax, ymax = w.bounds
    pts = [start.position, goal.position]
    tries = 0
    while len(pts) < n_samples + 2:
        cand = np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)])
        tries += 1
        if w.point_free(cand):
            pts.append(cand)
        elif tries > max_tries * max(1, n_samples):
            raise InvalidInputError("free space too small for rejection sampling")
    pts = np.array(pts)
    nodes = [BeliefNode(0, start), BeliefNode(1, goal)]
    nodes += [BeliefNode(i, VehicleState(float(x), float(y))) for i, (x, y) in enumerate(pts[2:], start=2)]
    adjacency = [[] for _ in pts]
    for i in range(len(pts)):
        for l in range(i + 1, len(pts)):
            if float(np.hypot(*(pts[l] - pts[i]))) <= radius and segment_collision_free(pts[i], pts[l], w):
                adjacency[i].append(l)
                adjacency[l].append(i)
    r = Roadmap(nodes, adjacency)
    if not _connected(adjacency, 0, 1):
        raise NoPathError("start and goal lie in different roadmap components")
    return r


# -- searches ----------------------------------------------------------------


class SearchResult:
    """Outcome of a roadmap search; unpacks as ``(path, goal_value)``."""

    def __init__(self, path, goal_value, labels):
        self.path = list(path)
        self.goal_value = float(goal_value)
        self.labels = labels

    def __iter__(self):
        return iter((self.path, self.goal_value))

    def __repr__(self):
        return f"SearchResult(path={self.path}, goal_value={self.goal_value!r})"


def _label_correcting(r: Roadmap, init, relax, cost):
    """Best-first label correcting with the simple-path guard.

    ``relax(label, i, l)`` returns the label carried to ``l``; ``cost``
    orders labels. A node is re-pushed whenever its label strictly improves.
    """
    nodes = [BeliefNode(nd.id, nd.pose) for nd in r.nodes]
    labels = [None] * len(nodes)
    s = r.start_id
    labels[s] = init
    nodes[s].bound = cost(init)
    nodes[s].path = (s,)
    heap = [(nodes[s].bound, s, 0)]
    version = [0] * len(nodes)
    while heap:
        key, i, ver = heapq.heappop(heap)
        if ver != version[i]:
            continue
        ni = nodes[i]
        on_path = set(ni.path)
        for l in r.adjacency[i]:
            if l in on_path:
                continue
            new_label = relax(labels[i], i, l)
            new_cost = cost(new_label)
            if new_cost < nodes[l].bound - IMPROVEMENT_TOL:
                labels[l] = new_label
                nodes[l].bound = new_cost
                nodes[l].path = ni.path + (l,)
                version[l] += 1
                heapq.heappush(heap, (new_cost, l, version[l]))
    g = nodes[r.goal_id]
    if not math.isfinite(g.bound):
        raise NoPathError("goal unreachable on the roadmap")
    return SearchResult(g.path, g.bound, nodes)


def _exact_simple_paths(r: Roadmap, ell0: float, code: int, max_labels: int) -> SearchResult:
    """Minimum goal bound over all simple start-goal paths.

    Keeps every label ``(bound, visited set)`` at a node that no other label
    dominates (lower or equal bound on a subset of the visited nodes). A
    dominating label can follow every continuation of the dominated one to
    an equal or lower bound because the transfers are monotone, so pruning
    never loses the optimum. Worst-case exponential; ``max_labels`` guards.
    """
    transfers = r.transfers
    s, g = r.start_id, r.goal_id
    first = [float(ell0), 1 << s, True, (s,)]
    labels = [[] for _ in r.nodes]
    labels[s].append(first)
    heap = [(float(ell0), 0, s, first)]
    created = 1
    while heap:
        ell, _, i, lab = heapq.heappop(heap)
        if not lab[2] or i == g:
            continue
        mask = lab[1]
        for l in r.adjacency[i]:
            if mask >> l & 1:
                continue
            new = transfers[(i, l)].apply(ell, code)
            new_mask = mask | (1 << l)
            if any(o[0] <= new + IMPROVEMENT_TOL and not o[1] & ~new_mask for o in labels[l]):
                continue
            keep = []
            for o in labels[l]:
                if new <= o[0] and not new_mask & ~o[1]:
                    o[2] = False
                else:
                    keep.append(o)
            new_lab = [new, new_mask, True, lab[3] + (l,)]
            keep.append(new_lab)
            labels[l] = keep
            created += 1
            if created > max_labels:
                raise ComplexityGuardError(f"exact search exceeded {max_labels} labels; use the label-correcting method")
            heapq.heappush(heap, (new, created, l, new_lab))
    if not labels[g]:
        raise NoPathError("goal unreachable on the roadmap")
    nodes = [BeliefNode(nd.id, nd.pose) for nd in r.nodes]
    for nd, labs in zip(nodes, labels):
        if labs:
            best = min(labs, key=lambda o: o[0])
            nd.bound, nd.path = best[0], best[3]
    return SearchResult(nodes[g].path, nodes[g].bound, nodes)


def rbrm_search(
    r: Roadmap, ell0: float, variant="stochastic", method: str = "label-correcting", max_labels: int = EXACT_MAX_LABELS
) -> SearchResult:
    """Minimum goal bound search over a compiled roadmap.

    ``label-correcting`` keeps one best-yet bound per node and never extends
    a path onto a node it already visits. It is fast but can miss the best
    simple path: the best-yet path into a node may already contain the node
    the optimal continuation needs. ``exact`` returns the optimum over all
    simple paths and is meant for small roadmaps.
    """
    if ell0 < 0:
        raise InvalidInputError("ell0 must be non-negative")
    code = kernels.variant_code(variant)
    if method == "exact":
        return _exact_simple_paths(r, float(ell0), code, max_labels)
    if method != "label-correcting":
        raise InvalidInputError(f"unknown search method {method!r}")
    transfers = r.transfers
    return _label_correcting(r, float(ell0), lambda ell, i, l: transfers[(i, l)].apply(ell, code), float)


def _cov_cost(metric):
    if metric == "trace":
        return lambda P: float(np.trace(P))
    if metric in ("max-eig", "eig"):
        return lambda P: numerics.eig_extremes(P).lambda_max
    raise InvalidInputError(f"unknown metric {metric!r}")


def brm_baseline_search(r: Roadmap, P0, metric="trace") -> SearchResult:
    """Search propagating the full covariance with every sensor reporting."""
    P0 = numerics.project_psd(P0)
    cost = _cov_cost(metric)
    transfers = r.transfers

    def relax(P, i, l):
        t = transfers[(i, l)]
        return kernels.fold_covariance(P, t.F, t.Q, t.info_total)

    return _label_correcting(r, P0, relax, cost)


def path_bound_trace(r: Roadmap, path, ell0: float, variant="stochastic") -> np.ndarray:
    from .bounds import concat_packed

    if len(path) < 2:
        return np.array([float(ell0)])
    return concat_packed([t.packed for t in r.path_transfers(path)]).trace(ell0, variant)


def node_values_along(r: Roadmap, path, ell0: float, variant="stochastic") -> list:
    vals = [float(ell0)]
    for t in r.path_transfers(path):
        vals.append(t.apply(vals[-1], variant))
    return vals
