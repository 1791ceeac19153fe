"""Scenario files: schema, loading, saving and model construction."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import numerics
from .errors import InvalidInputError, ScenarioError
from .estimation import DEFAULT_P0_SCALE
from .models import (
    ConstantField,
    GradientField,
    ProcessModel,
    RegionField,
    SensorSpec,
    VehicleState,
)
from .roadmap import DEFAULT_RESOLUTION, Roadmap, Workspace, build_prm

SCHEMA_VERSION = 1

Prob = Annotated[float, Field(ge=0.0, le=1.0)]
Point2 = tuple[float, float]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ConstantDetection(_Strict):
    type: Literal["constant"] = "constant"
    p: Prob


class GradientDetection(_Strict):
    type: Literal["gradient"]
    axis: Literal["x", "y"]
    p_at_min: Prob
    p_at_max: Prob
    lo: float
    hi: float

    @model_validator(mode="after")
    def _ordered(self):
        if not self.hi > self.lo:
            raise ValueError("hi must exceed lo")
        return self


class Region(_Strict):
    polygon: list[Point2] = Field(min_length=3)
    p: Prob


class RegionDetection(_Strict):
    type: Literal["regions"]
    regions: list[Region]
    default: Prob


Detection = Annotated[Union[ConstantDetection, GradientDetection, RegionDetection], Field(discriminator="type")]


class BeaconSensor(_Strict):
    kind: Literal["range-beacon"]
    name: str = ""
    position: Point2
    sigma0: float = Field(gt=0)
    alpha: float = Field(default=0.0, ge=0)
    detection: Detection = ConstantDetection(p=1.0)


class CornerSensor(_Strict):
    kind: Literal["corner-detector"]
    name: str = ""
    vertices: Union[Literal["obstacles"], list[Point2]] = "obstacles"
    fixed_variance: float = Field(gt=0)
    bearing_variance: Optional[float] = Field(default=None, gt=0)
    max_range: float = Field(default=1.0, gt=0)
    detection: Detection = ConstantDetection(p=1.0)


class LinearSensor(_Strict):
    kind: Literal["linear"]
    name: str = ""
    H: list[list[float]]
    R: list[list[float]]
    position: Optional[Point2] = None
    max_range: Optional[float] = Field(default=None, gt=0)
    detection: Detection = ConstantDetection(p=1.0)


Sensor = Annotated[Union[BeaconSensor, CornerSensor, LinearSensor], Field(discriminator="kind")]


class WorkspaceSpec(_Strict):
    bounds: tuple[float, float, float, float]
    obstacles: list[list[Point2]] = []


class ProcessSpec(_Strict):
    speed: float = Field(default=DEFAULT_RESOLUTION, gt=0)
    Q: list[list[float]]
    F: Optional[list[list[float]]] = None
    P0: Optional[list[list[float]]] = None


class PRMSpec(_Strict):
    n_samples: int = Field(ge=0)
    radius: float = Field(ge=0)
    resolution: float = Field(default=DEFAULT_RESOLUTION, gt=0)
    seed: int = Field(ge=0)


class Pose(_Strict):
    x: float
    y: float
    heading: float = 0.0


class PlannerSpec(_Strict):
    variant: Literal["stochastic", "simplified", "uniform"] = "stochastic"
    metric: Literal["trace", "max-eig"] = "max-eig"


class Scenario(_Strict):
    version: Literal[1]
    comment: str = ""
    workspace: WorkspaceSpec
    sensors: list[Sensor]
    process: ProcessSpec
    prm: PRMSpec
    start: Pose
    goal: Pose
    planner: PlannerSpec = PlannerSpec()

    @field_validator("sensors")
    @classmethod
    def _names_unique(cls, v):
        names = [s.name for s in v if s.name]
        if len(names) != len(set(names)):
            raise ValueError("sensor names must be unique")
        return v


def _loc(loc) -> str:
    out = []
    for part in loc:
        if isinstance(part, int):
            out.append(f"[{part}]")
        else:
            out.append(("." if out else "") + str(part))
    return "".join(out)


def parse_scenario(data) -> Scenario:
    try:
        sc = Scenario.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        # drop discriminator tags pydantic inserts into the location
        loc = [p for p in err["loc"] if p not in ("range-beacon", "corner-detector", "linear", "constant", "gradient", "regions")]
        raise ScenarioError(err["msg"], _loc(loc) or "<root>") from None
    build_models(sc)  # surface model invariant violations at load time
    return sc


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc}") from None
    if not text.strip():
        raise ScenarioError(f"{path} is empty", "<file>")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"parse error at line {exc.lineno} column {exc.colno}: {exc.msg}", "<file>") from None
    return parse_scenario(data)


def dump_scenario(sc: Scenario) -> str:
    return json.dumps(sc.model_dump(mode="json"), indent=2) + "\n"


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(dump_scenario(sc))


def bundled_path(name: str) -> Path:
    """Path of a bundled scenario such as ``"fig2.json"``."""
    return Path(str(resources.files("rbrm") / "data" / name))


def load_bundled(name: str) -> Scenario:
    """Load a bundled scenario by name, e.g. ``"fig2"`` or ``"fig2.json"``."""
    return load_scenario(bundled_path(name if name.endswith(".json") else name + ".json"))


# -- model construction ----------------------------------------------------------


@dataclass(eq=False)
class ScenarioModels:
    workspace: Workspace
    sensors: list
    model: ProcessModel
    P0: np.ndarray
    start: VehicleState
    goal: VehicleState


def _field(d):
    if isinstance(d, ConstantDetection):
        return ConstantField(d.p)
    if isinstance(d, GradientDetection):
        return GradientField(0 if d.axis == "x" else 1, d.p_at_min, d.p_at_max, d.lo, d.hi)
    return RegionField(tuple((tuple(r.polygon), r.p) for r in d.regions), d.default)


def _sensor(s, workspace: WorkspaceSpec) -> SensorSpec:
    f = _field(s.detection)
    if isinstance(s, BeaconSensor):
        return SensorSpec("range-beacon", f, s.name, position=s.position, sigma0=s.sigma0, alpha=s.alpha)
    if isinstance(s, CornerSensor):
        if s.vertices == "obstacles":
            verts = [v for poly in workspace.obstacles for v in poly]
        else:
            verts = s.vertices
        if not verts:
            raise InvalidInputError("corner detector has no vertices")
        return SensorSpec(
            "corner-detector", f, s.name, vertices=np.array(verts), fixed_variance=s.fixed_variance,
            bearing_variance=s.bearing_variance, max_range=s.max_range,
        )
    return SensorSpec(
        "linear", f, s.name, position=s.position, H=np.array(s.H), R=np.array(s.R),
        max_range=np.inf if s.max_range is None else s.max_range,
    )


def build_models(sc: Scenario) -> ScenarioModels:
    try:
        ws = Workspace(sc.workspace.bounds, [np.array(o) for o in sc.workspace.obstacles])
    except InvalidInputError as exc:
        raise ScenarioError(str(exc), "workspace") from None
    sensors = []
    for i, s in enumerate(sc.sensors):
        try:
            sensors.append(_sensor(s, sc.workspace))
        except (InvalidInputError, ValueError) as exc:
            raise ScenarioError(str(exc), f"sensors[{i}]") from None
    try:
        model = ProcessModel(np.array(sc.process.Q, dtype=float), None if sc.process.F is None else np.array(sc.process.F), sc.process.speed)
    except (InvalidInputError, ValueError) as exc:
        raise ScenarioError(str(exc), "process") from None
    n = model.state_dim
    if any(s.kind != "linear" for s in sensors) and n < 2:
        raise ScenarioError("geometric sensors need a planar state (dimension >= 2)", "process.Q")
    for i, s in enumerate(sensors):
        if s.kind == "linear" and s.H.shape[1] != n:
            raise ScenarioError(f"H has {s.H.shape[1]} columns, state dimension is {n}", f"sensors[{i}].H")
    P0 = DEFAULT_P0_SCALE * np.eye(n) if sc.process.P0 is None else np.array(sc.process.P0, dtype=float)
    if P0.shape != (n, n):
        raise ScenarioError(f"P0 shape {P0.shape} does not match state dimension {n}", "process.P0")
    try:
        P0 = numerics.project_psd(P0)
    except InvalidInputError as exc:
        raise ScenarioError(str(exc), "process.P0") from None
    try:
        start = VehicleState(sc.start.x, sc.start.y, sc.start.heading)
        goal = VehicleState(sc.goal.x, sc.goal.y, sc.goal.heading)
    except InvalidInputError as exc:
        raise ScenarioError(str(exc), "start/goal") from None
    for name, pose in (("start", start), ("goal", goal)):
        if not ws.point_free(pose.position):
            raise ScenarioError("pose is not collision-free", name)
    return ScenarioModels(ws, sensors, model, P0, start, goal)


def build_roadmap(sc: Scenario, models: Optional[ScenarioModels] = None, resolution: Optional[float] = None, workers: int = 1) -> Roadmap:
    """Sample the scenario's PRM from its seed and compile every edge."""
    models = build_models(sc) if models is None else models
    rng = np.random.default_rng(sc.prm.seed)
    r = build_prm(models.workspace, sc.prm.n_samples, sc.prm.radius, models.start, models.goal, rng)
    res = sc.prm.resolution if resolution is None else resolution
    return r.compile(models.workspace, models.sensors, models.model, res, workers)
