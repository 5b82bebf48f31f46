"""Closed-loop reconstruction driven by a predictor, plus evaluation statistics."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, NamedTuple, Optional, Protocol, Sequence

import numpy as np

from nbv_planner.config import worker_count
from nbv_planner.errors import InvalidArgumentError
from nbv_planner.grid import OccupancyGrid, to_tensor
from nbv_planner.metrics import overlap
from nbv_planner.models import ReconstructionConfig, SceneConfig
from nbv_planner.net import NetworkParams, check_input_edge, predict
from nbv_planner.oracle import (
    ReconstructionState,
    Scenario,
    prepare_scenario,
    resolution_optimal_nbv,
)
from nbv_planner.scene import PointCloud, TriangleMesh, View, ViewSet


class Termination(str, Enum):
    REPEATED_POSE = "repeated_pose"
    COVERAGE_PLATEAU = "coverage_plateau"
    MAX_ITERATIONS = "max_iterations"


class EpisodeStep(NamedTuple):
    iteration: int
    view_id: int
    coverage: float
    overlap: float
    grid_hash: str


@dataclass
class EpisodeLog:
    object_id: int
    seed: int
    episode: int
    initial_view: int
    policy: str
    steps: list[EpisodeStep] = field(default_factory=list)
    termination: Termination = Termination.MAX_ITERATIONS

    @property
    def final_coverage(self) -> float:
        return self.steps[-1].coverage if self.steps else 0.0

    @property
    def iterations(self) -> int:
        return len(self.steps)


@dataclass
class EpisodeContext:
    """What a predictor may look at before choosing the next class."""

    scenario: Scenario
    grid: OccupancyGrid
    p_acu: PointCloud
    covered: np.ndarray
    visited: tuple[int, ...]
    current: View
    rng: np.random.Generator


class Predictor(Protocol):
    name: str

    def choose(self, ctx: EpisodeContext) -> int:
        ...


class NetworkPolicy:
    """Feeds the occupancy grid to a trained network and moves to the predicted class."""

    name = "network"

    def __init__(self, params: NetworkParams):
        self.params = params

    def choose(self, ctx: EpisodeContext) -> int:
        label, _ = predict(self.params, to_tensor(ctx.grid))
        return label


class RandomPolicy:
    name = "random"

    def choose(self, ctx: EpisodeContext) -> int:
        return int(ctx.rng.integers(0, len(ctx.scenario.class_set)))


class OraclePolicy:
    """Resolution-optimal NBV over the class set.

    With `constrained=False` the overlap and feature constraints are ignored and
    the largest coverage gain among unvisited classes wins.
    """

    name = "oracle"

    def __init__(self, constrained: bool = True):
        self.constrained = constrained

    def choose(self, ctx: EpisodeContext) -> int:
        if ctx.p_acu.is_empty:
            return ctx.current.id
        scenario = ctx.scenario
        result = resolution_optimal_nbv(
            ctx.p_acu,
            scenario.w_obj,
            scenario.perceptions,
            scenario.cfg.metric,
            grid=ctx.grid,
            visited=ctx.visited,
            covered=ctx.covered,
            view_masks=scenario.view_masks,
        )
        if self.constrained:
            return result.nbv.id if result.feasible and result.nbv is not None else ctx.current.id
        unvisited = [c for c in result.per_candidate if not c.visited]
        if not unvisited:
            return ctx.current.id
        return max(unvisited, key=lambda c: (c.delta, -c.view_id)).view_id


def episode_scenario(
    mesh: TriangleMesh,
    scene: SceneConfig,
    cfg: ReconstructionConfig,
    object_id: int = 0,
    workers: Optional[int] = None,
) -> Scenario:
    """Scenario whose perceptions are those of the class set."""
    class_cfg = cfg.model_copy(update={"search_views": cfg.class_views})
    return prepare_scenario(mesh, scene, class_cfg, object_id, workers)


def run_episode(
    scenario: Scenario,
    predictor: Predictor,
    initial_view: View,
    seed: int = 0,
    episode: int = 0,
) -> EpisodeLog:
    """Perceive, integrate, update the grid, predict, move; until a stop rule fires.

    Coverage is measured against ground truth for the log and the plateau rule
    only; the predictor never sees it unless it is the oracle.
    """
    cfg = scenario.cfg
    class_set: ViewSet = scenario.class_set
    perceptions = scenario.perceptions
    if len(perceptions) != len(class_set):
        raise InvalidArgumentError("episode perceptions must cover exactly the class set")
    if not 0 <= initial_view.id < len(class_set) or class_set[initial_view.id] != initial_view:
        raise InvalidArgumentError(f"initial view {initial_view.id} is not in the class set")
    if isinstance(predictor, NetworkPolicy):
        check_input_edge(predictor.params, cfg.grid.edge)
        if predictor.params.num_classes != len(class_set):
            raise InvalidArgumentError(
                f"network predicts {predictor.params.num_classes} classes, "
                f"class set has {len(class_set)}"
            )

    rng = np.random.Generator(np.random.PCG64([seed, scenario.object_id, episode]))
    log = EpisodeLog(scenario.object_id, seed, episode, initial_view.id, predictor.name)
    state = ReconstructionState.start(scenario)
    view = initial_view
    previous = 0.0
    for iteration in range(1, cfg.max_iter + 1):
        z = perceptions.clouds[view.id]
        matched = 0.0
        if not (z.is_empty or state.p_acu.is_empty):
            matched = overlap(z, state.p_acu, cfg.metric.gap)
        state.integrate(scenario, view)
        current = state.coverage
        log.steps.append(
            EpisodeStep(iteration, view.id, current, matched, state.grid.snapshot_hash())
        )

        if iteration >= 2 and current - previous < cfg.plateau_eps:
            log.termination = Termination.COVERAGE_PLATEAU
            break
        previous = current
        if iteration == cfg.max_iter:
            log.termination = Termination.MAX_ITERATIONS
            break

        ctx = EpisodeContext(
            scenario, state.grid, state.p_acu, state.covered, tuple(state.visited), view, rng
        )
        chosen = predictor.choose(ctx)
        if not 0 <= chosen < len(class_set):
            raise InvalidArgumentError(f"predictor chose class {chosen} outside the class set")
        if chosen in state.visited:
            log.termination = Termination.REPEATED_POSE
            break
        view = class_set[chosen]
    return log


def draw_initial_views(class_set: ViewSet, object_id: int, episodes: int, seed: int) -> list[View]:
    """Uniform random initial poses, fixed per (seed, object) so policies are paired."""
    if episodes < 1:
        raise InvalidArgumentError(f"episodes per object must be positive, got {episodes}")
    rng = np.random.Generator(np.random.PCG64([seed, object_id]))
    return [class_set[int(i)] for i in rng.integers(0, len(class_set), size=episodes)]


class ObjectSummary(NamedTuple):
    object_id: int
    name: str
    mean_cov: float
    std_cov: float
    mean_iters: float
    episodes: int


@dataclass
class EvalSummary:
    policy: str
    rows: list[ObjectSummary] = field(default_factory=list)
    logs: list[EpisodeLog] = field(default_factory=list)

    @classmethod
    def from_logs(
        cls, policy: str, logs: Sequence[EpisodeLog], names: Mapping[int, str]
    ) -> "EvalSummary":
        ordered = sorted(logs, key=lambda log: (log.object_id, log.episode))
        rows = []
        for object_id in sorted({log.object_id for log in ordered}):
            mine = [log for log in ordered if log.object_id == object_id]
            finals = np.array([log.final_coverage for log in mine])
            iters = np.array([log.iterations for log in mine], dtype=np.float64)
            rows.append(
                ObjectSummary(
                    object_id=object_id,
                    name=names.get(object_id, str(object_id)),
                    mean_cov=float(finals.mean()),
                    std_cov=float(finals.std()),
                    mean_iters=float(iters.mean()),
                    episodes=len(mine),
                )
            )
        return cls(policy, rows, list(ordered))

    @property
    def mean_coverage(self) -> float:
        return float(np.mean([log.final_coverage for log in self.logs])) if self.logs else 0.0


def evaluate(
    scenarios: Sequence[Scenario],
    predictor: Predictor,
    episodes_per_object: int,
    seed: int = 0,
    names: Optional[Mapping[int, str]] = None,
    workers: Optional[int] = None,
) -> EvalSummary:
    """Seeded episodes for every object, aggregated per object."""
    jobs = []
    for scenario in scenarios:
        starts = draw_initial_views(
            scenario.class_set, scenario.object_id, episodes_per_object, seed
        )
        jobs += [(scenario, start, index) for index, start in enumerate(starts)]

    with ThreadPoolExecutor(max_workers=workers or worker_count()) as pool:
        logs = list(
            pool.map(lambda job: run_episode(job[0], predictor, job[1], seed, job[2]), jobs)
        )
    return EvalSummary.from_logs(predictor.name, logs, names or {})


def compare_policies(
    scenarios: Sequence[Scenario],
    predictors: Sequence[Predictor],
    episodes_per_object: int,
    seed: int = 0,
    names: Optional[Mapping[int, str]] = None,
    workers: Optional[int] = None,
) -> dict[str, EvalSummary]:
    """Evaluate several predictors on identical initial poses."""
    return {
        p.name: evaluate(scenarios, p, episodes_per_object, seed, names, workers)
        for p in predictors
    }
