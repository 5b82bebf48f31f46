"""Resolution-optimal next-best-view search and dataset example generation."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional, Sequence

import numpy as np

from nbv_planner.config import worker_count
from nbv_planner.errors import InvalidArgumentError
from nbv_planner.grid import (
    OccupancyGrid,
    VoxelState,
    classify,
    grid_for_object,
    to_tensor,
    update_grid,
)
from nbv_planner.metrics import count_features, coverage_mask, downsize_filter, overlap_mask
from nbv_planner.models import MetricConfig, ReconstructionConfig, SceneConfig
from nbv_planner.scene import (
    PointCloud,
    TriangleMesh,
    View,
    ViewSet,
    ViewSetKind,
    generate_view_sphere,
    perceive,
    sample_surface,
)


@dataclass(frozen=True)
class PerceptionSet:
    """The search space and the perception each of its views would produce."""

    views: ViewSet
    clouds: tuple[PointCloud, ...]

    def __post_init__(self) -> None:
        if len(self.clouds) != len(self.views):
            raise InvalidArgumentError(
                f"{len(self.clouds)} clouds for a search space of {len(self.views)} views"
            )

    def __len__(self) -> int:
        return len(self.views)


def build_perception_set(
    mesh: TriangleMesh, views: ViewSet, scene: SceneConfig, workers: Optional[int] = None
) -> PerceptionSet:
    """Render every view of the search space."""
    fov = np.deg2rad(scene.fov_y_deg)

    def render(view: View) -> PointCloud:
        return perceive(mesh, view, scene.image_width, scene.image_height, fov)

    with ThreadPoolExecutor(max_workers=workers or worker_count()) as pool:
        clouds = tuple(pool.map(render, views.views))
    return PerceptionSet(views, clouds)


class CandidateAudit(NamedTuple):
    view_id: int
    overlap: float
    features: Optional[int]
    delta: float
    feasible: bool
    visited: bool = False


@dataclass(frozen=True)
class OracleResult:
    nbv: Optional[View]
    delta: float
    feasible: bool
    per_candidate: tuple[CandidateAudit, ...] = ()


def resolution_optimal_nbv(
    p_acu: PointCloud,
    w_obj: PointCloud,
    perceptions: PerceptionSet,
    cfg: MetricConfig,
    *,
    grid: Optional[OccupancyGrid] = None,
    visited: Sequence[int] = (),
    covered: Optional[np.ndarray] = None,
    view_masks: Optional[Sequence[np.ndarray]] = None,
) -> OracleResult:
    """Exhaustive search for the feasible view with the largest coverage gain.

    A candidate is feasible when its overlap with `p_acu` exceeds thresh1, the
    common region holds more than thresh2 features and (given a grid) its voxel
    is not occupied. Visited views are reported but never selected. Ties go to
    the lowest view id.

    Args:
        covered: Coverage flags of `w_obj` already achieved (default: from `p_acu`).
        view_masks: Per-view coverage flags of `w_obj` (default: computed here).
    """
    if len(perceptions) == 0:
        raise InvalidArgumentError("the perception set is empty")
    if w_obj.is_empty:
        raise InvalidArgumentError("the ground-truth cloud is empty")
    if p_acu.is_empty:
        raise InvalidArgumentError("the accumulated cloud is empty")

    n_obj = len(w_obj)
    if covered is None:
        covered = coverage_mask(p_acu, w_obj, cfg.gap)
    base = int(np.count_nonzero(covered))
    skip = set(visited)

    audit: list[CandidateAudit] = []
    best: Optional[View] = None
    best_delta = -np.inf
    for view, z in zip(perceptions.views, perceptions.clouds):
        if view.id in skip:
            audit.append(CandidateAudit(view.id, 0.0, None, 0.0, False, visited=True))
            continue

        mask = view_masks[view.id] if view_masks is not None else coverage_mask(z, w_obj, cfg.gap)
        delta = (int(np.count_nonzero(covered | mask)) - base) / n_obj

        if z.is_empty:
            audit.append(CandidateAudit(view.id, 0.0, None, delta, False))
            continue
        matched = overlap_mask(z, p_acu, cfg.gap)
        ratio = float(matched.mean())
        if ratio <= cfg.thresh1:
            audit.append(CandidateAudit(view.id, ratio, None, delta, False))
            continue
        features = count_features(z.subset(matched), cfg.feature_radius, cfg.curvature_tau)
        feasible = features > cfg.thresh2 and not _collides(grid, view)
        audit.append(CandidateAudit(view.id, ratio, features, delta, feasible))
        if feasible and delta > best_delta:
            best, best_delta = view, delta

    if best is None:
        return OracleResult(None, 0.0, False, tuple(audit))
    return OracleResult(best, float(best_delta), True, tuple(audit))


def _collides(grid: Optional[OccupancyGrid], view: View) -> bool:
    if grid is None:
        return False
    index = grid.index_of(view.position)
    return index is not None and classify(grid, index) == VoxelState.OCCUPIED


def observable_ground_truth(
    w_full: PointCloud, perceptions: PerceptionSet, gap: float
) -> PointCloud:
    """The part of the dense sampling that at least one perception can see."""
    seen = np.zeros(len(w_full), dtype=bool)
    for z in perceptions.clouds:
        seen |= coverage_mask(z, w_full, gap)
    return w_full.subset(seen)


def view_to_class(view: View, class_set: ViewSet) -> int:
    """Class whose view direction is closest in great-circle distance (lowest id on ties)."""
    if len(class_set) == 0:
        raise InvalidArgumentError("the class set is empty")
    cosines = np.clip(class_set.directions() @ view.direction, -1.0, 1.0)
    return int(np.argmin(np.arccos(cosines)))


def select_initial_views(views: ViewSet, count: Optional[int] = None) -> list[View]:
    """Uniformly strided subset of the search space (all views when count is None)."""
    n = len(views)
    if count is None or count >= n:
        return list(views.views)
    if count < 1:
        raise InvalidArgumentError(f"initial view count must be positive, got {count}")
    return [views[(i * n) // count] for i in range(count)]


@dataclass(frozen=True)
class Scenario:
    """Everything needed to simulate reconstructions of one object."""

    object_id: int
    mesh: TriangleMesh
    perceptions: PerceptionSet
    class_set: ViewSet
    w_full: PointCloud
    w_obj: PointCloud
    view_masks: tuple[np.ndarray, ...]
    cfg: ReconstructionConfig

    @classmethod
    def from_mesh(
        cls,
        mesh: TriangleMesh,
        perceptions: PerceptionSet,
        class_set: ViewSet,
        cfg: ReconstructionConfig,
        spacing: float,
        object_id: int = 0,
    ) -> "Scenario":
        gap = cfg.metric.gap
        w_full = sample_surface(mesh, spacing)
        template = grid_for_object(mesh.half_extent(), cfg.grid)
        if not template.contains_all(w_full):
            raise InvalidArgumentError(f"object {object_id} does not fit inside its grid")

        if cfg.ground_truth == "observable":
            w_obj = observable_ground_truth(w_full, perceptions, gap)
            if w_obj.is_empty:
                raise InvalidArgumentError(f"object {object_id} is not visible from any view")
        else:
            w_obj = w_full
        masks = tuple(coverage_mask(z, w_obj, gap) for z in perceptions.clouds)
        return cls(object_id, mesh, perceptions, class_set, w_full, w_obj, masks, cfg)

    def fresh_grid(self) -> OccupancyGrid:
        return grid_for_object(self.mesh.half_extent(), self.cfg.grid)


def prepare_scenario(
    mesh: TriangleMesh,
    scene: SceneConfig,
    cfg: ReconstructionConfig,
    object_id: int = 0,
    workers: Optional[int] = None,
) -> Scenario:
    """Build the search space, class set and perceptions for one object."""
    search = generate_view_sphere(cfg.search_views, scene.sphere_radius, cfg.search_hemisphere)
    class_set = generate_view_sphere(
        cfg.class_views, scene.sphere_radius, cfg.search_hemisphere, ViewSetKind.CLASS_SET
    )
    perceptions = build_perception_set(mesh, search, scene, workers)
    return Scenario.from_mesh(mesh, perceptions, class_set, cfg, scene.sample_spacing, object_id)


@dataclass(frozen=True)
class Example:
    """One training example: the grid probabilities after an update and the NBV class."""

    grid: np.ndarray
    label: int
    object_id: int
    run_id: int
    iteration: int
    p_acu: Optional[PointCloud] = None


class RunTermination(str, Enum):
    COVERAGE = "coverage"
    MAX_ITERATIONS = "max_iterations"
    INFEASIBLE = "infeasible"


@dataclass
class RunRecord:
    object_id: int
    run_id: int
    initial_view: int
    views: list[int] = field(default_factory=list)
    coverages: list[float] = field(default_factory=list)
    examples: list[Example] = field(default_factory=list)
    audits: list[OracleResult] = field(default_factory=list)
    termination: RunTermination = RunTermination.MAX_ITERATIONS

    @property
    def final_coverage(self) -> float:
        return self.coverages[-1] if self.coverages else 0.0


@dataclass
class ReconstructionState:
    """Accumulated cloud, coverage flags and grid of one reconstruction in progress."""

    p_acu: PointCloud
    covered: np.ndarray
    grid: OccupancyGrid
    visited: list[int] = field(default_factory=list)

    @classmethod
    def start(cls, scenario: Scenario) -> "ReconstructionState":
        return cls(PointCloud(), np.zeros(len(scenario.w_obj), dtype=bool), scenario.fresh_grid())

    @property
    def coverage(self) -> float:
        return float(self.covered.mean()) if len(self.covered) else 0.0

    def integrate(self, scenario: Scenario, view: View) -> PointCloud:
        """Add the perception of `view`: union plus downsampling, coverage, grid update."""
        z = scenario.perceptions.clouds[view.id]
        self.p_acu = downsize_filter(self.p_acu.union(z), scenario.cfg.metric.leaf)
        self.covered |= scenario.view_masks[view.id]
        update_grid(self.grid, z, view.position)
        self.visited.append(view.id)
        return z

    def next_best_view(self, scenario: Scenario) -> OracleResult:
        return resolution_optimal_nbv(
            self.p_acu,
            scenario.w_obj,
            scenario.perceptions,
            scenario.cfg.metric,
            grid=self.grid,
            visited=self.visited,
            covered=self.covered,
            view_masks=scenario.view_masks,
        )


def generate_run(
    scenario: Scenario, initial_view: View, run_id: int, keep_clouds: bool = False
) -> RunRecord:
    """Reconstruct from one initial view, letting the oracle pick every next view.

    With `keep_clouds` every example also carries the accumulated cloud.
    """
    cfg = scenario.cfg
    record = RunRecord(scenario.object_id, run_id, initial_view.id)
    state = ReconstructionState.start(scenario)
    view = initial_view
    iteration = 0
    while state.coverage < cfg.s_cov and iteration < cfg.max_iter:
        state.integrate(scenario, view)
        record.views.append(view.id)
        record.coverages.append(state.coverage)

        if state.p_acu.is_empty:
            record.termination = RunTermination.INFEASIBLE
            break
        result = state.next_best_view(scenario)
        record.audits.append(result)
        if not result.feasible or result.nbv is None:
            record.termination = RunTermination.INFEASIBLE
            break
        record.examples.append(
            Example(
                grid=to_tensor(state.grid).astype(np.float32),
                label=view_to_class(result.nbv, scenario.class_set),
                object_id=scenario.object_id,
                run_id=run_id,
                iteration=iteration,
                p_acu=state.p_acu if keep_clouds else None,
            )
        )
        view = result.nbv
        iteration += 1
    else:
        if state.coverage >= cfg.s_cov:
            record.termination = RunTermination.COVERAGE
    return record


def generate_runs(
    scenario: Scenario,
    initial_views: Sequence[View],
    workers: Optional[int] = None,
    keep_clouds: bool = False,
) -> list[RunRecord]:
    """Independent runs in parallel; results keep the order of `initial_views`."""
    ids = {v.id for v in scenario.perceptions.views}
    for view in initial_views:
        if view.id not in ids:
            raise InvalidArgumentError(f"initial view {view.id} is not in the search space")

    with ThreadPoolExecutor(max_workers=workers or worker_count()) as pool:
        runs = pool.map(
            lambda item: generate_run(scenario, item[1], item[0], keep_clouds),
            enumerate(initial_views),
        )
        return list(runs)


def generate_examples(
    mesh: TriangleMesh,
    perceptions: PerceptionSet,
    class_set: ViewSet,
    cfg: ReconstructionConfig,
    initial_views: Sequence[View],
    spacing: float = SceneConfig().sample_spacing,
    object_id: int = 0,
    workers: Optional[int] = None,
) -> list[Example]:
    """All examples of the runs started from `initial_views`, in run then iteration order."""
    scenario = Scenario.from_mesh(mesh, perceptions, class_set, cfg, spacing, object_id)
    runs = generate_runs(scenario, initial_views, workers)
    return [example for run in runs for example in run.examples]


def replay_run(scenario: Scenario, view_ids: Sequence[int]) -> list[np.ndarray]:
    """Grid probabilities (float32) after integrating each view of a recorded sequence."""
    state = ReconstructionState.start(scenario)
    snapshots = []
    for view_id in view_ids:
        state.integrate(scenario, scenario.perceptions.views[view_id])
        snapshots.append(to_tensor(state.grid).astype(np.float32))
    return snapshots
