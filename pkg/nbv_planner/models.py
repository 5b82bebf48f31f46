from enum import Enum
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

GroundTruthMode = Literal["observable", "full"]


class Architecture(str, Enum):
    """Network layouts with a stable on-disk id."""

    NBVNET = "nbvnet"
    FCBASELINE = "fcbaseline"

    @property
    def code(self) -> int:
        return {"nbvnet": 1, "fcbaseline": 2}[self.value]

    @classmethod
    def from_code(cls, code: int) -> "Architecture":
        for arch in cls:
            if arch.code == code:
                return arch
        raise ValueError(f"unknown architecture id {code}")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class SceneConfig(_Section):
    image_width: int = Field(64, ge=1, description="Depth image width in pixels")
    image_height: int = Field(64, ge=1, description="Depth image height in pixels")
    fov_y_deg: float = Field(45.0, gt=0.0, lt=180.0, description="Vertical field of view")
    sphere_radius: float = Field(0.4, gt=0.0, description="View sphere radius in meters")
    object_scale: float = Field(
        0.12, gt=0.0, le=0.25, description="Half-extent of procedural objects in meters"
    )
    sample_spacing: float = Field(
        0.004, gt=0.0, description="Ground-truth surface sampling spacing in meters"
    )


class MetricConfig(_Section):
    gap: float = Field(0.005, gt=0.0, description="Correspondence radius in meters")
    thresh1: float = Field(0.5, ge=0.0, le=1.0, description="Minimum overlap fraction")
    thresh2: int = Field(3, ge=0, description="Minimum feature count in the common region")
    leaf: float = Field(0.005, gt=0.0, description="Downsampling cell edge in meters")
    curvature_tau: float = Field(
        0.04, gt=0.0, le=1.0 / 3.0, description="Surface variation threshold for features"
    )
    neighborhood: Optional[float] = Field(
        None, gt=0.0, description="Feature neighborhood radius (default 4 x gap)"
    )

    @property
    def feature_radius(self) -> float:
        return self.neighborhood if self.neighborhood is not None else 4.0 * self.gap


class GridConfig(_Section):
    edge: int = Field(32, ge=1, description="Voxels per grid edge")
    log_odds_hit: float = Field(0.85, gt=0.0, description="Log-odds increment for a hit")
    log_odds_miss: float = Field(-0.4, lt=0.0, description="Log-odds increment for a miss")
    p_min: float = Field(0.12, gt=0.0, lt=0.5, description="Lower probability clamp")
    p_max: float = Field(0.97, gt=0.5, lt=1.0, description="Upper probability clamp")
    state_epsilon: float = Field(0.01, ge=0.0, lt=0.5, description="Unknown band around 0.5")
    margin: float = Field(1.1, ge=1.0, description="Grid edge over object extent")


class ReconstructionConfig(_Section):
    s_cov: float = Field(0.8, ge=0.0, le=1.0, description="Stop coverage")
    max_iter: int = Field(10, ge=1, description="Maximum iterations per run")
    search_views: int = Field(14, ge=1, description="Candidate views in the search space")
    class_views: int = Field(14, ge=1, le=255, description="Number of NBV classes")
    initial_view_count: Optional[int] = Field(
        None, ge=1, description="Initial views per object (default: every search view)"
    )
    plateau_eps: float = Field(0.002, ge=0.0, description="Coverage plateau threshold")
    ground_truth: GroundTruthMode = Field(
        "observable", description="Ground truth: observable surface or full surface"
    )
    search_hemisphere: bool = Field(True, description="Restrict the search space to z >= 0")
    metric: MetricConfig = Field(default_factory=MetricConfig)
    grid: GridConfig = Field(default_factory=GridConfig)


class TrainConfig(_Section):
    learning_rate: float = Field(0.001, gt=0.0, description="Adam step size")
    batch_size: int = Field(200, ge=1, description="Mini-batch size")
    micro_batch: int = Field(25, ge=1, description="Examples per forward/backward chunk")
    epochs: int = Field(500, ge=0, description="Training epochs")
    keep_prob: float = Field(0.7, gt=0.0, le=1.0, description="Dropout keep probability")
    beta1: float = Field(0.9, ge=0.0, lt=1.0, description="Adam first moment decay")
    beta2: float = Field(0.999, ge=0.0, lt=1.0, description="Adam second moment decay")
    eps: float = Field(1e-8, gt=0.0, description="Adam denominator epsilon")
    split: float = Field(0.8, gt=0.0, lt=1.0, description="Training fraction")
    seed: int = Field(0, ge=0, description="Seed for initialization, shuffling and dropout")


class ToolkitConfig(_Section):
    scene: SceneConfig = Field(default_factory=SceneConfig)
    reconstruction: ReconstructionConfig = Field(default_factory=ReconstructionConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)

    @model_validator(mode="after")
    def _check_spacing(self) -> "ToolkitConfig":
        if self.scene.sample_spacing > self.reconstruction.metric.gap * 2:
            raise ValueError("scene.sample_spacing must not exceed twice metric.gap")
        return self

    @property
    def metric(self) -> MetricConfig:
        return self.reconstruction.metric

    @property
    def grid(self) -> GridConfig:
        return self.reconstruction.grid


class ObjectSpec(BaseModel):
    """An object to reconstruct: a procedural kind with seed, or a PLY path."""

    model_config = ConfigDict(frozen=True)

    object_id: int = Field(..., ge=0)
    kind: str
    seed: int = 0
    path: Optional[str] = None

    @field_validator("kind")
    @classmethod
    def _kind_known(cls, value: str) -> str:
        if value not in {"sphere", "box", "lshape", "torus", "capsule", "composite", "ply"}:
            raise ValueError(f"unknown object kind: {value}")
        return value

    @property
    def label(self) -> str:
        return self.path if self.kind == "ply" else f"{self.kind}:{self.seed}"
