"""Pydantic request/response models for the service endpoints."""

from __future__ import annotations

from pydantic import BaseModel


class HealthResponse(BaseModel):
    status: str
    version: str
    torch_threads: int


class DatasetGenRequest(BaseModel):
    out_dir: str
    seed: int = 0
    frame_size: int = 64
    shapes: list[str] = ["circle"]
    colors: list[str] = ["red", "green"]
    motions: list[str] = ["left", "right"]
    speed: float = 2.0
    clips_per_class: int = 50
    frames_per_clip: int = 16
    radius: float = 10.0
    force: bool = False


class ClassSummary(BaseModel):
    label: int
    caption: str
    clips: int


class DatasetGenResponse(BaseModel):
    path: str
    num_clips: int
    frames_per_clip: int
    classes: list[ClassSummary]


class TrainRequest(BaseModel):
    dataset_dir: str
    out_dir: str
    config_path: str | None = None
    resume: bool = False
    loss_svg: bool = False
    verbose: bool = False
    # optional per-key overrides of the training config
    seed: int | None = None
    n: int | None = None
    iters_stage1: int | None = None
    iters_per_step: int | None = None
    batch_size: int | None = None
    lr_g: float | None = None
    lr_d: float | None = None
    code_dim: int | None = None
    raw_dim: int | None = None
    noise_dim: int | None = None
    hidden_dim: int | None = None
    frame_size: int | None = None
    g_base_channels: int | None = None
    d_base_channels: int | None = None
    use_eq1_init: bool | None = None
    use_isp: bool | None = None
    nonsaturating_g: bool | None = None
    steps_mask: list[int] | None = None
    checkpoint_every: int | None = None
    # free-form key=value overrides, coerced to the config field types
    set_overrides: dict[str, str] | None = None


class TrainResponse(BaseModel):
    checkpoint: str
    stage: str
    global_iteration: int
    metrics_log: str
    loss_chart: str | None = None
    elapsed_seconds: float


class GenerateRequest(BaseModel):
    checkpoint: str
    caption: str
    count: int = 1
    seed: int = 0
    out_dir: str
    gif: bool = True


class SampleFiles(BaseModel):
    frames: list[str]
    gif: str | None = None


class GenerateResponse(BaseModel):
    frames_per_clip: int
    samples: list[SampleFiles]


class EvalRequest(BaseModel):
    checkpoint: str
    dataset_dir: str
    metrics: list[str] = ["fid", "is", "accuracy"]
    out_dir: str | None = None
    seed: int = 0
    num_frames: int = 200
    clips_per_caption: int = 16
    splits: int = 10
    nn_queries: int = 8


class EvalResponse(BaseModel):
    values: dict[str, float]
    details: dict = {}
    report_path: str | None = None


class InspectRequest(BaseModel):
    checkpoint: str


class InspectResponse(BaseModel):
    format_version: int
    stage: str
    iter_in_phase: int
    global_iteration: int
    parameter_counts: dict[str, int]
    config_hash: str
    frame_size: int
    clip_frames: int
    step_disc_input_channels: int | None = None
