"""FastAPI service wrapping the core package.

Every operator action is an endpoint; the CLI is a thin client of this app.
Work happens synchronously in the request (desk-scale budgets; training
additionally holds a lock file on its output directory).
"""

from __future__ import annotations

import time
from pathlib import Path

import torch
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..captions import InvalidInputError
from ..checkpoint import CheckpointFormatError, read_checkpoint
from ..curriculum import (LATEST_NAME, CurriculumConfig, TrainingLockError,
                          config_from_text, config_to_text, config_with_overrides,
                          generate_clips, inspect_checkpoint, load_checkpoint,
                          train)
from ..data import (DatasetFormatError, SamplingError, SyntheticSpec,
                    dataset_summary, emit_dataset, generate_synthetic_dataset,
                    load_frames_dir)
from ..evaluation import (accuracy_protocol, fid_protocol, inception_protocol,
                          nearest_neighbor_protocol, train_clip_classifier,
                          train_frame_classifier)
from ..media import write_clip_gif, write_clip_pngs, write_loss_chart, write_pair_png
from ..substrate import NumericError, configure_threads
from . import schemas

_BAD_REQUEST = (InvalidInputError, DatasetFormatError, CheckpointFormatError,
                SamplingError, NumericError)
_CONFLICT = (TrainingLockError, FileExistsError)

KNOWN_METRICS = ("fid", "is", "accuracy", "nn")


def create_app() -> FastAPI:
    configure_threads()
    app = FastAPI(title="evovid", version=__version__)

    @app.exception_handler(Exception)
    async def _any_error(request: Request, exc: Exception):
        if isinstance(exc, _BAD_REQUEST):
            return JSONResponse(status_code=400, content={"detail": str(exc)})
        if isinstance(exc, _CONFLICT):
            return JSONResponse(status_code=409, content={"detail": str(exc)})
        return JSONResponse(status_code=500,
                            content={"detail": f"{type(exc).__name__}: {exc}"})

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__,
                                      torch_threads=torch.get_num_threads())

    @app.post("/dataset/generate", response_model=schemas.DatasetGenResponse)
    def dataset_generate(req: schemas.DatasetGenRequest):
        spec = SyntheticSpec(
            shapes=tuple(req.shapes), colors=tuple(req.colors),
            motions=tuple(req.motions), speed=req.speed,
            frame_size=req.frame_size, clips_per_class=req.clips_per_class,
            frames_per_clip=req.frames_per_clip, radius=req.radius, seed=req.seed,
        )
        index = generate_synthetic_dataset(spec)
        path = emit_dataset(index, req.out_dir, force=req.force)
        summary = dataset_summary(index)
        return schemas.DatasetGenResponse(
            path=str(path),
            num_clips=summary["clips"],
            frames_per_clip=summary["frames_per_clip"],
            classes=[schemas.ClassSummary(label=label, **info)
                     for label, info in summary["classes"].items()],
        )

    @app.post("/train", response_model=schemas.TrainResponse)
    def train_model(req: schemas.TrainRequest):
        if req.config_path:
            cfg = config_from_text(Path(req.config_path).read_text(encoding="utf-8"))
        else:
            cfg = CurriculumConfig()
        overrides = {
            k: getattr(req, k) for k in (
                "seed", "n", "iters_stage1", "iters_per_step", "batch_size",
                "lr_g", "lr_d", "code_dim", "raw_dim", "noise_dim", "hidden_dim",
                "frame_size", "g_base_channels", "d_base_channels",
                "use_eq1_init", "use_isp", "nonsaturating_g", "checkpoint_every",
            )
        }
        if req.steps_mask is not None:
            overrides["steps_mask"] = tuple(req.steps_mask)
        cfg = config_with_overrides(cfg, **overrides)
        if req.set_overrides:
            text = "".join(f"{k}={v}\n" for k, v in req.set_overrides.items())
            cfg = config_from_text(config_to_text(cfg) + text)
        if req.resume:
            # the run's stored config governs; only the dataset is re-read
            stored = read_checkpoint(Path(req.out_dir) / LATEST_NAME)
            cfg = config_from_text(stored["config"].decode("utf-8"))
        index = load_frames_dir(req.dataset_dir, frame_size=cfg.frame_size,
                                min_frames=2 ** cfg.n)
        started = time.time()
        checkpoint = train(cfg, index, req.out_dir, resume=req.resume,
                           verbose=req.verbose)
        out = Path(req.out_dir)
        chart = None
        if req.loss_svg:
            chart = str(write_loss_chart(out / "metrics.tsv", out / "metrics.svg"))
        info = inspect_checkpoint(checkpoint)
        return schemas.TrainResponse(
            checkpoint=str(checkpoint),
            stage=info["stage"],
            global_iteration=info["global_iteration"],
            metrics_log=str(out / "metrics.tsv"),
            loss_chart=chart,
            elapsed_seconds=time.time() - started,
        )

    @app.post("/generate", response_model=schemas.GenerateResponse)
    def generate(req: schemas.GenerateRequest):
        state = load_checkpoint(req.checkpoint)
        clips = generate_clips(state, req.caption, req.count, req.seed)
        out = Path(req.out_dir)
        samples = []
        for i in range(clips.shape[0]):
            sample_dir = out / f"sample_{i:02d}"
            frames = write_clip_pngs(clips[i], sample_dir)
            gif = None
            if req.gif:
                gif = str(write_clip_gif(clips[i], sample_dir / "clip.gif"))
            samples.append(schemas.SampleFiles(frames=[str(p) for p in frames],
                                               gif=gif))
        return schemas.GenerateResponse(frames_per_clip=clips.shape[1],
                                        samples=samples)

    @app.post("/evaluate", response_model=schemas.EvalResponse)
    def evaluate(req: schemas.EvalRequest):
        unknown = [m for m in req.metrics if m not in KNOWN_METRICS]
        if unknown:
            raise InvalidInputError(
                f"unknown metrics {unknown}; available: {list(KNOWN_METRICS)}"
            )
        state = load_checkpoint(req.checkpoint)
        cfg = state.config
        index = load_frames_dir(req.dataset_dir, frame_size=cfg.frame_size,
                                min_frames=2 ** cfg.n)
        values: dict[str, float] = {}
        details: dict = {}
        clip_classifier = None
        if "is" in req.metrics or "accuracy" in req.metrics:
            clip_classifier = train_clip_classifier(index, seed=req.seed)
        if "fid" in req.metrics:
            extractor = train_frame_classifier(index, seed=req.seed)
            values["fid"] = fid_protocol(state, index, extractor,
                                         num_frames=req.num_frames, seed=req.seed)
        if "is" in req.metrics:
            total = req.clips_per_caption * len(index.unique_captions())
            splits = max(1, min(req.splits, total))
            mean, std = inception_protocol(state, index, clip_classifier,
                                           clips_per_caption=req.clips_per_caption,
                                           seed=req.seed, splits=splits)
            values["is"] = mean
            details["is_std"] = std
            details["is_splits"] = splits
        if "accuracy" in req.metrics:
            acc = accuracy_protocol(state, index, clip_classifier,
                                    clips_per_caption=req.clips_per_caption,
                                    seed=req.seed)
            values["accuracy"] = acc["accuracy"]
            details["in_set_accuracy"] = acc["in_set_accuracy"]
        if "nn" in req.metrics:
            matches = nearest_neighbor_protocol(state, index,
                                                num_queries=req.nn_queries,
                                                seed=req.seed)
            values["nn_min_distance"] = min(m["distance"] for m in matches)
            details["nn_matches"] = matches
            if req.out_dir:
                _emit_nn_panels(state, index, matches, req, Path(req.out_dir))
        report_path = None
        if req.out_dir:
            report_path = str(_write_report(Path(req.out_dir), values,
                                            cfg.config_hash()))
        return schemas.EvalResponse(values=values, details=details,
                                    report_path=report_path)

    @app.post("/inspect", response_model=schemas.InspectResponse)
    def inspect(req: schemas.InspectRequest):
        return schemas.InspectResponse(**inspect_checkpoint(req.checkpoint))

    return app


def _write_report(out: Path, values: dict[str, float], config_hash: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / "report.tsv"
    lines = [f"{name}\t{value:.6f}\t{config_hash}" for name, value in values.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _emit_nn_panels(state, index, matches, req, out: Path) -> None:
    import numpy as np

    from ..evaluation import generated_frame_pool

    queries = generated_frame_pool(state, index, req.nn_queries, req.seed)
    all_frames = np.concatenate([c.frames for c in index.clips])
    for m in matches:
        write_pair_png(queries[m["query"]], all_frames[m["match"]],
                       out / f"nn_{m['query']:03d}.png")


app = create_app()
