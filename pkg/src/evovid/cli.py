"""Thin command-line client for the service.

Each subcommand builds one request and posts it to the service app: by
default through an in-process ASGI transport (no server needed), or to a
running server via --server. Exit code 0 means the action fully succeeded.
"""

from __future__ import annotations

import argparse
import json
import sys

import httpx

from .service.app import create_app

DEFAULT_TIMEOUT = httpx.Timeout(None)


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=DEFAULT_TIMEOUT)
    import warnings

    with warnings.catch_warnings():
        # starlette 1.3 warns about its httpx fallback; harmless here
        warnings.filterwarnings("ignore", message=".*httpx2.*")
        from starlette.testclient import TestClient
    return TestClient(create_app(), raise_server_exceptions=False)


class CliError(RuntimeError):
    pass


def _post(args, path: str, payload: dict) -> dict:
    try:
        with _client(args.server) as client:
            resp = client.post(path, json=payload)
    except httpx.HTTPError as exc:
        raise CliError(f"cannot reach service: {exc}") from exc
    if resp.status_code != 200:
        try:
            detail = resp.json().get("detail", resp.text)
        except ValueError:
            detail = resp.text
        raise CliError(str(detail))
    return resp.json()


def _steps_mask(text: str | None) -> list[int] | None:
    if text is None:
        return None
    return [int(p) for p in text.split(",") if p.strip()]


def cmd_dataset_gen(args) -> None:
    payload = {
        "out_dir": args.out, "seed": args.seed, "frame_size": args.frame_size,
        "shapes": args.shapes.split(","), "colors": args.colors.split(","),
        "motions": args.motions.split(","), "speed": args.speed,
        "clips_per_class": args.clips_per_class,
        "frames_per_clip": args.frames_per_clip, "radius": args.radius,
        "force": args.force,
    }
    out = _post(args, "/dataset/generate", payload)
    print(f"wrote {out['num_clips']} clips ({out['frames_per_clip']} frames each) "
          f"to {out['path']}")
    for cls in out["classes"]:
        print(f"  class {cls['label']}: {cls['caption']!r} x{cls['clips']}")


def _train_payload(args, resume: bool) -> dict:
    payload = {
        "dataset_dir": args.dataset, "out_dir": args.out, "resume": resume,
        "loss_svg": args.loss_svg, "verbose": not args.quiet,
    }
    if not resume:
        payload.update({
            "config_path": args.config, "seed": args.seed, "n": args.n,
            "iters_stage1": args.iters_stage1, "iters_per_step": args.iters_per_step,
            "batch_size": args.batch_size, "frame_size": args.frame_size,
            "checkpoint_every": args.checkpoint_every,
            "steps_mask": _steps_mask(args.steps_mask),
        })
        if args.no_isp:
            payload["use_isp"] = False
        if args.no_eq1_init:
            payload["use_eq1_init"] = False
        for item in args.set or []:
            if "=" not in item:
                raise CliError(f"--set expects key=value, got {item!r}")
            key, _, value = item.partition("=")
            payload.setdefault("set_overrides", {})[key.strip()] = value.strip()
    return payload


def cmd_train(args) -> None:
    out = _post(args, "/train", _train_payload(args, resume=False))
    _print_train(out)


def cmd_resume(args) -> None:
    out = _post(args, "/train", _train_payload(args, resume=True))
    _print_train(out)


def _print_train(out: dict) -> None:
    print(f"finished at {out['stage']} after {out['global_iteration']} iterations "
          f"({out['elapsed_seconds']:.0f}s)")
    print(f"checkpoint: {out['checkpoint']}")
    print(f"metrics: {out['metrics_log']}")
    if out.get("loss_chart"):
        print(f"loss chart: {out['loss_chart']}")


def cmd_generate(args) -> None:
    payload = {
        "checkpoint": args.checkpoint, "caption": args.caption,
        "count": args.count, "seed": args.seed, "out_dir": args.out,
        "gif": not args.no_gif,
    }
    out = _post(args, "/generate", payload)
    print(f"generated {len(out['samples'])} clip(s) of {out['frames_per_clip']} frames")
    for i, sample in enumerate(out["samples"]):
        tail = f" gif={sample['gif']}" if sample.get("gif") else ""
        print(f"  sample {i}: {len(sample['frames'])} frames{tail}")


def cmd_eval(args) -> None:
    payload = {
        "checkpoint": args.checkpoint, "dataset_dir": args.dataset,
        "metrics": args.metrics.split(","), "out_dir": args.out,
        "seed": args.seed, "num_frames": args.num_frames,
        "clips_per_caption": args.clips_per_caption, "splits": args.splits,
        "nn_queries": args.nn_queries,
    }
    out = _post(args, "/evaluate", payload)
    for name, value in out["values"].items():
        print(f"{name}\t{value:.6f}")
    for name, value in out["details"].items():
        if isinstance(value, float):
            print(f"{name}\t{value:.6f}")
        elif isinstance(value, int):
            print(f"{name}\t{value}")
    if out.get("report_path"):
        print(f"report: {out['report_path']}")


def cmd_inspect(args) -> None:
    out = _post(args, "/inspect", {"checkpoint": args.checkpoint})
    for key in ("format_version", "stage", "iter_in_phase", "global_iteration",
                "config_hash", "frame_size", "clip_frames",
                "step_disc_input_channels"):
        if out.get(key) is not None:
            print(f"{key}: {out[key]}")
    print("parameter_counts: " + json.dumps(out["parameter_counts"]))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evovid")
    parser.add_argument("--server", default=None,
                        help="URL of a running service (default: in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset-gen", help="write a synthetic dataset to disk")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frame-size", type=int, default=64)
    p.add_argument("--shapes", default="circle")
    p.add_argument("--colors", default="red,green")
    p.add_argument("--motions", default="left,right")
    p.add_argument("--speed", type=float, default=2.0)
    p.add_argument("--clips-per-class", type=int, default=50)
    p.add_argument("--frames-per-clip", type=int, default=16)
    p.add_argument("--radius", type=float, default=10.0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_dataset_gen)

    p = sub.add_parser("train", help="run the full training schedule")
    p.add_argument("--config", default=None, help="flat key=value config file")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--iters-stage1", type=int, default=None)
    p.add_argument("--iters-per-step", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--frame-size", type=int, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--steps-mask", default=None, help="comma list, e.g. 1,4")
    p.add_argument("--no-isp", action="store_true",
                   help="single-sample image discriminator (ablation)")
    p.add_argument("--no-eq1-init", action="store_true",
                   help="random step-discriminator init (ablation)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("--loss-svg", action="store_true",
                   help="also render metrics.svg from the loss log")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("resume", help="continue from the latest checkpoint")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--loss-svg", action="store_true")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_resume)

    p = sub.add_parser("generate", help="sample clips from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--caption", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--no-gif", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="run quantitative metrics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--metrics", default="fid,is,accuracy")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-frames", type=int, default=200)
    p.add_argument("--clips-per-caption", type=int, default=16)
    p.add_argument("--splits", type=int, default=10)
    p.add_argument("--nn-queries", type=int, default=8)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="summarize a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
