"""Frame/clip image IO: PNG sequences, animated GIFs, side-by-side panels."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def frame_to_image(frame: np.ndarray) -> Image.Image:
    """(C, H, W) in [-1, 1] -> PIL image."""
    arr = np.round((np.asarray(frame).transpose(1, 2, 0) + 1.0) * 127.5)
    return Image.fromarray(np.clip(arr, 0, 255).astype(np.uint8))


def write_clip_pngs(clip: np.ndarray, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in range(clip.shape[0]):
        p = out / f"frame_{t + 1:04d}.png"
        frame_to_image(clip[t]).save(p)
        paths.append(p)
    return paths


def write_clip_gif(clip: np.ndarray, path: str | Path,
                   frame_ms: int = 125) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    images = [frame_to_image(clip[t]) for t in range(clip.shape[0])]
    images[0].save(path, save_all=True, append_images=images[1:],
                   duration=frame_ms, loop=0)
    return path


def write_pair_png(left: np.ndarray, right: np.ndarray, path: str | Path,
                   gap: int = 2) -> Path:
    """Two frames side by side (generated | nearest real)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    a, b = frame_to_image(left), frame_to_image(right)
    panel = Image.new("RGB", (a.width + gap + b.width, a.height), (255, 255, 255))
    panel.paste(a, (0, 0))
    panel.paste(b, (a.width + gap, 0))
    panel.save(path)
    return path


def write_loss_chart(metrics_tsv: str | Path, out_svg: str | Path) -> Path:
    """Line chart of both discriminators' per-iteration training loss
    (negated objective, so a fresh discriminator sits high)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    iters, di, ds, boundaries = [], [], [], []
    last_stage = None
    with open(metrics_tsv, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        col = {name: i for i, name in enumerate(header)}
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            iters.append(int(parts[col["iteration"]]))
            di.append(-float(parts[col["di_total"]]))
            ds.append(-float(parts[col["ds_total"]]))
            if parts[col["stage"]] != last_stage:
                if last_stage is not None:
                    boundaries.append(int(parts[col["iteration"]]))
                last_stage = parts[col["stage"]]
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(iters, di, label="image discriminator", lw=0.8)
    ds_pts = [(i, v) for i, v in zip(iters, ds) if not np.isnan(v)]
    if ds_pts:
        ax.plot([p[0] for p in ds_pts], [p[1] for p in ds_pts],
                label="step discriminator", lw=0.8)
    for b in boundaries:
        ax.axvline(b, color="gray", ls=":", lw=0.6)
    ax.set_xlabel("iteration")
    ax.set_ylabel("discriminator loss")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    out_svg = Path(out_svg)
    fig.savefig(out_svg)
    plt.close(fig)
    return out_svg
