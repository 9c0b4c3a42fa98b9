"""Dataset plumbing: synthetic moving-shapes clips, disk layout, sampling.

The synthetic generator renders one colored shape translating across a black
background, one clip class per (shape, color, motion) combination, captioned
"a <color> <shape> moving <direction>". Clips are fixed-length frame stacks
in [-1, 1]. The same on-disk layout (frame PNGs plus captions.tsv) is used
for user-provided datasets.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .captions import Caption, InvalidInputError

COLOR_TABLE = {
    "red": (0.9, 0.15, 0.15),
    "green": (0.15, 0.85, 0.2),
    "blue": (0.2, 0.3, 0.9),
    "yellow": (0.9, 0.85, 0.15),
    "magenta": (0.85, 0.2, 0.8),
    "cyan": (0.15, 0.8, 0.85),
}

MOTION_VECTORS = {
    "left": (-1.0, 0.0),
    "right": (1.0, 0.0),
    "up": (0.0, -1.0),
    "down": (0.0, 1.0),
}

SHAPES = ("circle", "square", "triangle")


class InvalidSpecError(InvalidInputError):
    pass


class SamplingError(RuntimeError):
    """No admissible sample exists for the requested policy."""


class DatasetFormatError(RuntimeError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the procedural moving-shapes dataset.

    One class per (shape, color, motion) combination. Start positions are
    drawn so the whole trajectory stays inside the frame whenever possible;
    shapes that would leave the frame reflect at the borders instead.
    """

    shapes: tuple[str, ...] = ("circle",)
    colors: tuple[str, ...] = ("red", "green")
    motions: tuple[str, ...] = ("left", "right")
    speed: float = 2.0
    frame_size: int = 64
    clips_per_class: int = 50
    frames_per_clip: int = 16
    radius: float = 10.0
    seed: int = 0

    def validate(self):
        if not self.shapes or not self.colors or not self.motions:
            raise InvalidSpecError("shapes, colors and motions must be non-empty")
        for s in self.shapes:
            if s not in SHAPES:
                raise InvalidSpecError(f"unknown shape {s!r} (choose from {SHAPES})")
        for c in self.colors:
            if c not in COLOR_TABLE:
                raise InvalidSpecError(f"unknown color {c!r} (choose from {sorted(COLOR_TABLE)})")
        for m in self.motions:
            if m not in MOTION_VECTORS:
                raise InvalidSpecError(f"unknown motion {m!r} (choose from {sorted(MOTION_VECTORS)})")
        if len(self.shapes) * len(self.colors) * len(self.motions) < 2:
            raise InvalidSpecError("need at least 2 classes")
        if 2 * (self.radius + 1) >= self.frame_size:
            raise InvalidSpecError(
                f"shape radius {self.radius} does not fit a {self.frame_size}px frame"
            )
        if self.clips_per_class < 1 or self.frames_per_clip < 1:
            raise InvalidSpecError("clips_per_class and frames_per_clip must be >= 1")

    def class_tuples(self) -> list[tuple[str, str, str]]:
        return list(itertools.product(self.shapes, self.colors, self.motions))


@dataclass
class VideoClip:
    """Fixed-length frame stack (T, C, H, W) in [-1, 1] with its caption."""

    frames: np.ndarray
    caption: Caption
    clip_id: str

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class DatasetIndex:
    """All clips of one dataset plus per-class lookup tables."""

    clips: list[VideoClip]
    warnings: list[str] = field(default_factory=list)
    _per_class: dict[int, list[int]] = field(default_factory=dict, repr=False)
    _class_captions: dict[int, list[Caption]] = field(default_factory=dict, repr=False)
    _tau: dict[int, float] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.clips:
            raise InvalidInputError("dataset has no clips")
        shape = self.clips[0].frames.shape
        for clip in self.clips:
            if clip.frames.shape != shape:
                raise InvalidInputError(
                    f"clip {clip.clip_id} shape {clip.frames.shape} != {shape}"
                )
        for i, clip in enumerate(self.clips):
            self._per_class.setdefault(clip.caption.class_label, []).append(i)
            texts = self._class_captions.setdefault(clip.caption.class_label, [])
            if all(c.text != clip.caption.text for c in texts):
                texts.append(clip.caption)

    @property
    def num_frames(self) -> int:
        return self.clips[0].num_frames

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return tuple(self.clips[0].frames.shape[1:])

    @property
    def classes(self) -> list[int]:
        return sorted(self._per_class)

    def clips_of_class(self, label: int) -> list[int]:
        return self._per_class[label]

    def captions_of_class(self, label: int) -> list[Caption]:
        return self._class_captions[label]

    def unique_captions(self) -> list[Caption]:
        return [c for label in self.classes for c in self._class_captions[label]]

    def dissimilarity_threshold(self, label: int) -> float:
        """Median pixel-L2 distance over all frame pairs within the class.

        Computed once per class via the Gram-matrix identity
        ||a-b||^2 = ||a||^2 + ||b||^2 - 2 a.b and cached.
        """
        if label not in self._tau:
            frames = np.concatenate(
                [self.clips[i].frames.reshape(self.clips[i].num_frames, -1)
                 for i in self._per_class[label]],
                axis=0,
            ).astype(np.float64)
            sq = (frames ** 2).sum(axis=1)
            d2 = sq[:, None] + sq[None, :] - 2.0 * (frames @ frames.T)
            iu = np.triu_indices(len(frames), k=1)
            self._tau[label] = float(np.sqrt(np.clip(np.median(d2[iu]), 0.0, None)))
        return self._tau[label]


def _coverage(shape: str, xx: np.ndarray, yy: np.ndarray, cx: float, cy: float,
              r: float) -> np.ndarray:
    dx, dy = xx - cx, yy - cy
    if shape == "circle":
        return (dx * dx + dy * dy <= r * r).astype(np.float64)
    if shape == "square":
        return ((np.abs(dx) <= r) & (np.abs(dy) <= r)).astype(np.float64)
    # upward-pointing triangle inscribed in the radius-r box
    inside = (dy <= r) & (dy >= -r) & (np.abs(dx) <= (dy + r) / 2.0)
    return inside.astype(np.float64)


def _render_frame(shape: str, color: tuple[float, float, float], size: int,
                  cx: float, cy: float, r: float, ss: int = 4) -> np.ndarray:
    """Anti-aliased raster of one shape, supersampled ss x ss per pixel."""
    n = size * ss
    coords = (np.arange(n) + 0.5) / ss
    xx, yy = np.meshgrid(coords, coords)
    cov = _coverage(shape, xx, yy, cx, cy, r)
    cov = cov.reshape(size, ss, size, ss).mean(axis=(1, 3))
    frame = np.empty((3, size, size), dtype=np.float32)
    for ch in range(3):
        fg = color[ch] * 2.0 - 1.0
        frame[ch] = (cov * fg + (1.0 - cov) * -1.0).astype(np.float32)
    return frame


def _trajectory(rng: np.random.Generator, size: int, radius: float, speed: float,
                direction: tuple[float, float], steps: int) -> list[tuple[float, float]]:
    lo, hi = radius + 1.0, size - 1.0 - radius
    vx, vy = direction[0] * speed, direction[1] * speed

    def start_range(v: float) -> tuple[float, float]:
        travel = v * (steps - 1)
        a, b = lo - min(travel, 0.0), hi - max(travel, 0.0)
        return (a, b) if a <= b else (lo, hi)  # no border-free start: reflect later

    x = rng.uniform(*start_range(vx))
    y = rng.uniform(*start_range(vy))
    pts = []
    for _ in range(steps):
        pts.append((x, y))
        x, y = x + vx, y + vy
        if x < lo:
            x, vx = 2 * lo - x, -vx
        elif x > hi:
            x, vx = 2 * hi - x, -vx
        if y < lo:
            y, vy = 2 * lo - y, -vy
        elif y > hi:
            y, vy = 2 * hi - y, -vy
    return pts


def generate_synthetic_dataset(spec: SyntheticSpec) -> DatasetIndex:
    """Render the full synthetic dataset deterministically from spec.seed."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    clips = []
    for label, (shape, color, motion) in enumerate(spec.class_tuples()):
        caption = Caption(
            text=f"a {color} {shape} moving {motion}",
            class_label=label,
            attributes=(("color", color), ("shape", shape), ("motion", motion)),
        )
        for i in range(spec.clips_per_class):
            pts = _trajectory(rng, spec.frame_size, spec.radius, spec.speed,
                              MOTION_VECTORS[motion], spec.frames_per_clip)
            frames = np.stack([
                _render_frame(shape, COLOR_TABLE[color], spec.frame_size, cx, cy,
                              spec.radius)
                for cx, cy in pts
            ])
            clips.append(VideoClip(frames=frames, caption=caption,
                                   clip_id=f"{label:02d}_{shape}_{color}_{motion}_{i:04d}"))
    return DatasetIndex(clips=clips)


def sample_real_frame(clip: VideoClip, rng: torch.Generator) -> np.ndarray:
    """Uniform draw over the clip's frame indices."""
    idx = int(torch.randint(clip.num_frames, (1,), generator=rng).item())
    return clip.frames[idx]


def sample_consecutive(clip: VideoClip, k: int, rng: torch.Generator) -> np.ndarray:
    """k consecutive frames, start uniform, original temporal order."""
    if k < 1 or k > clip.num_frames:
        raise InvalidInputError(
            f"cannot take {k} consecutive frames from a {clip.num_frames}-frame clip"
        )
    start = int(torch.randint(clip.num_frames - k + 1, (1,), generator=rng).item())
    return clip.frames[start:start + k]


def sample_wrong_caption(index: DatasetIndex, caption: Caption,
                         rng: torch.Generator) -> Caption:
    """Uniform draw over captions of any other class."""
    others = [c for c in index.unique_captions() if c.class_label != caption.class_label]
    if not others:
        raise SamplingError("dataset has a single class; no mismatched caption exists")
    return others[int(torch.randint(len(others), (1,), generator=rng).item())]


def emit_dataset(index: DatasetIndex, root: str | Path, force: bool = False) -> Path:
    """Write the on-disk layout: root/<clip_id>/frame_NNNN.png + captions.tsv."""
    root = Path(root)
    if root.exists() and any(root.iterdir()):
        if not force:
            raise FileExistsError(f"{root} exists and is not empty (use force)")
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for clip in index.clips:
        clip_dir = root / clip.clip_id
        clip_dir.mkdir(parents=True, exist_ok=True)
        for t in range(clip.num_frames):
            arr = np.round((clip.frames[t].transpose(1, 2, 0) + 1.0) * 127.5)
            img = Image.fromarray(np.clip(arr, 0, 255).astype(np.uint8))
            img.save(clip_dir / f"frame_{t + 1:04d}.png")
        lines.append(f"{clip.clip_id}\t{clip.caption.text}\t{clip.caption.class_label}")
    (root / "captions.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return root


def load_frames_dir(root: str | Path, frame_size: int | None = None,
                    min_frames: int = 16) -> DatasetIndex:
    """Load a dataset from the on-disk layout.

    Frames are resized to `frame_size` when given and rescaled to [-1, 1].
    Clips shorter than `min_frames` are skipped and reported in the returned
    index's warning list.
    """
    root = Path(root)
    captions_file = root / "captions.tsv"
    if not captions_file.is_file():
        raise DatasetFormatError(f"missing captions file {captions_file}")
    clips, warnings = [], []
    for line_no, line in enumerate(captions_file.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DatasetFormatError(f"{captions_file}:{line_no}: expected 3 tab-separated fields")
        clip_id, text, label = parts
        clip_dir = root / clip_id
        if not clip_dir.is_dir():
            raise DatasetFormatError(f"missing clip directory {clip_dir}")
        frame_files = sorted(clip_dir.glob("frame_*.png"))
        if len(frame_files) < min_frames:
            warnings.append(f"{clip_id}: {len(frame_files)} frames < required {min_frames}")
            continue
        frames = []
        for f in frame_files:
            try:
                img = Image.open(f).convert("RGB")
            except Exception as exc:
                raise DatasetFormatError(f"cannot decode {f}: {exc}") from exc
            if frame_size is not None and img.size != (frame_size, frame_size):
                img = img.resize((frame_size, frame_size), Image.BILINEAR)
            arr = np.asarray(img, dtype=np.float32) / 255.0 * 2.0 - 1.0
            frames.append(arr.transpose(2, 0, 1))
        clips.append(VideoClip(frames=np.stack(frames),
                               caption=Caption(text=text, class_label=int(label)),
                               clip_id=clip_id))
    if not clips:
        raise DatasetFormatError(f"no usable clips under {root}")
    index = DatasetIndex(clips=clips)
    index.warnings = warnings
    return index


def dataset_summary(index: DatasetIndex) -> dict:
    per_class = {}
    for label in index.classes:
        caps = index.captions_of_class(label)
        per_class[label] = {
            "caption": caps[0].text,
            "clips": len(index.clips_of_class(label)),
        }
    return {
        "clips": len(index.clips),
        "frames_per_clip": index.num_frames,
        "frame_shape": list(index.frame_shape),
        "classes": per_class,
    }


def require_dir(path: str | Path) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise DatasetFormatError(f"dataset directory {p} does not exist")
    return p
