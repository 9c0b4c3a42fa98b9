"""Stage machine: text-to-image training, then frame-doubling growth steps.

Training runs a fixed-budget loop per phase. The text-to-image phase trains
the generator, recurrent unit and image discriminator on single-position
chains. Each growth step m doubles the generated clip length to 2^m frames,
swaps in a step discriminator initialized from its predecessor (inherited
halved-duplicate first layer by default, random for the ablation arm) and
trains against both discriminators. The generator, recurrent unit and image
discriminator instances persist untouched across every boundary.
"""

from __future__ import annotations

import hashlib
import io
import os
import struct
import time
from contextlib import contextmanager
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .captions import (Caption, InvalidInputError, PcaModel, caption_code,
                       encode_caption, fit_pca)
from .data import DatasetIndex, sample_consecutive, sample_real_frame, sample_wrong_caption
from .losses import (loss_image, loss_step, loss_total, generator_push_loss,
                     sample_real_dissimilar_pair)
from .models import (Generator, ImageDiscriminator, RecurrentUnit, StepDiscriminator,
                     as_clip_tensor, generate_frames, init_step_discriminator,
                     latent_chain)
from .substrate import (adam_state_export, adam_state_import, make_adam,
                        seeded_generator)

LATEST_NAME = "checkpoint_latest.tivg"
METRICS_NAME = "metrics.tsv"


class TrainingLockError(RuntimeError):
    pass


@dataclass(frozen=True)
class CurriculumConfig:
    """Every knob of a training run; flat key=value file round-trips."""

    n: int = 4
    iters_stage1: int = 3000
    iters_per_step: int = 1500
    batch_size: int = 8
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    code_dim: int = 60
    raw_dim: int = 256
    noise_dim: int = 50
    hidden_dim: int = 128
    frame_size: int = 64
    frame_channels: int = 3
    g_base_channels: int = 16
    d_base_channels: int = 16
    use_eq1_init: bool = True
    use_isp: bool = True
    nonsaturating_g: bool = False
    steps_mask: tuple[int, ...] = ()
    seed: int = 0
    checkpoint_every: int = 0

    def validate(self) -> None:
        if self.n < 1:
            raise InvalidInputError("n must be >= 1")
        if min(self.iters_stage1, self.iters_per_step) < 0:
            raise InvalidInputError("iteration budgets must be >= 0")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        mask = self.steps_mask
        if mask:
            if any(m < 1 or m > self.n for m in mask):
                raise InvalidInputError(f"steps_mask {mask} outside 1..{self.n}")
            if self.n not in mask:
                raise InvalidInputError(f"steps_mask must include the final step {self.n}")
            if len(set(mask)) != len(mask):
                raise InvalidInputError("steps_mask has duplicates")

    def executed_steps(self) -> list[int]:
        return sorted(self.steps_mask) if self.steps_mask else list(range(1, self.n + 1))

    def step_budgets(self) -> dict[int, int]:
        """Per-step budgets; skipped steps hand theirs to the next executed one."""
        executed = set(self.executed_steps())
        budgets, carry = {}, 0
        for m in range(1, self.n + 1):
            if m in executed:
                budgets[m] = self.iters_per_step + carry
                carry = 0
            else:
                carry += self.iters_per_step
        return budgets

    def config_hash(self) -> str:
        return hashlib.sha256(config_to_text(self).encode()).hexdigest()[:12]


def config_to_text(cfg: CurriculumConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name == "steps_mask":
            v = ",".join(str(m) for m in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> CurriculumConfig:
    kwargs = {}
    known = {f.name: f for f in fields(CurriculumConfig)}
    for line_no, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidInputError(f"config line {line_no}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in known:
            raise InvalidInputError(f"config line {line_no}: unknown key {key!r}")
        kwargs[key] = _coerce(key, raw)
    return CurriculumConfig(**kwargs)


def _coerce(key: str, raw: str):
    defaults = CurriculumConfig()
    current = getattr(defaults, key)
    if key == "steps_mask":
        return tuple(int(p) for p in raw.split(",") if p.strip()) if raw else ()
    if isinstance(current, bool):
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise InvalidInputError(f"config key {key}: not a boolean: {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw


def config_with_overrides(cfg: CurriculumConfig, **overrides) -> CurriculumConfig:
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if "steps_mask" in overrides and not isinstance(overrides["steps_mask"], tuple):
        overrides["steps_mask"] = tuple(overrides["steps_mask"])
    return replace(cfg, **overrides)


@dataclass
class CurriculumState:
    """Position in the stage machine plus everything it trains and samples."""

    config: CurriculumConfig
    pca: PcaModel
    generator: Generator
    recurrent: RecurrentUnit
    image_disc: ImageDiscriminator
    step_disc: StepDiscriminator | None
    opt_g: torch.optim.Adam
    opt_di: torch.optim.Adam
    opt_ds: torch.optim.Adam | None
    noise_rng: torch.Generator
    data_rng: torch.Generator
    stage: int = 0  # 0 = text-to-image phase, m >= 1 = growth step m
    iter_in_phase: int = 0
    global_iter: int = 0
    metrics_offset: int = 0

    @property
    def stage_label(self) -> str:
        return "stage1" if self.stage == 0 else f"step{self.stage}"

    @property
    def clip_length(self) -> int:
        return 1 if self.stage == 0 else 2 ** self.stage

    def named_model_params(self) -> dict[str, list[tuple[str, torch.nn.Parameter]]]:
        out = {
            "generator": list(self.generator.named_parameters()),
            "recurrent": list(self.recurrent.named_parameters()),
            "image_disc": list(self.image_disc.named_parameters()),
        }
        if self.step_disc is not None:
            out["step_disc"] = list(self.step_disc.named_parameters())
        return out


def fit_caption_pca(index: DatasetIndex, cfg: CurriculumConfig) -> PcaModel:
    """Fit the caption code reduction over every training clip's caption."""
    embeddings = np.stack([
        encode_caption(clip.caption, cfg.raw_dim) for clip in index.clips
    ])
    return fit_pca(embeddings, cfg.code_dim)


def init_state(cfg: CurriculumConfig, pca: PcaModel) -> CurriculumState:
    cfg.validate()
    from .substrate import init_parameters
    init_gen = seeded_generator(cfg.seed)
    generator = Generator(cfg.frame_size, cfg.frame_channels,
                          cfg.g_base_channels, cfg.hidden_dim)
    init_parameters(generator, init_gen)
    recurrent = RecurrentUnit(cfg.code_dim, cfg.noise_dim, cfg.hidden_dim)
    init_parameters(recurrent, init_gen)
    image_disc = ImageDiscriminator(cfg.frame_size, cfg.frame_channels,
                                    cfg.d_base_channels, cfg.code_dim,
                                    paired=cfg.use_isp)
    init_parameters(image_disc, init_gen)
    opt_g = make_adam(list(generator.parameters()) + list(recurrent.parameters()),
                      cfg.lr_g, (cfg.beta1, cfg.beta2))
    opt_di = make_adam(image_disc.parameters(), cfg.lr_d, (cfg.beta1, cfg.beta2))
    return CurriculumState(
        config=cfg, pca=pca, generator=generator, recurrent=recurrent,
        image_disc=image_disc, step_disc=None, opt_g=opt_g, opt_di=opt_di,
        opt_ds=None, noise_rng=seeded_generator(cfg.seed + 1),
        data_rng=seeded_generator(cfg.seed + 2),
    )


class MetricsLog:
    """Append-only TSV of per-iteration loss terms for both discriminators."""

    FIELDS = ["real_uncond", "real_cond", "fake_uncond", "fake_cond",
              "wrong_cond", "total"]

    def __init__(self, path: str | Path, offset: int | None = None):
        self.path = Path(path)
        header = ("iteration\tstage\t"
                  + "\t".join(f"di_{f}" for f in self.FIELDS) + "\t"
                  + "\t".join(f"ds_{f}" for f in self.FIELDS) + "\n")
        if offset is not None and self.path.exists():
            with open(self.path, "r+", encoding="utf-8") as fh:
                fh.truncate(max(offset, 0))
        if not self.path.exists() or self.path.stat().st_size == 0:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(header, encoding="utf-8")
        self._fh = open(self.path, "a", encoding="utf-8")

    def append(self, iteration: int, stage: str, di: dict, ds: dict | None) -> None:
        row = [str(iteration), stage]
        row += [f"{di[f]:.6f}" for f in self.FIELDS]
        row += [f"{ds[f]:.6f}" if ds else "nan" for f in self.FIELDS]
        self._fh.write("\t".join(row) + "\n")
        self._fh.flush()

    def offset(self) -> int:
        self._fh.flush()
        return self.path.stat().st_size

    def close(self) -> None:
        self._fh.close()


class _TrainContext:
    """Caches caption codes and wires one dataset to the iteration body."""

    def __init__(self, state: CurriculumState, index: DatasetIndex):
        cfg = state.config
        if index.num_frames < 2 ** cfg.n:
            raise InvalidInputError(
                f"dataset clips have {index.num_frames} frames; need >= {2 ** cfg.n}"
            )
        c, h, w = index.frame_shape
        if (c, h, w) != (cfg.frame_channels, cfg.frame_size, cfg.frame_size):
            raise InvalidInputError(
                f"dataset frames are {(c, h, w)}, config expects "
                f"{(cfg.frame_channels, cfg.frame_size, cfg.frame_size)}"
            )
        self.index = index
        self.codes = {
            cap.text: torch.tensor(caption_code(state.pca, cap, cfg.raw_dim),
                                   dtype=torch.float32)
            for cap in index.unique_captions()
        }

    def code_batch(self, captions: list[Caption]) -> torch.Tensor:
        return torch.stack([self.codes[c.text] for c in captions])


def _train_iteration(state: CurriculumState, ctx: _TrainContext,
                     log: MetricsLog | None) -> None:
    cfg = state.config
    index = ctx.index
    b = cfg.batch_size
    k_len = state.clip_length

    # data-side draws, fixed order for resumability
    clip_ids = torch.randint(len(index.clips), (b,), generator=state.data_rng).tolist()
    clips = [index.clips[i] for i in clip_ids]
    captions = [c.caption for c in clips]
    wrong = [sample_wrong_caption(index, cap, state.data_rng) for cap in captions]
    if cfg.use_isp:
        reals = [np.concatenate(sample_real_dissimilar_pair(index, cap, state.data_rng))
                 for cap in captions]
    else:
        reals = [sample_real_frame(clip, state.data_rng) for clip in clips]
    real_pair = torch.from_numpy(np.stack(reals))
    real_clip = None
    if state.stage > 0:
        windows = [sample_consecutive(clip, k_len, state.data_rng) for clip in clips]
        real_clip = torch.from_numpy(np.stack(windows)).reshape(b, -1, cfg.frame_size,
                                                                cfg.frame_size)
    k_pos = torch.randint(k_len, (b,), generator=state.data_rng)

    code = ctx.code_batch(captions)
    wrong_code = ctx.code_batch(wrong)

    # model-side draws: chain a in full, then (under pairing) chain b in full
    latents_a = latent_chain(state.recurrent, code, k_len, state.noise_rng)
    frames_a = generate_frames(state.generator, latents_a)
    rows = torch.arange(b)
    frame_a_sel = frames_a[rows, k_pos]
    if cfg.use_isp:
        latents_b = latent_chain(state.recurrent, code, k_len, state.noise_rng)
        frame_b_sel = state.generator(latents_b[rows, k_pos])
        fake_pair = torch.cat([frame_a_sel, frame_b_sel], dim=1)
    else:
        fake_pair = frame_a_sel
    fake_clip = as_clip_tensor(frames_a) if state.stage > 0 else None

    # generator/recurrent update first, then the discriminators
    li = loss_image(state.image_disc, real_pair, fake_pair, code, wrong_code)
    ls = (loss_step(state.step_disc, real_clip, fake_clip, code, wrong_code)
          if state.stage > 0 else None)
    if cfg.nonsaturating_g:
        g_obj = generator_push_loss(state.image_disc, fake_pair, code)
        if state.stage > 0:
            g_obj = g_obj + generator_push_loss(state.step_disc, fake_clip, code)
    else:
        g_obj = loss_total(li.total, ls.total if ls else None)
    state.opt_g.zero_grad()
    g_obj.backward()
    state.opt_g.step()

    li_d = loss_image(state.image_disc, real_pair, fake_pair.detach(), code, wrong_code)
    state.opt_di.zero_grad()
    (-li_d.total).backward()
    state.opt_di.step()

    ls_d = None
    if state.stage > 0:
        ls_d = loss_step(state.step_disc, real_clip, fake_clip.detach(), code, wrong_code)
        state.opt_ds.zero_grad()
        (-ls_d.total).backward()
        state.opt_ds.step()

    state.iter_in_phase += 1
    state.global_iter += 1
    if log is not None:
        log.append(state.global_iter, state.stage_label, li_d.values(),
                   ls_d.values() if ls_d else None)


def advance_step(state: CurriculumState, m: int) -> None:
    """Swap in the step-m discriminator; everything else is untouched.

    The outgoing step discriminator is dropped. The incoming one inherits
    weights from its predecessor when `use_eq1_init` is on (composing the
    width-doubling rule across any skipped steps), otherwise it starts from
    a fresh seeded random init. Its optimizer state starts fresh either way.
    """
    cfg = state.config
    if m > cfg.n:
        raise InvalidInputError(f"step {m} exceeds configured n={cfg.n}")
    if m <= state.stage:
        raise InvalidInputError(f"cannot advance backwards to step {m} from {state.stage_label}")
    prev = state.step_disc if state.step_disc is not None else state.image_disc
    if cfg.use_eq1_init:
        first = 1 if state.step_disc is None else state.step_disc.step_index + 1
        disc = init_step_discriminator(prev, first)
        while disc.step_index < m:
            disc = init_step_discriminator(disc, disc.step_index + 1)
    else:
        from .substrate import init_parameters
        disc = StepDiscriminator(m, cfg.frame_size, cfg.frame_channels,
                                 cfg.d_base_channels, cfg.code_dim)
        init_parameters(disc, state.noise_rng)
    state.step_disc = disc
    state.opt_ds = make_adam(disc.parameters(), cfg.lr_d, (cfg.beta1, cfg.beta2))
    state.stage = m
    state.iter_in_phase = 0


def run_stage1(state: CurriculumState, index: DatasetIndex,
               log: MetricsLog | None = None) -> CurriculumState:
    """Run the remaining text-to-image iterations."""
    if state.stage != 0:
        raise InvalidInputError(f"state is at {state.stage_label}, not the image stage")
    ctx = _TrainContext(state, index)
    while state.iter_in_phase < state.config.iters_stage1:
        _train_iteration(state, ctx, log)
    return state


def run_step(state: CurriculumState, m: int, index: DatasetIndex,
             log: MetricsLog | None = None, budget: int | None = None
             ) -> CurriculumState:
    """Run the remaining iterations of growth step m."""
    if state.stage != m:
        raise InvalidInputError(f"state is at {state.stage_label}, expected step {m}")
    if index.num_frames < 2 ** m:
        raise InvalidInputError(
            f"clips have {index.num_frames} frames; step {m} needs {2 ** m}"
        )
    ctx = _TrainContext(state, index)
    budget = state.config.step_budgets()[m] if budget is None else budget
    while state.iter_in_phase < budget:
        _train_iteration(state, ctx, log)
    return state


@contextmanager
def output_lock(out_dir: Path):
    lock = out_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise TrainingLockError(
            f"{out_dir} is locked by another training run "
            f"(remove {lock} if it is stale)"
        ) from None
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        yield
    finally:
        lock.unlink(missing_ok=True)


def train(cfg: CurriculumConfig, index: DatasetIndex, out_dir: str | Path,
          resume: bool = False, verbose: bool = False) -> Path:
    """Run (or continue) the full schedule; returns the final checkpoint path.

    Writes `metrics.tsv`, a rolling latest checkpoint, one checkpoint per
    stage boundary and optional periodic ones. Holds a lock file on the
    output directory for the duration.
    """
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    latest = out / LATEST_NAME
    with output_lock(out):
        if resume:
            state = load_checkpoint(latest)
            cfg = state.config
            log = MetricsLog(out / METRICS_NAME, offset=state.metrics_offset)
        else:
            state = init_state(cfg, fit_caption_pca(index, cfg))
            log = MetricsLog(out / METRICS_NAME, offset=0)
        try:
            phases = [(0, cfg.iters_stage1)]
            budgets = cfg.step_budgets()
            phases += [(m, budgets[m]) for m in cfg.executed_steps()]
            order = [s for s, _ in phases]
            if state.stage not in order:
                raise InvalidInputError(
                    f"checkpoint is at {state.stage_label}, which the schedule "
                    f"{order} never runs"
                )
            started = time.time()
            for stage, budget in phases[order.index(state.stage):]:
                if stage != state.stage:
                    advance_step(state, stage)
                    _save(state, log, out, f"boundary_{state.stage_label}")
                ctx = _TrainContext(state, index)
                while state.iter_in_phase < budget:
                    _train_iteration(state, ctx, log)
                    if (cfg.checkpoint_every
                            and state.global_iter % cfg.checkpoint_every == 0):
                        _save(state, log, out, None)
                    if verbose and state.global_iter % 100 == 0:
                        print(f"[{state.global_iter}] {state.stage_label} "
                              f"{state.iter_in_phase}/{budget} "
                              f"({time.time() - started:.0f}s)", flush=True)
                _save(state, log, out, f"done_{state.stage_label}")
        finally:
            log.close()
    return latest


def _save(state: CurriculumState, log: MetricsLog, out: Path,
          label: str | None) -> None:
    state.metrics_offset = log.offset()
    save_checkpoint(state, out / LATEST_NAME)
    if label:
        save_checkpoint(state, out / f"checkpoint_{label}.tivg")


# --- checkpoint (de)serialization ---

def save_checkpoint(state: CurriculumState, path: str | Path) -> Path:
    cfg = state.config
    state_json = {
        "stage": state.stage,
        "iter_in_phase": state.iter_in_phase,
        "global_iter": state.global_iter,
        "metrics_offset": state.metrics_offset,
        "step_index": state.step_disc.step_index if state.step_disc else None,
    }
    rng_buf = io.BytesIO()
    for gen in (state.noise_rng, state.data_rng):
        raw = gen.get_state().numpy().tobytes()
        rng_buf.write(struct.pack("<Q", len(raw)))
        rng_buf.write(raw)

    params = []
    for model_name, named in state.named_model_params().items():
        params += [(f"{model_name}.{n}", p.data) for n, p in named]

    pca_blob = ckpt.pack_named_tensors([
        ("mean", torch.from_numpy(state.pca.mean)),
        ("components", torch.from_numpy(state.pca.components)),
        ("explained_variance", torch.from_numpy(state.pca.explained_variance)),
    ])

    opt_steps: dict[str, float] = {}
    opt_tensors: list[tuple[str, torch.Tensor]] = []
    for opt_name, opt, named in _optimizer_table(state):
        if opt is None:
            continue
        blob = adam_state_export(opt, named)
        for pid, entry in blob.items():
            key = f"{opt_name}.{pid}"
            opt_steps[key] = entry["step"]
            opt_tensors.append((f"{key}.exp_avg", entry["exp_avg"]))
            opt_tensors.append((f"{key}.exp_avg_sq", entry["exp_avg_sq"]))
    steps_json = ckpt.pack_json(opt_steps)
    opt_buf = io.BytesIO()
    opt_buf.write(struct.pack("<Q", len(steps_json)))
    opt_buf.write(steps_json)
    opt_buf.write(ckpt.pack_named_tensors(opt_tensors))

    sections = [
        ("config", config_to_text(cfg).encode("utf-8")),
        ("state", ckpt.pack_json(state_json)),
        ("rng", rng_buf.getvalue()),
        ("params", ckpt.pack_named_tensors(params)),
        ("pca", pca_blob),
        ("optimizer", opt_buf.getvalue()),
    ]
    return ckpt.write_checkpoint(path, sections)


def _optimizer_table(state: CurriculumState):
    g_named = ([(f"generator.{n}", p) for n, p in state.generator.named_parameters()]
               + [(f"recurrent.{n}", p) for n, p in state.recurrent.named_parameters()])
    di_named = [(f"image_disc.{n}", p) for n, p in state.image_disc.named_parameters()]
    ds_named = ([(f"step_disc.{n}", p) for n, p in state.step_disc.named_parameters()]
                if state.step_disc else [])
    return [
        ("opt_g", state.opt_g, g_named),
        ("opt_di", state.opt_di, di_named),
        ("opt_ds", state.opt_ds, ds_named),
    ]


def load_checkpoint(path: str | Path) -> CurriculumState:
    sections = ckpt.read_checkpoint(path)
    for required in ("config", "state", "rng", "params", "pca", "optimizer"):
        if required not in sections:
            raise ckpt.CheckpointFormatError(f"missing checkpoint section {required!r}")
    cfg = config_from_text(sections["config"].decode("utf-8"))
    meta = ckpt.unpack_json(sections["state"])

    pca_items = dict(ckpt.unpack_named_tensors(sections["pca"]))
    pca = PcaModel(mean=pca_items["mean"].numpy(),
                   components=pca_items["components"].numpy(),
                   explained_variance=pca_items["explained_variance"].numpy())

    state = init_state(cfg, pca)
    state.stage = meta["stage"]
    state.iter_in_phase = meta["iter_in_phase"]
    state.global_iter = meta["global_iter"]
    state.metrics_offset = meta["metrics_offset"]
    if meta["step_index"] is not None:
        state.step_disc = StepDiscriminator(meta["step_index"], cfg.frame_size,
                                            cfg.frame_channels, cfg.d_base_channels,
                                            cfg.code_dim)
        state.opt_ds = make_adam(state.step_disc.parameters(), cfg.lr_d,
                                 (cfg.beta1, cfg.beta2))

    tensors = dict(ckpt.unpack_named_tensors(sections["params"]))
    for model_name, named in state.named_model_params().items():
        for pname, param in named:
            key = f"{model_name}.{pname}"
            if key not in tensors:
                raise ckpt.CheckpointFormatError(f"checkpoint missing parameter {key}")
            with torch.no_grad():
                param.copy_(tensors[key])

    fh = io.BytesIO(sections["rng"])
    for gen in (state.noise_rng, state.data_rng):
        (n,) = struct.unpack("<Q", fh.read(8))
        raw = fh.read(n)
        if len(raw) != n:
            raise ckpt.CheckpointFormatError("truncated rng section")
        gen.set_state(torch.from_numpy(np.frombuffer(raw, dtype=np.uint8).copy()))

    fh = io.BytesIO(sections["optimizer"])
    (jlen,) = struct.unpack("<Q", fh.read(8))
    steps = ckpt.unpack_json(fh.read(jlen))
    moments = dict(ckpt.unpack_named_tensors(fh.read()))
    for opt_name, opt, named in _optimizer_table(state):
        if opt is None:
            continue
        blob = {}
        for pid, _ in named:
            key = f"{opt_name}.{pid}"
            if key in steps:
                blob[pid] = {
                    "step": steps[key],
                    "exp_avg": moments[f"{key}.exp_avg"],
                    "exp_avg_sq": moments[f"{key}.exp_avg_sq"],
                }
        adam_state_import(opt, named, blob)
    return state


def inspect_checkpoint(path: str | Path) -> dict:
    sections = ckpt.read_checkpoint(path)
    cfg = config_from_text(sections["config"].decode("utf-8"))
    meta = ckpt.unpack_json(sections["state"])
    tensors = ckpt.unpack_named_tensors(sections["params"])
    counts: dict[str, int] = {}
    for name, t in tensors:
        counts[name.split(".", 1)[0]] = counts.get(name.split(".", 1)[0], 0) + t.numel()
    stage = "stage1" if meta["stage"] == 0 else f"step{meta['stage']}"
    info = {
        "format_version": ckpt.VERSION,
        "stage": stage,
        "iter_in_phase": meta["iter_in_phase"],
        "global_iteration": meta["global_iter"],
        "parameter_counts": counts,
        "config_hash": cfg.config_hash(),
        "frame_size": cfg.frame_size,
        "clip_frames": 2 ** cfg.n,
    }
    if meta["step_index"] is not None:
        info["step_disc_input_channels"] = (2 ** meta["step_index"]) * cfg.frame_channels
    return info


def generate_clips(state: CurriculumState, caption_text: str, count: int,
                   seed: int, frames: int | None = None) -> np.ndarray:
    """Sample `count` clips for one caption: (count, K, C, H, W) in [-1, 1]."""
    cfg = state.config
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    k = frames or 2 ** cfg.n
    code_np = caption_code(state.pca, Caption(text=caption_text, class_label=-1),
                           cfg.raw_dim)
    code = torch.tensor(code_np, dtype=torch.float32).unsqueeze(0).repeat(count, 1)
    rng = seeded_generator(seed)
    with torch.no_grad():
        latents = latent_chain(state.recurrent, code, k, rng)
        clips = generate_frames(state.generator, latents)
    return clips.numpy()
