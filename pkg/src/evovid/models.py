"""Network roles: generator, recurrent unit, image and per-step clip
discriminators, plus the latent chain and step-discriminator inheritance.

All discriminators share one body: a strided conv trunk over the
channel-concatenated input, a text-conditional branch (caption code
broadcast onto the 4x4 feature map, 1x1 fusion conv, sigmoid scalar) and an
unconditioned patch branch (1x1 conv to a sigmoid score map). A step-m clip
discriminator differs from its predecessor only in first-layer input
channels, which is what makes the inheritance rule below possible.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .captions import InvalidInputError
from .substrate import GRUCell


def _stage_count(frame_size: int) -> int:
    stages = int(round(math.log2(frame_size / 4)))
    if frame_size != 4 * 2 ** stages or stages < 1:
        raise InvalidInputError(f"frame_size must be 4*2^s with s>=1, got {frame_size}")
    return stages


class RecurrentUnit(nn.Module):
    """One GRU cell applied at every chain position of every stage."""

    def __init__(self, code_dim: int, noise_dim: int, hidden_dim: int):
        super().__init__()
        self.code_dim = code_dim
        self.noise_dim = noise_dim
        self.hidden_dim = hidden_dim
        self.cell = GRUCell(code_dim + noise_dim, hidden_dim)

    def forward(self, hidden: torch.Tensor, code: torch.Tensor,
                noise: torch.Tensor) -> torch.Tensor:
        return self.cell(hidden, torch.cat([code, noise], dim=-1))


class Generator(nn.Module):
    """Transposed-conv stack mapping a latent state to one tanh frame."""

    def __init__(self, frame_size: int = 64, frame_channels: int = 3,
                 base_channels: int = 16, hidden_dim: int = 128):
        super().__init__()
        self.frame_size = frame_size
        self.frame_channels = frame_channels
        self.base_channels = base_channels
        self.hidden_dim = hidden_dim
        stages = _stage_count(frame_size)
        chs = [base_channels * 2 ** (stages - 1 - i) for i in range(stages)]
        self.fc = nn.Linear(hidden_dim, chs[0] * 16)
        blocks = []
        for i in range(stages - 1):
            blocks += [
                nn.ConvTranspose2d(chs[i], chs[i + 1], 4, stride=2, padding=1),
                nn.InstanceNorm2d(chs[i + 1], affine=True),
                nn.ReLU(),
            ]
        blocks += [nn.ConvTranspose2d(chs[-1], frame_channels, 4, stride=2, padding=1),
                   nn.Tanh()]
        self.blocks = nn.Sequential(*blocks)
        self._head_ch = chs[0]

    def forward(self, latent: torch.Tensor) -> torch.Tensor:
        if latent.shape[-1] != self.hidden_dim:
            raise InvalidInputError(
                f"generator expects latent dim {self.hidden_dim}, got {latent.shape[-1]}"
            )
        x = self.fc(latent).reshape(-1, self._head_ch, 4, 4)
        return self.blocks(x)


class _ClipDiscriminator(nn.Module):
    """Shared two-branch discriminator body over frame-concatenated input."""

    def __init__(self, frame_slots: int, frame_size: int, frame_channels: int,
                 base_channels: int, code_dim: int):
        super().__init__()
        self.frame_slots = frame_slots
        self.frame_size = frame_size
        self.frame_channels = frame_channels
        self.base_channels = base_channels
        self.code_dim = code_dim
        stages = _stage_count(frame_size)
        chs = [base_channels * 2 ** i for i in range(stages)]
        layers = [nn.Conv2d(frame_slots * frame_channels, chs[0], 4, stride=2, padding=1),
                  nn.LeakyReLU(0.2)]
        for i in range(stages - 1):
            layers += [
                nn.Conv2d(chs[i], chs[i + 1], 4, stride=2, padding=1),
                nn.InstanceNorm2d(chs[i + 1], affine=True),
                nn.LeakyReLU(0.2),
            ]
        self.trunk = nn.Sequential(*layers)
        feat_ch = chs[-1]
        self.cond_fuse = nn.Conv2d(feat_ch + code_dim, feat_ch, 1)
        self.cond_act = nn.LeakyReLU(0.2)
        self.cond_out = nn.Conv2d(feat_ch, 1, 4)
        self.patch_out = nn.Conv2d(feat_ch, 1, 1)

    @property
    def input_channels(self) -> int:
        return self.frame_slots * self.frame_channels

    def _check_input(self, x: torch.Tensor) -> None:
        if x.dim() != 4 or x.shape[1] != self.input_channels:
            raise InvalidInputError(
                f"{type(self).__name__} expects (B, {self.input_channels}, "
                f"{self.frame_size}, {self.frame_size}) input, got {tuple(x.shape)}"
            )

    def first_layer_preact(self, x: torch.Tensor) -> torch.Tensor:
        """Pre-activation of the first trunk conv (inheritance checks)."""
        self._check_input(x)
        return self.trunk[0](x)

    def trunk_features(self, x: torch.Tensor) -> torch.Tensor:
        self._check_input(x)
        return self.trunk(x)

    def cond_score_from(self, feat: torch.Tensor, code: torch.Tensor) -> torch.Tensor:
        if code.shape[-1] != self.code_dim:
            raise InvalidInputError(
                f"caption code dim {code.shape[-1]} != expected {self.code_dim}"
            )
        spatial = code.reshape(code.shape[0], self.code_dim, 1, 1)
        spatial = spatial.expand(-1, -1, feat.shape[2], feat.shape[3])
        h = self.cond_act(self.cond_fuse(torch.cat([feat, spatial], dim=1)))
        return torch.sigmoid(self.cond_out(h)).reshape(feat.shape[0])

    def patch_scores_from(self, feat: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.patch_out(feat)).squeeze(1)

    def forward(self, x: torch.Tensor, code: torch.Tensor | None = None) -> torch.Tensor:
        feat = self.trunk_features(x)
        if code is None:
            return self.patch_scores_from(feat)
        return self.cond_score_from(feat, code)


class ImageDiscriminator(_ClipDiscriminator):
    """Frame-level discriminator; consumes channel-concatenated sample pairs
    when pairing is on, single frames otherwise."""

    def __init__(self, frame_size: int = 64, frame_channels: int = 3,
                 base_channels: int = 16, code_dim: int = 60, paired: bool = True):
        super().__init__(2 if paired else 1, frame_size, frame_channels,
                         base_channels, code_dim)
        self.paired = paired


class StepDiscriminator(_ClipDiscriminator):
    """Clip discriminator for growth step m, over 2^m concatenated frames."""

    def __init__(self, step_index: int, frame_size: int = 64, frame_channels: int = 3,
                 base_channels: int = 16, code_dim: int = 60):
        if step_index < 1:
            raise InvalidInputError("step_index must be >= 1")
        super().__init__(2 ** step_index, frame_size, frame_channels,
                         base_channels, code_dim)
        self.step_index = step_index


def latent_chain(recurrent: RecurrentUnit, code: torch.Tensor, count: int,
                 rng: torch.Generator) -> torch.Tensor:
    """Run the recurrent unit `count` times with fresh noise, fixed code.

    The initial hidden state and every per-position noise vector are fresh
    standard-normal draws from `rng`. Returns (B, count, hidden_dim).
    """
    if count < 1:
        raise InvalidInputError(f"chain length must be >= 1, got {count}")
    if code.dim() != 2 or code.shape[-1] != recurrent.code_dim:
        raise InvalidInputError(
            f"caption code must be (B, {recurrent.code_dim}), got {tuple(code.shape)}"
        )
    batch = code.shape[0]
    dtype = code.dtype
    hidden = torch.randn(batch, recurrent.hidden_dim, generator=rng, dtype=dtype)
    states = []
    for _ in range(count):
        noise = torch.randn(batch, recurrent.noise_dim, generator=rng, dtype=dtype)
        hidden = recurrent(hidden, code, noise)
        states.append(hidden)
    return torch.stack(states, dim=1)


def generate_frames(generator: Generator, latents: torch.Tensor) -> torch.Tensor:
    """Apply the same generator to every latent: (B, K, h) -> (B, K, C, H, W)."""
    if latents.dim() == 2:
        latents = latents.unsqueeze(0)
    if latents.numel() == 0:
        raise InvalidInputError("latents must be non-empty")
    b, k, _ = latents.shape
    frames = generator(latents.reshape(b * k, -1))
    return frames.reshape(b, k, generator.frame_channels,
                          generator.frame_size, generator.frame_size)


def as_clip_tensor(frames: torch.Tensor) -> torch.Tensor:
    """(B, K, C, H, W) -> (B, K*C, H, W), frame order preserved."""
    b, k, c, h, w = frames.shape
    return frames.reshape(b, k * c, h, w)


def discriminate_image(disc: ImageDiscriminator, x: torch.Tensor,
                       code: torch.Tensor | None = None) -> torch.Tensor:
    return disc(x, code)


def discriminate_step(disc: StepDiscriminator, clip: torch.Tensor,
                      code: torch.Tensor | None = None) -> torch.Tensor:
    expected = 2 ** disc.step_index
    if clip.shape[1] != expected * disc.frame_channels:
        raise InvalidInputError(
            f"step-{disc.step_index} discriminator expects {expected} frames "
            f"({expected * disc.frame_channels} channels), got {clip.shape[1]} channels"
        )
    return disc(clip, code)


def init_step_discriminator(prev: _ClipDiscriminator, step_index: int | None = None
                            ) -> StepDiscriminator:
    """Build the step-m discriminator from its predecessor's weights.

    When the input width doubles, each first-layer frame slice of the
    predecessor is copied into both of the two corresponding new slices at
    half magnitude, so a clip made by duplicating every frame of a valid
    predecessor input produces the same first-layer pre-activation:
    (W/2) x + (W/2) x = W x. Every other layer (and every bias) is copied
    verbatim. When the input width already matches (the image discriminator
    feeding step 1 under pairing), all layers are copied verbatim.
    """
    if step_index is None:
        step_index = 1 if isinstance(prev, ImageDiscriminator) else prev.step_index + 1
    new = StepDiscriminator(step_index, prev.frame_size, prev.frame_channels,
                            prev.base_channels, prev.code_dim)
    dtype = next(prev.parameters()).dtype
    new = new.to(dtype)
    target_slots = new.frame_slots
    state = prev.state_dict()
    if prev.frame_slots == target_slots:
        new.load_state_dict(state)
        return new
    if prev.frame_slots * 2 != target_slots:
        raise InvalidInputError(
            f"cannot initialize a {target_slots}-frame discriminator from a "
            f"{prev.frame_slots}-frame one (expected {target_slots // 2})"
        )
    first_key = "trunk.0.weight"
    prev_first = state.pop(first_key)
    new.load_state_dict(state, strict=False)
    c = prev.frame_channels
    with torch.no_grad():
        w = new.trunk[0].weight
        for i in range(prev.frame_slots):
            half = prev_first[:, i * c:(i + 1) * c] / 2.0
            w[:, (2 * i) * c:(2 * i + 1) * c] = half
            w[:, (2 * i + 1) * c:(2 * i + 2) * c] = half
    return new


def duplicate_frames(clip: torch.Tensor, frame_channels: int) -> torch.Tensor:
    """Repeat every frame slice once: (B, K*C, H, W) -> (B, 2K*C, H, W)."""
    b, kc, h, w = clip.shape
    k = kc // frame_channels
    frames = clip.reshape(b, k, frame_channels, h, w)
    doubled = frames.repeat_interleave(2, dim=1)
    return doubled.reshape(b, 2 * kc, h, w)
