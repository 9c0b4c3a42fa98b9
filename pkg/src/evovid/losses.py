"""Adversarial objectives: five-term real/fake/wrong losses and the
independent-pair batch construction that fights mode collapse.

Each discriminator loss is
    log D(real) + log D(real, code) + log(1 - D(fake))
    + log(1 - D(fake, code)) + log(1 - D(real, wrong_code))
averaged over the batch, where the unconditioned terms use the patch branch
(averaged over spatial locations) and the conditioned terms the text-match
branch. Discriminators ascend this objective, the generator and recurrent
unit descend it. The wrong-code term only touches real data, so it carries
no generator gradient by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .captions import Caption, InvalidInputError
from .data import DatasetIndex, SamplingError, sample_real_frame
from .models import (Generator, ImageDiscriminator, RecurrentUnit,
                     StepDiscriminator, _ClipDiscriminator, latent_chain)
from .substrate import NumericError

SCORE_EPS = 1e-7


@dataclass
class LossBreakdown:
    """The five loss terms and their sum, kept as graph tensors."""

    real_uncond: torch.Tensor
    real_cond: torch.Tensor
    fake_uncond: torch.Tensor
    fake_cond: torch.Tensor
    wrong_cond: torch.Tensor
    total: torch.Tensor

    def values(self) -> dict[str, float]:
        return {
            "real_uncond": float(self.real_uncond.detach()),
            "real_cond": float(self.real_cond.detach()),
            "fake_uncond": float(self.fake_uncond.detach()),
            "fake_cond": float(self.fake_cond.detach()),
            "wrong_cond": float(self.wrong_cond.detach()),
            "total": float(self.total.detach()),
        }


def _log_score(scores: torch.Tensor) -> torch.Tensor:
    return torch.log(scores.clamp(SCORE_EPS, 1.0 - SCORE_EPS)).mean()


def _log_one_minus(scores: torch.Tensor) -> torch.Tensor:
    return torch.log1p(-scores.clamp(SCORE_EPS, 1.0 - SCORE_EPS)).mean()


def _five_terms(disc: _ClipDiscriminator, real: torch.Tensor, fake: torch.Tensor,
                code: torch.Tensor, wrong_code: torch.Tensor) -> LossBreakdown:
    real_feat = disc.trunk_features(real)
    fake_feat = disc.trunk_features(fake)
    real_uncond = _log_score(disc.patch_scores_from(real_feat))
    real_cond = _log_score(disc.cond_score_from(real_feat, code))
    fake_uncond = _log_one_minus(disc.patch_scores_from(fake_feat))
    fake_cond = _log_one_minus(disc.cond_score_from(fake_feat, code))
    wrong_cond = _log_one_minus(disc.cond_score_from(real_feat, wrong_code))
    total = real_uncond + real_cond + fake_uncond + fake_cond + wrong_cond
    if not torch.isfinite(total):
        raise NumericError("loss is not finite")
    return LossBreakdown(real_uncond, real_cond, fake_uncond, fake_cond,
                         wrong_cond, total)


def loss_image(disc: ImageDiscriminator, real: torch.Tensor, fake: torch.Tensor,
               code: torch.Tensor, wrong_code: torch.Tensor) -> LossBreakdown:
    """Frame-level five-term loss over (paired) image inputs."""
    return _five_terms(disc, real, fake, code, wrong_code)


def loss_step(disc: StepDiscriminator, real_clip: torch.Tensor,
              fake_clip: torch.Tensor, code: torch.Tensor,
              wrong_code: torch.Tensor) -> LossBreakdown:
    """Clip-level five-term loss over 2^m channel-concatenated frames."""
    expected = 2 ** disc.step_index * disc.frame_channels
    for name, clip in (("real", real_clip), ("fake", fake_clip)):
        if clip.shape[1] != expected:
            raise InvalidInputError(
                f"{name} clip has {clip.shape[1]} channels, step "
                f"{disc.step_index} expects {expected}"
            )
    return _five_terms(disc, real_clip, fake_clip, code, wrong_code)


def loss_total(image_loss: torch.Tensor, step_loss: torch.Tensor | None = None
               ) -> torch.Tensor:
    """Combined objective; the step term exists only during growth steps."""
    if step_loss is None:
        return image_loss
    return image_loss + step_loss


def generator_push_loss(disc: _ClipDiscriminator, fake: torch.Tensor,
                        code: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator objective: -log D on both fake terms.

    Optional alternative to descending the minimax objective directly;
    off by default.
    """
    feat = disc.trunk_features(fake)
    return -(_log_score(disc.patch_scores_from(feat))
             + _log_score(disc.cond_score_from(feat, code)))


@dataclass
class IspPair:
    """Two same-caption samples generated (or drawn) independently."""

    sample_a: torch.Tensor
    sample_b: torch.Tensor

    @property
    def pair(self) -> torch.Tensor:
        return torch.cat([self.sample_a, self.sample_b], dim=-3)


def make_isp_fake_pair(generator: Generator, recurrent: RecurrentUnit,
                       code: torch.Tensor, k: int, rng: torch.Generator) -> IspPair:
    """Generate the k-th frame twice from independent chains, shared code.

    Both chains run the full k positions with their own noise draws; only
    the k-th frame of each is rendered.
    """
    if k < 1:
        raise InvalidInputError(f"frame position must be >= 1, got {k}")
    latents_a = latent_chain(recurrent, code, k, rng)
    latents_b = latent_chain(recurrent, code, k, rng)
    frame_a = generator(latents_a[:, -1])
    frame_b = generator(latents_b[:, -1])
    return IspPair(sample_a=frame_a, sample_b=frame_b)


def sample_real_dissimilar_pair(index: DatasetIndex, caption: Caption,
                                rng: torch.Generator, max_tries: int = 64
                                ) -> tuple[np.ndarray, np.ndarray]:
    """Two sufficiently-different real frames sharing the caption's class.

    Frames come from two distinct clips when the class has them, otherwise
    from positions at least half a clip apart. Candidates are redrawn until
    their pixel L2 distance reaches the class's dissimilarity threshold
    (median pairwise frame distance); if no candidate passes within the
    retry budget the most distant one seen is returned.
    """
    label = caption.class_label
    clip_ids = index.clips_of_class(label)
    if len(clip_ids) == 1 and index.clips[clip_ids[0]].num_frames < 2:
        raise SamplingError(
            f"class {label} has a single frame; no dissimilar pair exists"
        )
    tau = index.dissimilarity_threshold(label)
    best, best_dist = None, -1.0
    for _ in range(max_tries):
        if len(clip_ids) >= 2:
            i, j = _two_distinct(len(clip_ids), rng)
            a = sample_real_frame(index.clips[clip_ids[i]], rng)
            b = sample_real_frame(index.clips[clip_ids[j]], rng)
        else:
            clip = index.clips[clip_ids[0]]
            t = clip.num_frames
            gap = (t + 1) // 2
            ia = int(torch.randint(t - gap, (1,), generator=rng).item())
            ib = ia + gap + int(torch.randint(t - gap - ia, (1,), generator=rng).item())
            a, b = clip.frames[ia], clip.frames[ib]
        dist = float(np.linalg.norm((a - b).ravel()))
        if dist >= tau:
            return a, b
        if dist > best_dist:
            best, best_dist = (a, b), dist
    return best


def _two_distinct(n: int, rng: torch.Generator) -> tuple[int, int]:
    i = int(torch.randint(n, (1,), generator=rng).item())
    j = int(torch.randint(n - 1, (1,), generator=rng).item())
    if j >= i:
        j += 1
    return i, j
