"""Quantitative harness: feature FID, inception-style score over a small 3-D
conv classifier, caption-class accuracy, and nearest-neighbor audits.

Both feature extractors are trained in-repo on the real dataset, so the
absolute numbers are only comparable within one run's protocol; ordering
across model states (trained vs untrained, with vs without pairing) is the
meaningful signal at this scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .captions import InvalidInputError
from .curriculum import CurriculumState, generate_clips
from .data import DatasetIndex
from .substrate import NumericError, init_parameters, make_adam, seeded_generator


class FrameFeatureExtractor(nn.Module):
    """Small frame classifier; its pooled trunk output is the FID feature."""

    def __init__(self, frame_channels: int = 3, num_classes: int = 4,
                 base_channels: int = 16):
        super().__init__()
        self.trunk = nn.Sequential(
            nn.Conv2d(frame_channels, base_channels, 4, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(base_channels, base_channels * 2, 4, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(base_channels * 2, base_channels * 4, 4, 2, 1), nn.LeakyReLU(0.2),
            nn.AdaptiveAvgPool2d(1),
        )
        self.feature_dim = base_channels * 4
        self.head = nn.Linear(self.feature_dim, num_classes)

    def features(self, frames: torch.Tensor) -> torch.Tensor:
        return self.trunk(frames).flatten(1)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(frames))


class Clip3DClassifier(nn.Module):
    """Five 3-D conv layers over (B, C, T, H, W) clips, softmax class head."""

    def __init__(self, frame_channels: int = 3, num_classes: int = 4,
                 base_channels: int = 8):
        super().__init__()
        c = base_channels
        self.trunk = nn.Sequential(
            nn.Conv3d(frame_channels, c, 3, stride=(1, 2, 2), padding=1), nn.ReLU(),
            nn.Conv3d(c, c * 2, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv3d(c * 2, c * 4, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv3d(c * 4, c * 4, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv3d(c * 4, c * 8, 3, stride=2, padding=1), nn.ReLU(),
            nn.AdaptiveAvgPool3d(1),
        )
        self.head = nn.Linear(c * 8, num_classes)

    def forward(self, clips: torch.Tensor) -> torch.Tensor:
        return self.head(self.trunk(clips).flatten(1))

    def predict_proba(self, clips: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return F.softmax(self.forward(clips), dim=1)


def _clips_to_input(clips: np.ndarray) -> torch.Tensor:
    # (N, T, C, H, W) -> (N, C, T, H, W)
    return torch.from_numpy(np.ascontiguousarray(clips.transpose(0, 2, 1, 3, 4)))


def train_frame_classifier(index: DatasetIndex, epochs: int = 3, seed: int = 0,
                           lr: float = 1e-3, batch_size: int = 64,
                           base_channels: int = 16) -> FrameFeatureExtractor:
    labels_map = {label: i for i, label in enumerate(index.classes)}
    frames, labels = [], []
    for clip in index.clips:
        frames.append(clip.frames)
        labels += [labels_map[clip.caption.class_label]] * clip.num_frames
    x = torch.from_numpy(np.concatenate(frames))
    y = torch.tensor(labels)
    model = FrameFeatureExtractor(index.frame_shape[0], len(labels_map), base_channels)
    gen = seeded_generator(seed)
    init_parameters(model, gen)
    _fit(model, x, y, epochs, lr, batch_size, gen)
    return model


def train_clip_classifier(index: DatasetIndex, epochs: int = 5, seed: int = 0,
                          lr: float = 1e-3, batch_size: int = 8,
                          base_channels: int = 8) -> Clip3DClassifier:
    labels_map = {label: i for i, label in enumerate(index.classes)}
    x = _clips_to_input(np.stack([clip.frames for clip in index.clips]))
    y = torch.tensor([labels_map[c.caption.class_label] for c in index.clips])
    model = Clip3DClassifier(index.frame_shape[0], len(labels_map), base_channels)
    gen = seeded_generator(seed)
    init_parameters(model, gen)
    _fit(model, x, y, epochs, lr, batch_size, gen)
    return model


def _fit(model: nn.Module, x: torch.Tensor, y: torch.Tensor, epochs: int,
         lr: float, batch_size: int, gen: torch.Generator) -> None:
    opt = make_adam(model.parameters(), lr, betas=(0.9, 0.999))
    n = len(x)
    for _ in range(epochs):
        order = torch.randperm(n, generator=gen)
        for i in range(0, n, batch_size):
            idx = order[i:i + batch_size]
            opt.zero_grad()
            loss = F.cross_entropy(model(x[idx]), y[idx])
            loss.backward()
            opt.step()
    model.eval()


@dataclass
class GaussianStats:
    """Sample mean and unbiased covariance of a feature set."""

    mean: np.ndarray
    cov: np.ndarray


def fit_stats(features: np.ndarray) -> GaussianStats:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise InvalidInputError("need at least 2 feature vectors")
    mean = features.mean(axis=0)
    centered = features - mean
    cov = centered.T @ centered / (features.shape[0] - 1)
    return GaussianStats(mean=mean, cov=cov)


def _sqrtm_psd(mat: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    sym = (mat + mat.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(sym)
    if eigvals.min() < -tol * max(1.0, abs(eigvals.max())):
        raise NumericError(f"matrix is not PSD (min eigenvalue {eigvals.min():.3e})")
    eigvals = np.clip(eigvals, 0.0, None)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


def compute_fid(a: GaussianStats, b: GaussianStats) -> float:
    """Frechet distance between two Gaussian feature fits.

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}); the matrix square
    root comes from eigendecompositions of symmetrized PSD products, with
    tiny negative eigenvalues clamped to zero.
    """
    if a.mean.shape != b.mean.shape:
        raise InvalidInputError("feature dimensions differ")
    diff = a.mean - b.mean
    root_a = _sqrtm_psd(a.cov)
    cross = _sqrtm_psd(root_a @ b.cov @ root_a)
    fid = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(cross))
    if fid < -1e-6:
        raise NumericError(f"negative distance {fid:.3e} beyond tolerance")
    return max(fid, 0.0)


def inception_score(probs: np.ndarray, splits: int = 10) -> tuple[float, float]:
    """exp of mean KL(p(y|x) || p(y)) per split; returns (mean, std)."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise InvalidInputError("probabilities must be (N, K)")
    if np.any(probs < -1e-9) or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise InvalidInputError("rows must be probability distributions")
    n = probs.shape[0]
    if n < splits or splits < 1:
        raise InvalidInputError(f"cannot form {splits} splits from {n} rows")
    scores = []
    for s in range(splits):
        part = probs[s * n // splits:(s + 1) * n // splits]
        marginal = part.mean(axis=0)
        logp = np.log(np.clip(part, 1e-16, None))
        logm = np.log(np.clip(marginal, 1e-16, None))
        kl = np.where(part > 0, part * (logp - logm), 0.0).sum(axis=1)
        scores.append(float(np.exp(kl.mean())))
    return float(np.mean(scores)), float(np.std(scores))


def classification_accuracy(classifier: Clip3DClassifier, clips: np.ndarray,
                            labels: list[int], class_order: list[int],
                            batch_size: int = 16) -> float:
    """Fraction of clips whose argmax class matches the caption class.

    Ties resolve to the lowest class index. `class_order` maps classifier
    output columns back to dataset class labels.
    """
    probs = predict_clip_probs(classifier, clips, batch_size)
    pred_cols = np.argmax(probs, axis=1)
    predicted = [class_order[c] for c in pred_cols]
    return float(np.mean([p == t for p, t in zip(predicted, labels)]))


def predict_clip_probs(classifier: Clip3DClassifier, clips: np.ndarray,
                       batch_size: int = 16) -> np.ndarray:
    x = _clips_to_input(np.asarray(clips, dtype=np.float32))
    outs = []
    for i in range(0, len(x), batch_size):
        outs.append(classifier.predict_proba(x[i:i + batch_size]).numpy())
    return np.concatenate(outs).astype(np.float64)


def nearest_neighbor(query: np.ndarray, frames: np.ndarray) -> tuple[int, float]:
    """Exhaustive pixel-L2 scan; exact minimum (first index on ties)."""
    if len(frames) == 0:
        raise InvalidInputError("training frame set is empty")
    flat = np.asarray(frames, dtype=np.float64).reshape(len(frames), -1)
    q = np.asarray(query, dtype=np.float64).ravel()
    dists = np.sqrt(((flat - q) ** 2).sum(axis=1))
    idx = int(np.argmin(dists))
    return idx, float(dists[idx])


# --- protocols over a trained curriculum state ---

def generated_frame_pool(state: CurriculumState, index: DatasetIndex,
                         num_frames: int, seed: int) -> np.ndarray:
    """At least num_frames generated frames, captions cycled round-robin."""
    captions = index.unique_captions()
    k = 2 ** state.config.n
    per_caption = math.ceil(num_frames / k / len(captions))
    frames = []
    for i, cap in enumerate(captions):
        clips = generate_clips(state, cap.text, per_caption, seed + i)
        frames.append(clips.reshape(-1, *clips.shape[2:]))
    return np.concatenate(frames)[:num_frames]


def real_frame_pool(index: DatasetIndex, num_frames: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    all_frames = np.concatenate([c.frames for c in index.clips])
    idx = rng.choice(len(all_frames), size=min(num_frames, len(all_frames)),
                     replace=False)
    return all_frames[idx]


def frame_features(extractor: FrameFeatureExtractor, frames: np.ndarray,
                   batch_size: int = 64) -> np.ndarray:
    x = torch.from_numpy(np.asarray(frames, dtype=np.float32))
    outs = []
    with torch.no_grad():
        for i in range(0, len(x), batch_size):
            outs.append(extractor.features(x[i:i + batch_size]).numpy())
    return np.concatenate(outs).astype(np.float64)


def fid_protocol(state: CurriculumState, index: DatasetIndex,
                 extractor: FrameFeatureExtractor, num_frames: int = 200,
                 seed: int = 0) -> float:
    gen_frames = generated_frame_pool(state, index, num_frames, seed)
    real_frames = real_frame_pool(index, num_frames, seed + 977)
    stats_gen = fit_stats(frame_features(extractor, gen_frames))
    stats_real = fit_stats(frame_features(extractor, real_frames))
    return compute_fid(stats_real, stats_gen)


def generate_labeled_clips(state: CurriculumState, index: DatasetIndex,
                           clips_per_caption: int, seed: int
                           ) -> tuple[np.ndarray, list[int]]:
    clips, labels = [], []
    for i, cap in enumerate(index.unique_captions()):
        out = generate_clips(state, cap.text, clips_per_caption, seed + i)
        clips.append(out)
        labels += [cap.class_label] * clips_per_caption
    return np.concatenate(clips), labels


def accuracy_protocol(state: CurriculumState, index: DatasetIndex,
                      classifier: Clip3DClassifier, clips_per_caption: int = 16,
                      seed: int = 0) -> dict:
    clips, labels = generate_labeled_clips(state, index, clips_per_caption, seed)
    real_clips = np.stack([c.frames for c in index.clips])
    real_labels = [c.caption.class_label for c in index.clips]
    return {
        "accuracy": classification_accuracy(classifier, clips, labels, index.classes),
        "in_set_accuracy": classification_accuracy(classifier, real_clips,
                                                   real_labels, index.classes),
    }


def inception_protocol(state: CurriculumState, index: DatasetIndex,
                       classifier: Clip3DClassifier, clips_per_caption: int = 16,
                       seed: int = 0, splits: int = 10) -> tuple[float, float]:
    clips, _ = generate_labeled_clips(state, index, clips_per_caption, seed)
    probs = predict_clip_probs(classifier, clips)
    return inception_score(probs, splits=splits)


def nearest_neighbor_protocol(state: CurriculumState, index: DatasetIndex,
                              num_queries: int = 8, seed: int = 0) -> list[dict]:
    queries = generated_frame_pool(state, index, num_queries, seed)
    all_frames = np.concatenate([c.frames for c in index.clips])
    results = []
    for qi, q in enumerate(queries):
        idx, dist = nearest_neighbor(q, all_frames)
        results.append({"query": qi, "match": int(idx), "distance": dist})
    return results
