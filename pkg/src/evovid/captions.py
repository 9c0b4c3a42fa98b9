"""Caption encoding: deterministic feature hashing followed by PCA reduction.

Captions are turned into a fixed-width raw embedding by hashing word unigrams
and bigrams into bins (no learned vocabulary, bit-identical across processes).
A PCA model fitted over the training captions then projects the raw embedding
down to the low-dimensional code that conditions every network.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

import numpy as np

RAW_DIM = 256
CODE_DIM = 60

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class InvalidInputError(ValueError):
    """Raised when an operation receives arguments violating its contract."""


@dataclass(frozen=True)
class Caption:
    """A text description with its class id and structured attributes."""

    text: str
    class_label: int
    attributes: tuple[tuple[str, str], ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.text.strip():
            raise InvalidInputError("caption text must be non-empty")


def _tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _hash_feature(feature: str) -> tuple[int, float]:
    """Stable (bin, sign) pair for a token feature.

    blake2b is keyed only by the feature bytes, so the mapping is identical
    across runs, processes and machines regardless of PYTHONHASHSEED.
    """
    digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest()
    value = int.from_bytes(digest, "little")
    index = value % RAW_DIM
    sign = 1.0 if (value >> 63) & 1 else -1.0
    return index, sign


def encode_caption(caption: Caption, dim: int = RAW_DIM) -> np.ndarray:
    """Hash caption unigrams and bigrams into an L2-normalized vector.

    Pure function of the caption text: the same string always produces the
    same vector. Captions differing in any token land in (almost surely)
    different bins, so their vectors are distinct.
    """
    tokens = _tokens(caption.text)
    if not tokens:
        raise InvalidInputError(f"caption {caption.text!r} has no encodable tokens")
    features = list(tokens)
    features += [f"{a} {b}" for a, b in zip(tokens, tokens[1:])]
    vec = np.zeros(dim, dtype=np.float64)
    for feat in features:
        digest = hashlib.blake2b(feat.encode("utf-8"), digest_size=8).digest()
        value = int.from_bytes(digest, "little")
        vec[value % dim] += 1.0 if (value >> 63) & 1 else -1.0
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        # All feature signs cancelled; fall back to a single deterministic bin.
        idx, sign = _hash_feature(" ".join(tokens))
        vec[idx % dim] = sign
        norm = 1.0
    return vec / norm


@dataclass
class PcaModel:
    """Rank-d linear reduction: mean, principal directions, eigenvalues.

    `components` rows are orthonormal covariance eigenvectors sorted by
    non-increasing explained variance.
    """

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    @property
    def dim(self) -> int:
        return self.components.shape[0]

    @property
    def raw_dim(self) -> int:
        return self.components.shape[1]


def fit_pca(embeddings: np.ndarray, d: int = CODE_DIM) -> PcaModel:
    """Fit the top-d principal directions of the sample covariance.

    Uses a dense symmetric eigendecomposition (the raw width is small).
    Eigenvalues use the unbiased 1/(N-1) normalization. Sign convention:
    the largest-magnitude entry of every component is made positive; ties
    between equal eigenvalues keep the eigensolver's stable order.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2:
        raise InvalidInputError("embeddings must be a 2-D array (samples x dim)")
    n, raw_dim = embeddings.shape
    if d < 1:
        raise InvalidInputError("d must be positive")
    if d > raw_dim:
        raise InvalidInputError(f"d={d} exceeds raw dimension {raw_dim}")
    if n < d:
        raise InvalidInputError(f"need at least d={d} samples, got {n}")
    mean = embeddings.mean(axis=0)
    centered = embeddings - mean
    cov = centered.T @ centered / (n - 1) if n > 1 else np.zeros((raw_dim, raw_dim))
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(-eigvals, kind="stable")[:d]
    eigvals = np.clip(eigvals[order], 0.0, None)
    components = eigvecs[:, order].T.copy()
    for row in components:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    return PcaModel(mean=mean, components=components, explained_variance=eigvals)


def project(pca: PcaModel, raw: np.ndarray) -> np.ndarray:
    """Map a raw embedding to code space: components @ (raw - mean)."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] != pca.raw_dim:
        raise InvalidInputError(
            f"raw embedding has dim {raw.shape[-1]}, PCA expects {pca.raw_dim}"
        )
    return (raw - pca.mean) @ pca.components.T


def caption_code(pca: PcaModel, caption: Caption, raw_dim: int | None = None) -> np.ndarray:
    """Convenience path caption -> raw embedding -> code."""
    return project(pca, encode_caption(caption, dim=raw_dim or pca.raw_dim))
