"""Objective terms: adversarial, identity, proxy NormSoftmax, chainer, triplet."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .module import Module, parameter
from .tensor import Tensor

GAN_LOSSES = ("nonsaturating", "minimax")


@dataclass
class LossWeights:
    lam: float = 10.0
    gamma: float = 0.1
    triplet_margin: float = 0.2

    def __post_init__(self):
        if self.lam < 0 or self.gamma < 0:
            raise ValueError(f"loss weights must be non-negative, got lambda={self.lam}, gamma={self.gamma}")


class ProxyBank(Module):
    """One learnable proxy row per training class.

    With ``normalize=True`` the rows are projected back onto the unit sphere by
    :meth:`renormalize`, which the trainer calls after every optimizer step, so
    embedding-proxy dot products are cosines.
    """

    def __init__(self, classes: Iterable[int], dim: int, temperature: float = 0.05,
                 normalize: bool = True, seed: int = 0, dtype=np.float32):
        classes = sorted(int(c) for c in classes)
        if len(set(classes)) != len(classes):
            raise ValueError("duplicate class ids in proxy bank")
        if temperature <= 0:
            raise ValueError(f"temperature must be positive, got {temperature}")
        self.class_index = {c: i for i, c in enumerate(classes)}
        self.temperature = float(temperature)
        self.normalize = normalize
        rng = np.random.default_rng(seed)
        init = rng.normal(size=(len(classes), dim))
        if normalize:
            init /= np.linalg.norm(init, axis=1, keepdims=True)
        self.proxies = parameter(init, dtype)

    @property
    def classes(self) -> list[int]:
        return list(self.class_index)

    def rows(self, labels: Sequence[int]) -> np.ndarray:
        try:
            return np.array([self.class_index[int(y)] for y in labels], dtype=np.int64)
        except KeyError as exc:
            raise KeyError(f"label {exc.args[0]} has no proxy (known classes: {self.classes})") from None

    def renormalize(self, tol: float = 5e-7) -> None:
        """Rescale rows whose norm drifted more than ``tol`` from 1.

        Rows already within ``tol`` are left bit-for-bit untouched.
        """
        if self.normalize:
            p = self.proxies.data
            norms = np.linalg.norm(p.astype(np.float64), axis=1)
            drift = np.abs(norms - 1.0) > tol
            if drift.any():
                p[drift] = (p[drift] / np.maximum(norms[drift], 1e-12)[:, None]).astype(p.dtype)


# ---------------------------------------------------------------- adversarial
def adversarial_loss_d(real_logits: Tensor, fake_logits: Tensor) -> Tensor:
    """Discriminator BCE: mean of -log s(real) - log(1 - s(fake)) over patches."""
    if real_logits.shape != fake_logits.shape:
        raise ValueError(f"logit maps differ in shape: {real_logits.shape} vs {fake_logits.shape}")
    # -log s(x) = softplus(-x);  -log(1 - s(x)) = softplus(x)
    return (-real_logits).softplus().mean() + fake_logits.softplus().mean()


def adversarial_loss_g(fake_logits: Tensor, variant: str = "nonsaturating") -> Tensor:
    if variant == "nonsaturating":
        return (-fake_logits).softplus().mean()
    if variant == "minimax":
        # log(1 - s(x)) = -softplus(x), minimised by the generator
        return -(fake_logits.softplus().mean())
    raise ValueError(f"gan_loss must be one of {GAN_LOSSES}, got {variant!r}")


def identity_loss(reconstructed: Tensor, photo: Tensor) -> Tensor:
    if reconstructed.shape != photo.shape:
        raise ValueError(f"identity loss shape mismatch: {reconstructed.shape} vs {photo.shape}")
    return (reconstructed - photo).abs().mean()


# ---------------------------------------------------------------- proxy losses
def proxy_logits(embedding: Tensor, bank: ProxyBank) -> Tensor:
    return (embedding @ bank.proxies.T) * (1.0 / bank.temperature)


def normsoftmax_loss(embedding: Tensor, labels, bank: ProxyBank) -> Tensor:
    """Softmax cross-entropy over scaled embedding-proxy similarities, batch-meaned.

    ``embedding`` is (B, dim) or a single (dim,) vector; ``labels`` are class ids.
    """
    if embedding.ndim == 1:
        embedding = embedding.reshape(1, -1)
        labels = [labels] if np.ndim(labels) == 0 else labels
    rows = bank.rows(np.atleast_1d(labels))
    if len(rows) != embedding.shape[0]:
        raise ValueError(f"{embedding.shape[0]} embeddings but {len(rows)} labels")
    logits = proxy_logits(embedding, bank)
    target = logits[np.arange(len(rows)), rows]
    return (logits.logsumexp(axis=1) - target).mean()


def chainer_loss(synth_embedding: Tensor, labels, bank: ProxyBank) -> Tensor:
    """NormSoftmax on embeddings of generated images, which carry their sketch's label."""
    return normsoftmax_loss(synth_embedding, labels, bank)


def normsoftmax_terms(sketch_emb: Tensor | None, synth_emb: Tensor | None, photo_emb: Tensor | None,
                      labels, bank: ProxyBank, photo_labels=None) -> dict[str, Tensor]:
    """The three retrieval terms; a ``None`` embedding drops its term."""
    photo_labels = labels if photo_labels is None else photo_labels
    terms = {}
    if synth_emb is not None:
        terms["chainer"] = chainer_loss(synth_emb, labels, bank)
    if sketch_emb is not None:
        terms["norm_sketch"] = normsoftmax_loss(sketch_emb, labels, bank)
    if photo_emb is not None:
        terms["norm_photo"] = normsoftmax_loss(photo_emb, photo_labels, bank)
    return terms


def combined_normsoftmax(sketch_emb, synth_emb, photo_emb, labels, bank: ProxyBank, photo_labels=None) -> Tensor:
    terms = list(normsoftmax_terms(sketch_emb, synth_emb, photo_emb, labels, bank, photo_labels).values())
    if not terms:
        raise ValueError("combined_normsoftmax needs at least one embedding")
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def total_objective(adv: Tensor | float | None, combined_norm: Tensor | float | None,
                    identity: Tensor | float | None, weights: LossWeights) -> Tensor:
    """adv + lambda * norm + gamma * ide; ``None`` components contribute nothing."""
    total = Tensor(np.zeros((), dtype=np.float32))
    if adv is not None:
        total = total + adv
    if combined_norm is not None:
        total = total + combined_norm * weights.lam
    if identity is not None:
        total = total + identity * weights.gamma
    return total


# --------------------------------------------------------------------- triplet
def _sq_dist(a: Tensor, b: Tensor) -> Tensor:
    # pairwise squared Euclidean distances, (n, m)
    aa = (a * a).sum(axis=1, keepdims=True)
    bb = (b * b).sum(axis=1, keepdims=True).T
    return aa + bb - (a @ b.T) * 2.0


def triplet_loss(anchor: Tensor, positive: Tensor, negative: Tensor, margin: float = 0.2,
                 labels=None, negative_labels=None) -> Tensor:
    """Margin hinge on squared Euclidean distances, batch-meaned.

    Without labels, rows are explicit (anchor, positive, negative) triplets.
    With ``labels`` (anchor classes) and ``negative_labels``, every row of
    ``negative`` is a candidate and each anchor uses its hardest candidate of a
    different class; anchors with no such candidate are skipped.
    """
    d_pos = ((anchor - positive) ** 2).sum(axis=1)
    if labels is None:
        d_neg = ((anchor - negative) ** 2).sum(axis=1)
        return (d_pos - d_neg + margin).relu().mean()
    labels = np.asarray(labels)
    negative_labels = labels if negative_labels is None else np.asarray(negative_labels)
    valid = labels[:, None] != negative_labels[None, :]
    keep = valid.any(axis=1)
    if not keep.any():
        raise ValueError("triplet mining found no negatives with a different label")
    dist = _sq_dist(anchor, negative)
    # invalid candidates pushed to +large so they are never the minimum
    big = np.where(valid, 0.0, 1e9).astype(dist.dtype)
    d_neg = -((-(dist + big)).max(axis=1))
    hinge = (d_pos - d_neg + margin).relu()
    idx = np.nonzero(keep)[0]
    return hinge[idx].mean()
