"""Phoneme inventories, run-length segmentation, adaptive pooling and RPSA."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from phonograph.tensor import Tensor, as_tensor

BONAFIDE = "bonafide"
FAKE = "fake"


@dataclass(frozen=True)
class PhonemeInventory:
    size: int

    @property
    def blank_id(self) -> int:
        return self.size

    @property
    def n_classes(self) -> int:
        return self.size + 1

    def validate(self, labels):
        labels = np.asarray(labels)
        if labels.size and (labels.min() < 0 or labels.max() > self.size):
            raise ValueError(f"frame labels must lie in [0, {self.size}]")


@dataclass
class FrameSequence:
    features: np.ndarray
    labels: np.ndarray | None = None
    sample_id: str = ""
    class_label: str = BONAFIDE
    phonemes: list = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError(f"features must be T x C with T >= 1, got {self.features.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.features.shape[0],):
                raise ValueError(f"{self.features.shape[0]} frames but {self.labels.shape[0]} labels")

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]


class Segment(NamedTuple):
    phoneme: int
    start: int
    count: int


@dataclass(frozen=True)
class PhonemeSegmentation:
    segments: tuple

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def __getitem__(self, k):
        return self.segments[k]

    @property
    def n_frames(self) -> int:
        last = self.segments[-1]
        return last.start + last.count

    @property
    def ids(self) -> np.ndarray:
        return np.array([s.phoneme for s in self.segments], dtype=np.int64)

    @property
    def starts(self) -> np.ndarray:
        return np.array([s.start for s in self.segments], dtype=np.int64)

    @property
    def counts(self) -> np.ndarray:
        return np.array([s.count for s in self.segments], dtype=np.int64)

    def frame_to_segment(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.segments)), self.counts)


def segment(labels) -> PhonemeSegmentation:
    """Maximal runs of equal labels, in order."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size == 0:
        raise ValueError("cannot segment an empty label sequence")
    starts = np.concatenate([[0], np.flatnonzero(labels[1:] != labels[:-1]) + 1])
    counts = np.diff(np.concatenate([starts, [labels.size]]))
    return PhonemeSegmentation(
        tuple(Segment(int(labels[s]), int(s), int(c)) for s, c in zip(starts, counts))
    )


def adaptive_phoneme_pool(features, seg: PhonemeSegmentation) -> Tensor:
    """Average the frames of each segment; one output row per segment."""
    x = as_tensor(features)
    if x.ndim != 2 or x.shape[0] != seg.n_frames:
        raise ValueError(f"segmentation covers {seg.n_frames} frames, features have shape {x.shape}")
    starts = seg.starts
    counts = seg.counts.astype(np.float64)
    owner = seg.frame_to_segment()
    pooled = np.add.reduceat(x.data, starts, axis=0) / counts[:, None]

    def back(g):
        return ((g / counts[:, None])[owner],)

    return Tensor.from_op(pooled, (x,), back, "phoneme_pool")


def rpsa(batch, p, rng_seed):
    """Random phoneme substitution augmentation.

    Every segment of every sample is picked with probability ``p``; a picked
    segment is replaced by the frame block of a uniformly chosen segment with
    the same phoneme from another sample of the batch. Segments without any
    donor are left alone. All outputs are labelled fake.
    """
    batch = list(batch)
    if len(batch) < 2:
        raise ValueError("rpsa needs a batch of at least two samples")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"substitution probability must lie in [0, 1], got {p}")
    if any(s.labels is None for s in batch):
        raise ValueError("rpsa needs frame labels on every sample")

    segs = [segment(s.labels) for s in batch]
    donors = {}
    for j, sg in enumerate(segs):
        for k, piece in enumerate(sg):
            donors.setdefault(piece.phoneme, []).append((j, k))

    rng = np.random.default_rng(rng_seed)
    out = []
    for i, (sample, sg) in enumerate(zip(batch, segs)):
        blocks, labels = [], []
        for piece in sg:
            src, start, count = sample, piece.start, piece.count
            if rng.random() < p:
                pool = [d for d in donors[piece.phoneme] if d[0] != i]
                if pool:
                    j, k = pool[int(rng.integers(len(pool)))]
                    src, start, count = batch[j], segs[j][k].start, segs[j][k].count
            blocks.append(src.features[start: start + count])
            labels.append(np.full(count, piece.phoneme, dtype=np.int64))
        out.append(
            replace(
                sample,
                features=np.concatenate(blocks, axis=0),
                labels=np.concatenate(labels),
                class_label=FAKE,
            )
        )
    return out
