"""Synthetic phoneme corpora with controllable fake-speech defects."""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from phonograph.phoneme import BONAFIDE, FAKE, FrameSequence
from phonograph.tensor import io as tio

DEFECTS = ("hard_transitions", "duration_shift", "prototype_drift", "shuffled_transitions")
SPLITS = ("train", "val", "test")
MANIFEST_NAME = "manifest.tsv"
MANIFEST_HEADER = "id\tpath\tlabel\tsplit\tphonemes\tframe_labels"


@dataclass
class SynthConfig:
    n_phonemes: int = 16
    feat_dim: int = 8
    min_phones: int = 25
    max_phones: int = 45
    min_duration: int = 8
    max_duration: int = 24
    duration_jitter: float = 1.5
    transition_width: int = 6
    noise: float = 0.3
    speaker_spread: float = 0.3
    prototype_scale: float = 1.0
    drift_scale: float = 6.0
    defects: tuple = DEFECTS
    intensity: float = 0.7
    n_bonafide: int = 100
    n_fake: int = 100
    split_ratios: tuple = (0.8, 0.1, 0.1)
    seed: int = 7

    def __post_init__(self):
        self.defects = tuple(self.defects)
        self.split_ratios = tuple(float(r) for r in self.split_ratios)
        unknown = set(self.defects) - set(DEFECTS)
        if unknown:
            raise ValueError(f"unknown defects {sorted(unknown)}; valid: {', '.join(DEFECTS)}")
        if self.min_duration < 1 or self.max_duration < self.min_duration:
            raise ValueError("durations need 1 <= min_duration <= max_duration")
        if not 0.0 <= self.intensity <= 1.0:
            raise ValueError("intensity must lie in [0, 1]")
        if self.min_phones < 1 or self.max_phones < self.min_phones:
            raise ValueError("phone counts need 1 <= min_phones <= max_phones")
        if len(self.split_ratios) != 3 or abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ValueError("split_ratios must be three fractions summing to 1")

    def to_dict(self):
        d = asdict(self)
        d["defects"] = list(self.defects)
        d["split_ratios"] = list(self.split_ratios)
        return d


@dataclass
class Inventory:
    """Per-phoneme rendering parameters shared by every sample of a corpus."""

    prototypes: np.ndarray  # (P, D)
    mean_durations: np.ndarray  # (P,)


def make_inventory(cfg: SynthConfig) -> Inventory:
    rng = np.random.default_rng([cfg.seed, 0xC0FFEE])
    protos = rng.normal(scale=cfg.prototype_scale, size=(cfg.n_phonemes, cfg.feat_dim))
    gaps = np.linalg.norm(protos[:, None] - protos[None], axis=-1) + np.eye(cfg.n_phonemes)
    if gaps.min() <= 1e-9:
        raise ValueError("phoneme prototypes are not pairwise distinct")
    means = rng.uniform(cfg.min_duration, cfg.max_duration, size=cfg.n_phonemes)
    return Inventory(protos, means)


@dataclass
class SynthSample:
    sequence: FrameSequence
    phonemes: list
    crossfade: np.ndarray  # per-frame weight of the neighbouring prototype
    clean: np.ndarray  # frames before noise


def sample_seed(master_seed: int, sample_id: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), zlib.crc32(sample_id.encode("utf-8"))])


def _phone_sequence(rng, cfg):
    n = int(rng.integers(cfg.min_phones, cfg.max_phones + 1))
    seq = [int(rng.integers(cfg.n_phonemes))]
    for _ in range(n - 1):
        nxt = int(rng.integers(cfg.n_phonemes - 1))
        seq.append(nxt + (nxt >= seq[-1]))  # no immediate repeats
    return seq


def synth_sample(cfg: SynthConfig, class_label: str, rng, inventory: Inventory | None = None, sample_id="") -> SynthSample:
    """Render one utterance as (frames, feat_dim) features with frame labels.

    Bonafide speech uses phoneme-typical durations and linear cross-fades
    between neighbouring prototypes. Fakes go through the same renderer with
    the configured defects scaled by ``cfg.intensity``.
    """
    if class_label not in (BONAFIDE, FAKE):
        raise ValueError(f"class label must be {BONAFIDE!r} or {FAKE!r}")
    inv = inventory or make_inventory(cfg)
    fake = class_label == FAKE
    s = cfg.intensity if fake else 0.0
    on = set(cfg.defects) if fake else set()

    phones = _phone_sequence(rng, cfg)
    speaker = rng.normal(scale=cfg.speaker_spread, size=cfg.feat_dim)
    tempo = rng.uniform(0.85, 1.15)

    durations = []
    for p in phones:
        d = inv.mean_durations[p] * tempo + rng.normal(scale=cfg.duration_jitter)
        u = rng.random()
        if "duration_shift" in on and u < s:
            d = rng.uniform(cfg.min_duration, cfg.max_duration)
        durations.append(int(np.clip(round(d), cfg.min_duration, cfg.max_duration)))

    total = int(np.sum(durations))
    labels = np.repeat(np.array(phones, dtype=np.int64), durations)
    base = inv.prototypes[labels] + speaker
    clean = base.copy()
    crossfade = np.zeros(total)

    drift = "prototype_drift" in on and s > 0
    starts = np.concatenate([[0], np.cumsum(durations)[:-1]])
    for start, d in zip(starts, durations):
        direction = rng.normal(size=cfg.feat_dim)
        direction /= np.linalg.norm(direction)
        if drift:
            # the segment starts on its prototype and wanders off, so its mean moves too
            ramp = np.arange(d) / max(d - 1, 1)
            clean[start: start + d] += s * cfg.drift_scale * ramp[:, None] * direction

    width = cfg.transition_width * ((1.0 - s) if "hard_transitions" in on else 1.0)
    half = width / 2.0
    for k in range(1, len(phones)):
        b = int(starts[k])
        left = inv.prototypes[phones[k - 1]] + speaker
        right = inv.prototypes[phones[k]] + speaker
        lo = max(int(np.floor(b - half)), int(starts[k - 1]) + 1)
        hi = min(int(np.ceil(b + half)), b + durations[k] - 1)
        window = np.arange(lo, hi)
        if width > 0 and window.size:
            # weight of the right prototype rises linearly across the boundary
            lam = np.clip((window + 0.5 - (b - half)) / width, 0.0, 1.0)
            mix = (1.0 - lam)[:, None] * left + lam[:, None] * right
            clean[window] += mix - base[window]
            crossfade[window] = np.where(window < b, lam, 1.0 - lam)
        u = rng.random()
        if "shuffled_transitions" in on and u < s and window.size > 1:
            clean[window] = clean[rng.permutation(window)]

    features = clean + rng.normal(scale=cfg.noise, size=clean.shape)
    seq = FrameSequence(features, labels, sample_id=sample_id, class_label=class_label, phonemes=list(phones))
    return SynthSample(seq, list(phones), crossfade, clean)


def clip_or_pad(seq: FrameSequence, length: int, mode: str = "eval", rng=None) -> FrameSequence:
    """Fixed-length window: random (train) or centred (eval); short inputs repeat cyclically."""
    if length < 1:
        raise ValueError("target length must be >= 1")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    T = seq.n_frames
    if T >= length:
        if mode == "train" and T > length:
            rng = rng if rng is not None else np.random.default_rng()
            offset = int(rng.integers(0, T - length + 1))
        else:
            offset = (T - length) // 2
        idx = np.arange(offset, offset + length)
    else:
        idx = np.arange(length) % T
    labels = None if seq.labels is None else seq.labels[idx]
    return FrameSequence(seq.features[idx], labels, seq.sample_id, seq.class_label, list(seq.phonemes))


def largest_remainder(total: int, ratios) -> list:
    """Integer sizes proportional to ``ratios`` that sum exactly to ``total``."""
    raw = [total * r for r in ratios]
    sizes = [int(np.floor(x)) for x in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[: total - sum(sizes)]:
        sizes[i] += 1
    return sizes


# --- manifests --------------------------------------------------------------------


@dataclass
class ManifestRecord:
    sample_id: str
    path: str
    label: str
    split: str
    phonemes: list = field(default_factory=list)
    frame_labels: list = field(default_factory=list)

    def to_line(self):
        if "\t" in self.path or "\n" in self.path:
            raise ValueError(f"paths may not contain tabs or newlines: {self.path!r}")
        return "\t".join(
            [
                self.sample_id,
                self.path,
                self.label,
                self.split,
                " ".join(map(str, self.phonemes)),
                " ".join(map(str, self.frame_labels)),
            ]
        )

    @classmethod
    def from_line(cls, line):
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 6:
            raise ValueError(f"manifest line has {len(parts)} fields, expected 6")
        sid, path, label, split, phon, frames = parts
        return cls(sid, path, label, split, [int(v) for v in phon.split()], [int(v) for v in frames.split()])


class Manifest:
    def __init__(self, records, root="."):
        self.records = list(records)
        self.root = Path(root)
        ids = [r.sample_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError("manifest sample ids are not unique")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def split(self, name):
        return [r for r in self.records if r.split == name]

    def resolve(self, record) -> Path:
        p = Path(record.path)
        return p if p.is_absolute() else self.root / p

    def load(self, record) -> FrameSequence:
        features = tio.load(self.resolve(record))
        labels = record.frame_labels or None
        return FrameSequence(features, labels, record.sample_id, record.label, list(record.phonemes))

    def write(self, path):
        lines = [MANIFEST_HEADER] + [r.to_line() for r in self.records]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path):
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(path)
        lines = path.read_text(encoding="utf-8").splitlines()
        body = [ln for ln in lines if ln and ln != MANIFEST_HEADER]
        return cls([ManifestRecord.from_line(ln) for ln in body], root=path.parent)


def build_corpus(cfg: SynthConfig, out_dir) -> Manifest:
    """Render every sample, write PTNS1 features and ``manifest.tsv``.

    Splits are stratified by class with largest-remainder rounding.
    """
    if cfg.n_bonafide + cfg.n_fake == 0:
        raise ValueError("empty corpus")
    out = Path(out_dir)
    feat_dir = out / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    inv = make_inventory(cfg)
    split_rng = np.random.default_rng([cfg.seed, 0x5EED])
    records = []
    for label, prefix, count in ((BONAFIDE, "bona", cfg.n_bonafide), (FAKE, "fake", cfg.n_fake)):
        sizes = largest_remainder(count, cfg.split_ratios)
        assignment = np.repeat(np.arange(3), sizes)[split_rng.permutation(count)]
        for i in range(count):
            sid = f"{prefix}_{i:05d}"
            sample = synth_sample(cfg, label, np.random.default_rng(sample_seed(cfg.seed, sid)), inv, sid)
            rel = f"features/{sid}.ptns"
            tio.save(out / rel, sample.sequence.features)
            records.append(
                ManifestRecord(sid, rel, label, SPLITS[assignment[i]], sample.phonemes, sample.sequence.labels.tolist())
            )
    manifest = Manifest(records, root=out)
    manifest.write(out / MANIFEST_NAME)
    (out / "synth_config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return manifest
