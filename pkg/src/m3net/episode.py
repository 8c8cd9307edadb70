"""Videos, datasets, N-way K-shot episodes and the synthetic fine-grained bank.

Synthetic classes share one pool of subaction prototypes and one background
vector; they differ only in the order and duration of their subactions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DataError,
    InsufficientClasses,
    InsufficientClipsPerClass,
    ShapeMismatch,
    TooFewDistinctOrderings,
    UnknownClass,
    UnknownClip,
)

SPLITS = ("base", "novel-val", "novel-test")


@dataclass(frozen=True, eq=False)
class VideoClip:
    """Frame feature maps of one video, shape ``(t, h, w, c)``."""

    frames: np.ndarray
    class_id: int
    clip_id: int

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 4 or min(frames.shape) < 1:
            raise ShapeMismatch(f"clip {self.clip_id}: frames must be (t, h, w, c) "
                                f"with every axis >= 1, got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise DataError(f"clip {self.clip_id}: non-finite frame values")
        object.__setattr__(self, "frames", frames)

    @property
    def shape(self) -> tuple:
        return self.frames.shape


@dataclass(eq=False)
class Dataset:
    clips: list
    split: str = "base"
    class_index: dict = field(init=False)

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DataError(f"unknown split {self.split!r}; expected one of {SPLITS}")
        shapes = {c.shape for c in self.clips}
        if len(shapes) > 1:
            raise ShapeMismatch(f"clips in one dataset must share a shape, got {sorted(shapes)}")
        index: dict = {}
        for i, clip in enumerate(self.clips):
            index.setdefault(int(clip.class_id), []).append(i)
        self.class_index = index

    @property
    def classes(self) -> list:
        return sorted(self.class_index)

    @property
    def clip_shape(self):
        return self.clips[0].shape if self.clips else None

    def by_clip_id(self, clip_id: int) -> VideoClip:
        for clip in self.clips:
            if clip.clip_id == clip_id:
                return clip
        raise UnknownClip(f"no clip with id {clip_id}")


@dataclass(frozen=True)
class EpisodeSpec:
    n_way: int = 5
    k_shot: int = 1
    n_query: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_way < 2 or self.k_shot < 1 or self.n_query < 1:
            raise DataError(f"invalid episode spec {self}: need N >= 2, K >= 1, Q >= 1")


@dataclass(eq=False)
class Episode:
    """Support clips grouped by class (canonical ascending class order) plus queries."""

    support: list
    query: list
    class_ids: list
    query_labels: np.ndarray
    k_shot: int

    @property
    def n_way(self) -> int:
        return len(self.class_ids)

    @property
    def support_labels(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_way), self.k_shot)


def sample_episode(dataset: Dataset, spec: EpisodeSpec, rng: np.random.Generator) -> Episode:
    classes = dataset.classes
    if len(classes) < spec.n_way:
        raise InsufficientClasses(
            f"split {dataset.split!r} has {len(classes)} classes, episode needs {spec.n_way}")
    need = spec.k_shot + spec.n_query
    eligible = [c for c in classes if len(dataset.class_index[c]) >= need]
    if len(eligible) < spec.n_way:
        raise InsufficientClipsPerClass(
            f"only {len(eligible)} classes in split {dataset.split!r} have >= {need} clips")
    chosen = sorted(int(c) for c in rng.choice(eligible, size=spec.n_way, replace=False))
    support, query, labels = [], [], []
    for label, cls in enumerate(chosen):
        members = dataset.class_index[cls]
        picks = rng.choice(len(members), size=need, replace=False)
        clips = [dataset.clips[members[p]] for p in picks]
        support.extend(clips[:spec.k_shot])
        query.extend(clips[spec.k_shot:])
        labels.extend([label] * spec.n_query)
    return Episode(support=support, query=query, class_ids=chosen,
                   query_labels=np.asarray(labels, dtype=np.int64), k_shot=spec.k_shot)


@dataclass(frozen=True, eq=False)
class SyntheticBank:
    subaction_protos: np.ndarray
    background: np.ndarray
    class_defs: tuple
    noise_sigma: float
    warp_strength: float

    @property
    def n_classes(self) -> int:
        return len(self.class_defs)

    @property
    def m(self) -> int:
        return len(self.class_defs[0])

    @property
    def channels(self) -> int:
        return self.subaction_protos.shape[1]


def generate_synthetic_bank(n_classes: int, n_subactions: int, m: int, c: int,
                            noise_sigma: float, warp_strength: float,
                            rng: np.random.Generator) -> SyntheticBank:
    if n_subactions < 2 or m < 2 or c < 4:
        raise DataError("synthetic bank needs n_subactions >= 2, m >= 2 and c >= 4")
    if noise_sigma < 0 or not 0.0 <= warp_strength <= 1.0:
        raise DataError("noise_sigma must be >= 0 and warp_strength in [0, 1]")
    total = n_subactions ** m
    if total < n_classes:
        raise TooFewDistinctOrderings(
            f"{n_subactions}^{m} = {total} orderings cannot cover {n_classes} classes")

    protos = rng.standard_normal((n_subactions, c))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    background = rng.standard_normal(c) / np.sqrt(c)
    # distinct codes of the product space, decoded base-n_subactions
    codes = rng.choice(total, size=n_classes, replace=False)
    class_defs = tuple(
        tuple(int(i) for i in np.unravel_index(int(code), (n_subactions,) * m)) for code in codes)
    return SyntheticBank(protos, background, class_defs, float(noise_sigma), float(warp_strength))


def segment_lengths(m: int, t: int, warp_strength: float, rng: np.random.Generator) -> np.ndarray:
    """Frame counts per subaction: positive, summing to ``t``.

    Weights come from a symmetric Dirichlet with concentration ``1 / warp_strength``;
    ``warp_strength == 0`` gives the uniform split.
    """
    if t < m:
        raise DataError(f"need at least {m} frames for {m} subactions, got t={t}")
    if warp_strength == 0:
        weights = np.full(m, 1.0 / m)
    else:
        # very small strengths would overflow the concentration; cap it (the
        # result is indistinguishable from uniform at that point anyway)
        weights = rng.dirichlet(np.full(m, min(1.0 / warp_strength, 1e6)))
    spare = t - m
    raw = weights * spare
    counts = np.floor(raw).astype(np.int64)
    # largest remainder, ties to the earlier segment
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[: spare - counts.sum()]] += 1
    return counts + 1


def render_synthetic_video(bank: SyntheticBank, class_id: int, t: int, h: int, w: int,
                           rng: np.random.Generator, clip_id: int = 0) -> VideoClip:
    if not 0 <= class_id < bank.n_classes:
        raise UnknownClass(f"class {class_id} not in bank of {bank.n_classes} classes")
    steps = bank.class_defs[class_id]
    lengths = segment_lengths(len(steps), t, bank.warp_strength, rng)
    schedule = np.repeat(np.asarray(steps), lengths)

    bh, bw = max(1, h // 2), max(1, w // 2)
    top = int(rng.integers(0, h - bh + 1))
    left = int(rng.integers(0, w - bw + 1))

    frames = np.broadcast_to(bank.background, (t, h, w, bank.channels)).copy()
    frames[:, top:top + bh, left:left + bw, :] += bank.subaction_protos[schedule][:, None, None, :]
    if bank.noise_sigma > 0:
        frames += bank.noise_sigma * rng.standard_normal(frames.shape)
    return VideoClip(frames.astype(np.float32), int(class_id), int(clip_id))


def build_synthetic_splits(bank: SyntheticBank, split_sizes: tuple, clips_per_class: int,
                           t: int, h: int, w: int, rng: np.random.Generator) -> dict:
    """Render a fixed dataset per split; class ids are assigned to splits in order."""
    if sum(split_sizes) > bank.n_classes:
        raise InsufficientClasses(
            f"splits need {sum(split_sizes)} classes, bank has {bank.n_classes}")
    out = {}
    start, clip_id = 0, 0
    for split, size in zip(SPLITS, split_sizes):
        clips = []
        for cls in range(start, start + size):
            for _ in range(clips_per_class):
                clips.append(render_synthetic_video(bank, cls, t, h, w, rng, clip_id))
                clip_id += 1
        out[split] = Dataset(clips, split)
        start += size
    return out
