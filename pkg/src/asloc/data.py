"""Dataset model, manifest/feature I/O, temporal resampling, synthetic corpus.

File formats
------------
Feature file: raw little-endian float32, row-major T x d, no header. The shape
is carried by the manifest.

Manifest: line-oriented text, UTF-8, '#' starts a comment line.

    C d
    <class name 0>
    ...
    <class name C-1>
    <video id> <T> <labels> <feature path> [<gt>]

``labels`` is a comma-separated list of class indices (e.g. ``0,3``).
``gt`` is either ``-`` (no ground truth) or a comma-separated list of
``class:start:end`` triples with inclusive instance indices. Feature paths are
relative to the manifest's directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, LabelError, MissingFileError
from .numerics import make_rng


@dataclass
class VideoRecord:
    id: str
    features: np.ndarray  # (T, d) float64
    labels: tuple[int, ...]
    gt_segments: list[tuple[int, int, int]] | None = None  # (class, start, end) inclusive

    @property
    def num_instances(self) -> int:
        return self.features.shape[0]

    def gt_mask(self) -> np.ndarray:
        """Boolean mask over instances that contain any action."""
        mask = np.zeros(self.num_instances, dtype=bool)
        for _, start, end in self.gt_segments or []:
            mask[start : end + 1] = True
        return mask


@dataclass
class Dataset:
    records: list[VideoRecord]
    num_classes: int
    feature_dim: int
    class_names: list[str]

    def by_id(self, video_id: str) -> VideoRecord:
        for rec in self.records:
            if rec.id == video_id:
                return rec
        raise LabelError(f"unknown video id {video_id!r}")


def _validate_record(rec: VideoRecord, num_classes: int) -> None:
    for c in rec.labels:
        if not 0 <= c < num_classes:
            raise LabelError(f"video {rec.id}: label {c} out of range [0, {num_classes})")
    t = rec.num_instances
    for c, start, end in rec.gt_segments or []:
        if not 0 <= start <= end < t:
            raise LabelError(f"video {rec.id}: gt segment ({start}, {end}) outside [0, {t})")
        if c not in rec.labels:
            raise LabelError(f"video {rec.id}: gt class {c} not in video labels {rec.labels}")


def load_features(path: str, num_instances: int, feature_dim: int) -> np.ndarray:
    if not os.path.isfile(path):
        raise MissingFileError(f"feature file not found: {path}")
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != num_instances * feature_dim:
        raise DimensionError(
            f"{path}: {raw.size} floats, expected {num_instances}x{feature_dim}"
        )
    return raw.reshape(num_instances, feature_dim).astype(np.float64)


def save_features(path: str, features: np.ndarray) -> None:
    np.asarray(features, dtype="<f4").tofile(path)


def _parse_gt(text: str, video_id: str) -> list[tuple[int, int, int]] | None:
    if text == "-":
        return None
    segments = []
    for part in text.split(","):
        fields = part.split(":")
        if len(fields) != 3:
            raise LabelError(f"video {video_id}: malformed gt entry {part!r}")
        segments.append((int(fields[0]), int(fields[1]), int(fields[2])))
    return segments


def load_dataset(manifest_path: str) -> Dataset:
    """Load a manifest and all referenced feature files.

    Any malformed input raises a typed DataError subclass; a partially
    populated Dataset is never returned.
    """
    if not os.path.isfile(manifest_path):
        raise MissingFileError(f"manifest not found: {manifest_path}")
    base_dir = os.path.dirname(os.path.abspath(manifest_path))
    with open(manifest_path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise DimensionError(f"{manifest_path}: empty manifest")
    header = lines[0].split()
    if len(header) != 2:
        raise DimensionError(f"{manifest_path}: header must be 'C d', got {lines[0]!r}")
    num_classes, feature_dim = int(header[0]), int(header[1])
    if len(lines) < 1 + num_classes:
        raise DimensionError(f"{manifest_path}: expected {num_classes} class-name lines")
    class_names = lines[1 : 1 + num_classes]

    records = []
    for line in lines[1 + num_classes :]:
        fields = line.split()
        if len(fields) not in (4, 5):
            raise DimensionError(f"{manifest_path}: malformed video line {line!r}")
        video_id, t_str, labels_str, path = fields[:4]
        labels = tuple(sorted(int(x) for x in labels_str.split(",")))
        gt = _parse_gt(fields[4], video_id) if len(fields) == 5 else None
        features = load_features(os.path.join(base_dir, path), int(t_str), feature_dim)
        rec = VideoRecord(id=video_id, features=features, labels=labels, gt_segments=gt)
        _validate_record(rec, num_classes)
        records.append(rec)
    return Dataset(records, num_classes, feature_dim, class_names)


def save_dataset(dataset: Dataset, manifest_path: str, features_subdir: str = "features") -> None:
    """Write the manifest plus one raw float32 feature file per record."""
    base_dir = os.path.dirname(os.path.abspath(manifest_path))
    feat_dir = os.path.join(base_dir, features_subdir)
    os.makedirs(feat_dir, exist_ok=True)
    lines = [f"{dataset.num_classes} {dataset.feature_dim}"]
    lines.extend(dataset.class_names)
    for rec in dataset.records:
        rel = os.path.join(features_subdir, f"{rec.id}.f32")
        save_features(os.path.join(base_dir, rel), rec.features)
        labels = ",".join(str(c) for c in rec.labels)
        if rec.gt_segments is None:
            gt = "-"
        else:
            gt = ",".join(f"{c}:{s}:{e}" for c, s, e in rec.gt_segments)
        lines.append(f"{rec.id} {rec.num_instances} {labels} {rel} {gt}")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def resample_linear(features: np.ndarray, target_len: int) -> np.ndarray:
    """Linearly interpolate rows to ``target_len`` instances.

    Endpoints are preserved exactly; target_len == 1 returns row 0.
    """
    features = np.asarray(features, dtype=np.float64)
    source_len = features.shape[0]
    if target_len == 1 or source_len == 1:
        return np.repeat(features[:1], target_len, axis=0)
    pos = np.linspace(0.0, source_len - 1, target_len)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, source_len - 1)
    w = (pos - lo)[:, None]
    return (1.0 - w) * features[lo] + w * features[hi]


@dataclass
class SyntheticConfig:
    """Corpus with planted action / context / background structure.

    Per class there is an action prototype and a context prototype. Action
    prototypes combine a shared class-agnostic signature with a class-evidence
    direction; the matching context prototype carries an attenuated copy of
    the same class direction but no action signature, and sits directly
    adjacent to the action block in each video. Class evidence alone therefore
    bleeds onto context (and misses low-evidence action tails), while a
    class-agnostic actionness model can separate action from context — the
    regime that makes selection learning pay off. All structured variation
    (per-video evidence amplitude, hard action tails, per-video context drift)
    scales with noise_sigma and vanishes at zero noise.
    """

    num_classes: int = 5
    feature_dim: int = 20
    num_instances: int = 64
    videos_train: int = 200
    videos_test: int = 100
    noise_sigma: float = 0.3
    action_fraction: float = 0.2
    context_fraction: float = 0.25
    max_classes_per_video: int = 2
    seed: int = 0

    def validate(self) -> None:
        if min(self.num_classes, self.feature_dim, self.num_instances) <= 0:
            raise ConfigError("num_classes, feature_dim and num_instances must be positive")
        if self.videos_train < 0 or self.videos_test < 0:
            raise ConfigError("video counts must be non-negative")
        if not (0.0 < self.action_fraction < 1.0 and 0.0 < self.context_fraction < 1.0):
            raise ConfigError("fractions must be in (0, 1)")
        if self.action_fraction + self.context_fraction >= 1.0:
            raise ConfigError("action_fraction + context_fraction must be < 1")
        if not 1 <= self.max_classes_per_video <= self.num_classes:
            raise ConfigError("max_classes_per_video out of range")
        n_act = round(self.action_fraction * self.num_instances)
        if n_act < self.max_classes_per_video:
            raise ConfigError("not enough action instances for max_classes_per_video")


@dataclass
class _Prototypes:
    """Feature-space components the generator composes instances from."""

    action_common: np.ndarray  # shared class-agnostic action signature
    class_dirs: np.ndarray  # (C, d) class-evidence directions
    context_common: np.ndarray  # shared context center, no action signature
    background: np.ndarray
    scale: float

    def action(self, c: int) -> np.ndarray:
        return self.action_common + self.class_dirs[c]

    def context(self, c: int) -> np.ndarray:
        return self.context_common + CONTEXT_EVIDENCE * self.class_dirs[c]


# Context carries this attenuated copy of the class-evidence direction, so a
# classifier generalizes its class score onto context involuntarily, while the
# shared action signature (absent from context) still lets a class-agnostic
# model separate the two — the planted failure mode selection learning fixes.
CONTEXT_EVIDENCE = 0.7
# Tail fraction of each action block whose class evidence is attenuated:
# action instances that are hard to predict from class evidence alone.
HARD_TAIL_FRACTION = 0.25
# The three structured noise mechanisms below all scale with the relative
# noise level rho = noise_sigma / scale, so at noise_sigma = 0 every instance
# equals its prototype exactly. At rho = 1 the per-video class-evidence
# amplitude spans (1/3, 5/3), the hard-tail evidence bottoms out at
# HARD_EVIDENCE_FLOOR, and the per-video context drift reaches full strength.
AMPLITUDE_JITTER = 2.0 / 3.0
HARD_EVIDENCE_FLOOR = 0.1
HARD_ATTENUATION = 1.5
CONTEXT_DRIFT = 10.0 / 3.0


def _relative_noise(cfg: SyntheticConfig) -> float:
    return min(1.0, cfg.noise_sigma / max(cfg.noise_sigma, 0.25))


def _draw_prototypes(cfg: SyntheticConfig, rng: np.random.Generator) -> _Prototypes:
    """Prototype components with nominal pairwise distance >= 4 sigma."""
    # Prototype radii sit close to the separation floor so per-instance noise
    # matters: under a random initial projection the instance ranking is then
    # noise-dominated rather than a fixed function of the prototype, which
    # keeps early top-k selections inconsistent across videos instead of
    # immediately learnable.
    scale = max(cfg.noise_sigma, 0.25)
    min_dist = 4.0 * cfg.noise_sigma
    d = cfg.feature_dim

    def unit() -> np.ndarray:
        v = rng.normal(0.0, 1.0, d)
        return v / np.linalg.norm(v)

    for _ in range(100):
        background = np.zeros(d)
        action_common = 4.0 * scale * unit()
        class_dirs = np.vstack([5.0 * scale * unit() for _ in range(cfg.num_classes)])
        context_common = 3.0 * scale * unit()
        protos = _Prototypes(action_common, class_dirs, context_common, background, scale)
        nominal = np.vstack(
            [background[None]]
            + [protos.context(c)[None] for c in range(cfg.num_classes)]
            + [protos.action(c)[None] for c in range(cfg.num_classes)]
        )
        dists = np.linalg.norm(nominal[:, None] - nominal[None, :], axis=-1)
        np.fill_diagonal(dists, np.inf)
        if dists.min() >= min_dist:
            return protos
    raise ConfigError("could not draw prototypes with the required separation")


def _split_counts(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def _make_video(cfg, rng, protos: _Prototypes, video_id):
    t = cfg.num_instances
    n_labels = int(rng.integers(1, cfg.max_classes_per_video + 1))
    labels = tuple(sorted(rng.choice(cfg.num_classes, size=n_labels, replace=False).tolist()))
    n_action = round(cfg.action_fraction * t)
    n_context = round(cfg.context_fraction * t)
    n_background = t - n_action - n_context
    if n_background < 0:
        raise ConfigError("fractions leave no room for background")
    rho = _relative_noise(cfg)
    # how strongly this video expresses class evidence (action and context)
    amplitude = 1.0 + rho * rng.uniform(-AMPLITUDE_JITTER, AMPLITUDE_JITTER)
    hard_evidence = max(HARD_EVIDENCE_FLOOR, 1.0 - HARD_ATTENUATION * rho)
    # context drifts from video to video: class-indicative but unreliable,
    # unlike the consistent action signature
    context_jitter = rng.normal(
        0.0,
        CONTEXT_DRIFT * cfg.noise_sigma / np.sqrt(cfg.feature_dim),
        (cfg.num_classes, cfg.feature_dim),
    )

    # Each class contributes one action block with its context block directly
    # adjacent (context precedes or follows the action at random), mirroring
    # how context frames surround real action instances. Thresholding raw
    # class scores therefore tends to merge action and context into one
    # poorly-localized proposal, which actionness gating can split.
    blocks = []  # list of (is_action, class, length) runs placed contiguously
    ctx_lengths = _split_counts(n_context, n_labels)
    for i, (c, length) in enumerate(zip(labels, _split_counts(n_action, n_labels))):
        pair = [(True, c, length)]
        if ctx_lengths[i] > 0:
            pair.insert(int(rng.integers(0, 2)), (False, c, ctx_lengths[i]))
        blocks.append(pair)
    order = rng.permutation(len(blocks))
    gaps = rng.multinomial(n_background, np.full(len(blocks) + 1, 1.0 / (len(blocks) + 1)))

    proto_rows = np.empty((t, cfg.feature_dim))
    gt_segments = []
    cursor = 0
    for i, block_idx in enumerate(order):
        gap = int(gaps[i])
        proto_rows[cursor : cursor + gap] = protos.background
        cursor += gap
        for is_action, c, length in blocks[block_idx]:
            if is_action:
                # the tail of each action block keeps the action signature but
                # has attenuated class evidence: action instances that class
                # scores alone miss
                n_hard = int(length * HARD_TAIL_FRACTION)
                evidence = np.full(length, amplitude)
                if n_hard:
                    evidence[length - n_hard :] = amplitude * hard_evidence
                proto_rows[cursor : cursor + length] = (
                    protos.action_common + evidence[:, None] * protos.class_dirs[c]
                )
                if length > 0:
                    gt_segments.append((c, cursor, cursor + length - 1))
            else:
                proto_rows[cursor : cursor + length] = (
                    protos.context_common
                    + amplitude * CONTEXT_EVIDENCE * protos.class_dirs[c]
                    + context_jitter[c]
                )
            cursor += length
    proto_rows[cursor:] = protos.background

    features = proto_rows + rng.normal(0.0, cfg.noise_sigma, (t, cfg.feature_dim))
    # round-trip through the on-disk float32 precision so save/load is exact
    features = features.astype(np.float32).astype(np.float64)
    gt_segments.sort(key=lambda seg: (seg[1], seg[0]))
    return VideoRecord(id=video_id, features=features, labels=labels, gt_segments=gt_segments)


def generate_synthetic(cfg: SyntheticConfig) -> tuple[Dataset, Dataset]:
    """Deterministic (train, test) corpus with known action segments."""
    cfg.validate()
    rng = make_rng(cfg.seed)
    protos = _draw_prototypes(cfg, rng)
    class_names = [f"class_{c}" for c in range(cfg.num_classes)]

    def build(prefix, count):
        records = [_make_video(cfg, rng, protos, f"{prefix}_{i:04d}") for i in range(count)]
        return Dataset(records, cfg.num_classes, cfg.feature_dim, class_names)

    return build("train", cfg.videos_train), build("test", cfg.videos_test)


def batch_iter(dataset: Dataset, batch_size: int, epoch: int, seed: int) -> list[list[VideoRecord]]:
    """Shuffled batches; the order is a pure function of (seed, epoch)."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    perm = make_rng(seed, epoch).permutation(len(dataset.records))
    shuffled = [dataset.records[i] for i in perm]
    return [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]
