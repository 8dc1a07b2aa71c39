"""Dataset representation, CSV ingestion, synthetic data generation,
label-noise injection, and the leave-one-subject-out split protocols.

Feature vectors are precomputed dense values (e.g. 310 band-power entropy
features per segment: 62 channels x 5 bands); raw signal processing is out
of scope. The on-disk format is a plain CSV with header
``f0..f{F-1},label,subject,session``; arbitrary label/subject/session values
are remapped to dense 0-based ids and the mapping is recorded.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DimensionError, ParseError, ValidationError

SINGLE_SESSION = "single-session"
CROSS_SESSION = "cross-session"
PROTOCOLS = (SINGLE_SESSION, CROSS_SESSION)


@dataclass(frozen=True)
class Sample:
    """One feature vector with its class, subject, and session ids."""

    features: np.ndarray
    class_label: int
    subject_id: int
    session_id: int


@dataclass
class Dataset:
    """Column-oriented store of samples; immutable after construction.

    n_classes/n_subjects/n_sessions are the dense id ranges M, N, S; id_maps
    records how original CSV values were remapped to dense ids.
    """

    features: np.ndarray  # (count, F) float
    labels: np.ndarray  # (count,) int in [0, M)
    subjects: np.ndarray  # (count,) int in [0, N)
    sessions: np.ndarray  # (count,) int in [0, S)
    n_classes: int
    n_subjects: int
    n_sessions: int
    class_names: list[str] | None = None
    id_maps: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        self.subjects = np.asarray(self.subjects, dtype=int)
        self.sessions = np.asarray(self.sessions, dtype=int)
        count = self.features.shape[0]
        if self.features.ndim != 2:
            raise DimensionError("features must be a (count, F) array")
        for name, arr in (("labels", self.labels), ("subjects", self.subjects), ("sessions", self.sessions)):
            if arr.shape != (count,):
                raise DimensionError(f"{name} must have one entry per row")
        if not np.all(np.isfinite(self.features)):
            raise ValidationError("non-finite feature values")
        for name, arr, bound in (
            ("label", self.labels, self.n_classes),
            ("subject", self.subjects, self.n_subjects),
            ("session", self.sessions, self.n_sessions),
        ):
            if count and (arr.min() < 0 or arr.max() >= bound):
                raise ValidationError(f"{name} ids outside [0, {bound})")
        if count and len(np.unique(self.subjects)) != self.n_subjects:
            raise ValidationError("every subject id in [0, N) must occur at least once")
        if self.class_names is not None and len(self.class_names) != self.n_classes:
            raise ValidationError("class_names length must equal n_classes")
        for arr in (self.features, self.labels, self.subjects, self.sessions):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def sample(self, i: int) -> Sample:
        return Sample(self.features[i], int(self.labels[i]), int(self.subjects[i]), int(self.sessions[i]))

    def samples(self):
        for i in range(len(self)):
            yield self.sample(i)

    def subject_rows(self, subject: int) -> np.ndarray:
        return np.flatnonzero(self.subjects == subject)


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for ingestion; defaults match the written format."""

    label: str = "label"
    subject: str = "subject"
    session: str = "session"
    feature_prefix: str = "f"
    feature_columns: tuple[str, ...] | None = None


def load_csv(path, schema: CsvSchema = CsvSchema()) -> Dataset:
    """Read a dataset from CSV; row order is preserved.

    Label/subject/session values may be arbitrary strings or numbers; they
    are densified (numeric-sorted when possible) and the mapping is recorded in
    `id_maps`.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for col in (schema.label, schema.subject, schema.session):
            if col not in header:
                raise ParseError(f"{path}: missing column {col!r}")
        if schema.feature_columns is not None:
            feat_cols = list(schema.feature_columns)
            missing = [c for c in feat_cols if c not in header]
            if missing:
                raise ParseError(f"{path}: missing feature columns {missing}")
        else:
            feat_cols = [
                h for h in header
                if h.startswith(schema.feature_prefix)
                and h[len(schema.feature_prefix):].isdigit()
            ]
            feat_cols.sort(key=lambda h: int(h[len(schema.feature_prefix):]))
            if not feat_cols:
                raise ParseError(f"{path}: no feature columns with prefix {schema.feature_prefix!r}")
        idx = {h: i for i, h in enumerate(header)}
        feat_idx = [idx[c] for c in feat_cols]
        n_feat = len(feat_cols)

        feats, raw_labels, raw_subjects, raw_sessions = [], [], [], []
        for rownum, row in _numbered_rows(reader):
            if len(row) != len(header):
                raise DimensionError(
                    f"{path}: row {rownum} has {len(row)} columns, expected {len(header)}"
                )
            try:
                vec = np.array([float(row[i]) for i in feat_idx])
            except ValueError as exc:
                raise ParseError(f"{path}: row {rownum}: {exc}") from None
            if not np.all(np.isfinite(vec)):
                raise ValidationError(f"{path}: row {rownum}: non-finite feature value")
            if vec.size != n_feat:
                raise DimensionError(f"{path}: row {rownum}: expected {n_feat} features")
            feats.append(vec)
            raw_labels.append(row[idx[schema.label]])
            raw_subjects.append(row[idx[schema.subject]])
            raw_sessions.append(row[idx[schema.session]])
    if not feats:
        raise ParseError(f"{path}: no data rows")

    labels, label_map = _densify(raw_labels)
    subjects, subject_map = _densify(raw_subjects)
    sessions, session_map = _densify(raw_sessions)
    return Dataset(
        features=np.vstack(feats),
        labels=labels,
        subjects=subjects,
        sessions=sessions,
        n_classes=len(label_map),
        n_subjects=len(subject_map),
        n_sessions=len(session_map),
        id_maps={"label": label_map, "subject": subject_map, "session": session_map},
    )


def _numbered_rows(reader):
    # data rows are 1-based after the header, matching what a user sees
    for i, row in enumerate(reader, start=2):
        yield i, row


def _densify(values):
    """Map arbitrary values to dense 0-based ints, numeric-sorted when possible."""
    uniq = list(dict.fromkeys(values))
    try:
        uniq.sort(key=float)
    except ValueError:
        uniq.sort()
    mapping = {v: i for i, v in enumerate(uniq)}
    return np.array([mapping[v] for v in values], dtype=int), mapping


def write_csv(ds: Dataset, path) -> None:
    """Write the standard format: f0..f{F-1},label,subject,session."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(ds.feature_dim)] + ["label", "subject", "session"])
        for i in range(len(ds)):
            writer.writerow(
                [repr(float(v)) for v in ds.features[i]]  # repr round-trips exactly
                + [int(ds.labels[i]), int(ds.subjects[i]), int(ds.sessions[i])]
            )


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic generator: sample = class component + subject offset + noise.

    Subject offsets are optionally planted in groups
    (offset = shift * (group centroid + within_group_scale * jitter)), giving
    downstream aggregation a known ground truth. Three optional confounds
    make cross-subject transfer non-trivial: a per-(group, class) shift of
    the class component, a per-(subject, class) twist drawn from a shared
    low-dimensional subspace, and group_permuted_classes, under which group
    g expresses class m with base pattern (m + g) mod M, so class semantics
    are only defined relative to a group and pooling groups blurs them.
    """

    n_subjects: int
    n_classes: int
    feature_dim: int
    per_class_count: int
    domain_shift_scale: float = 1.0
    class_separation: float = 1.0
    seed: int = 0
    noise_scale: float = 1.0
    n_domain_groups: int = 0  # 0 = independent subject offsets
    within_group_scale: float = 0.1
    group_class_scale: float = 0.0
    subject_class_scale: float = 0.0
    twist_subspace_dim: int = 4
    group_permuted_classes: bool = False
    n_sessions: int = 1
    session_shift_scale: float = 0.0

    def __post_init__(self):
        if min(self.n_subjects, self.n_classes, self.per_class_count, self.n_sessions) <= 0:
            raise ConfigError("all synthetic counts must be positive")
        if self.feature_dim < 2:
            raise ConfigError("feature_dim must be >= 2")
        if self.n_domain_groups < 0 or self.n_domain_groups > self.n_subjects:
            raise ConfigError("n_domain_groups must be in [0, n_subjects]")


def subject_group(n: int, cfg: SynthConfig) -> int:
    """Planted group of subject n: contiguous blocks of subjects."""
    if cfg.n_domain_groups <= 0:
        return n
    return n * cfg.n_domain_groups // cfg.n_subjects


def synth_generate(cfg: SynthConfig) -> Dataset:
    """Deterministic synthetic dataset; identical bytes for identical configs."""
    rng = np.random.default_rng(cfg.seed)
    f = cfg.feature_dim
    class_dirs = rng.normal(size=(cfg.n_classes, f))
    n_groups = cfg.n_domain_groups if cfg.n_domain_groups > 0 else cfg.n_subjects
    group_centroids = rng.normal(size=(n_groups, f))
    subject_jitter = rng.normal(size=(cfg.n_subjects, f))
    group_class_shift = rng.normal(size=(n_groups, cfg.n_classes, f))
    twist_basis = rng.normal(size=(cfg.twist_subspace_dim, f))
    twist_coords = rng.normal(size=(cfg.n_subjects, cfg.n_classes, cfg.twist_subspace_dim))
    session_shift = rng.normal(size=(cfg.n_sessions, f))

    feats, labels, subjects, sessions = [], [], [], []
    for n in range(cfg.n_subjects):
        g = subject_group(n, cfg)
        offset = cfg.domain_shift_scale * (
            group_centroids[g] + cfg.within_group_scale * subject_jitter[n]
        )
        for s in range(cfg.n_sessions):
            sess_offset = cfg.session_shift_scale * session_shift[s]
            for m in range(cfg.n_classes):
                pattern = (m + g) % cfg.n_classes if cfg.group_permuted_classes else m
                class_part = (
                    cfg.class_separation * class_dirs[pattern]
                    + cfg.group_class_scale * group_class_shift[g, m]
                    + cfg.subject_class_scale * (twist_coords[n, m] @ twist_basis)
                )
                noise = rng.normal(size=(cfg.per_class_count, f))
                feats.append(class_part + offset + sess_offset + cfg.noise_scale * noise)
                labels.append(np.full(cfg.per_class_count, m))
                subjects.append(np.full(cfg.per_class_count, n))
                sessions.append(np.full(cfg.per_class_count, s))
    return Dataset(
        features=np.vstack(feats),
        labels=np.concatenate(labels),
        subjects=np.concatenate(subjects),
        sessions=np.concatenate(sessions),
        n_classes=cfg.n_classes,
        n_subjects=cfg.n_subjects,
        n_sessions=cfg.n_sessions,
    )


def inject_label_noise(ds: Dataset, eta: float, seed: int) -> Dataset:
    """Replace exactly round(eta * count) labels with uniform *other* labels.

    The input dataset is not modified; selection and replacement are
    deterministic in the seed.
    """
    if not 0.0 <= eta <= 1.0:
        raise ConfigError(f"noise fraction must be in [0, 1], got {eta}")
    n_flip = int(round(eta * len(ds)))
    labels = ds.labels.copy()
    labels.setflags(write=True)
    if n_flip:
        if ds.n_classes < 2:
            raise ConfigError("label noise needs at least 2 classes")
        rng = np.random.default_rng(seed)
        picked = rng.choice(len(ds), size=n_flip, replace=False)
        # uniform over the other M-1 classes: shift by 1..M-1 modulo M
        shifts = rng.integers(1, ds.n_classes, size=n_flip)
        labels[picked] = (labels[picked] + shifts) % ds.n_classes
    return replace(ds, features=ds.features.copy(), labels=labels,
                   subjects=ds.subjects.copy(), sessions=ds.sessions.copy())


@dataclass(frozen=True)
class Fold:
    """One leave-one-subject-out fold."""

    source_subjects: tuple[int, ...]
    target_subject: int
    session_filter: int | None  # None = all sessions


@dataclass(frozen=True)
class SplitPlan:
    folds: tuple[Fold, ...]
    protocol: str


def make_splits(ds: Dataset, protocol: str) -> SplitPlan:
    """One fold per subject; the held-out subject is the unseen target.

    The single-session protocol restricts both sides to session 0; the
    cross-session protocol uses all sessions on both sides.
    """
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    if ds.n_subjects < 2:
        raise ConfigError("leave-one-subject-out needs at least 2 subjects")
    session_filter = 0 if protocol == SINGLE_SESSION else None
    folds = tuple(
        Fold(
            source_subjects=tuple(s for s in range(ds.n_subjects) if s != target),
            target_subject=target,
            session_filter=session_filter,
        )
        for target in range(ds.n_subjects)
    )
    return SplitPlan(folds=folds, protocol=protocol)


def apply_fold(ds: Dataset, fold: Fold):
    """Materialize (source, target) datasets for one fold.

    Source subjects are re-densified to [0, N-1); the original ids are
    recorded in the source's id_maps. The target keeps a single dense
    subject id 0.
    """
    keep = np.ones(len(ds), dtype=bool)
    if fold.session_filter is not None:
        keep &= ds.sessions == fold.session_filter
    src_mask = keep & np.isin(ds.subjects, fold.source_subjects)
    tgt_mask = keep & (ds.subjects == fold.target_subject)
    src_map = {orig: dense for dense, orig in enumerate(fold.source_subjects)}
    source = Dataset(
        features=ds.features[src_mask],
        labels=ds.labels[src_mask],
        subjects=np.array([src_map[s] for s in ds.subjects[src_mask]], dtype=int),
        sessions=ds.sessions[src_mask],
        n_classes=ds.n_classes,
        n_subjects=len(fold.source_subjects),
        n_sessions=ds.n_sessions,
        class_names=ds.class_names,
        id_maps={"subject": src_map},
    )
    target = Dataset(
        features=ds.features[tgt_mask],
        labels=ds.labels[tgt_mask],
        subjects=np.zeros(int(tgt_mask.sum()), dtype=int),
        sessions=ds.sessions[tgt_mask],
        n_classes=ds.n_classes,
        n_subjects=1,
        n_sessions=ds.n_sessions,
        class_names=ds.class_names,
        id_maps={"subject": {fold.target_subject: 0}},
    )
    return source, target


class AuditedDataset:
    """Read-counting wrapper proving the target stays unseen during training.

    Every feature access increments `reads`; the trainer snapshots the
    counter before evaluation starts.
    """

    def __init__(self, ds: Dataset):
        self._ds = ds
        self.reads = 0

    def __len__(self) -> int:
        return len(self._ds)

    @property
    def n_classes(self) -> int:
        return self._ds.n_classes

    @property
    def features(self) -> np.ndarray:
        self.reads += 1
        return self._ds.features

    @property
    def labels(self) -> np.ndarray:
        self.reads += 1
        return self._ds.labels
