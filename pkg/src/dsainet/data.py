"""Trial containers and files, normalisation, segmentation, subject splits, synthetic EEG.

Binary layouts (all little-endian):

* Trial file: 28-byte header ``magic "EEGT" | version u32 | C u32 | T u32 |
  n_trials u32 | K u32 | sample_rate f32``, then ``n_trials`` records of
  ``subject_id i32 | label i32 | C*T float32`` (channel-major).
* Matrix file: ``rows u32 | cols u32`` then ``rows*cols`` float32, row-major.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence

import numpy as np
from sklearn.model_selection import KFold, StratifiedKFold, train_test_split

from .exceptions import ConfigurationError, DataError

logger = logging.getLogger(__name__)

MAGIC = b"EEGT"
VERSION = 1
HEADER = struct.Struct("<4sIIIIIf")
MATRIX_HEADER = struct.Struct("<II")


@dataclass(frozen=True)
class EEGTrial:
    subject_id: int
    label: int
    signal: np.ndarray
    sample_rate: float

    def __post_init__(self):
        if self.signal.ndim != 2:
            raise DataError(f"trial signal must be C x T, got shape {self.signal.shape}")
        if not np.all(np.isfinite(self.signal)):
            raise DataError(f"trial of subject {self.subject_id} contains NaN or Inf")


@dataclass
class TrialSet:
    """A stack of equally shaped trials: ``X [n, C, T]``, labels and subject ids."""

    X: np.ndarray
    y: np.ndarray
    subjects: np.ndarray
    sample_rate: float
    n_classes: int

    def __post_init__(self):
        self.X = np.asarray(self.X)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.subjects = np.asarray(self.subjects, dtype=np.int64)
        if self.X.ndim != 3:
            raise DataError(f"X must be [n, C, T], got {self.X.shape}")
        n = self.X.shape[0]
        if self.y.shape != (n,) or self.subjects.shape != (n,):
            raise DataError("X, y and subjects disagree in trial count")
        bad = np.flatnonzero((self.y < 0) | (self.y >= self.n_classes))
        if bad.size:
            raise DataError(f"trial {bad[0]} has label {self.y[bad[0]]} outside [0, {self.n_classes})")
        if not np.all(np.isfinite(self.X)):
            raise DataError("trial data contains NaN or Inf")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_channels(self) -> int:
        return self.X.shape[1]

    @property
    def n_samples(self) -> int:
        return self.X.shape[2]

    def subset(self, idx) -> "TrialSet":
        idx = np.asarray(idx, dtype=np.int64)
        return TrialSet(self.X[idx], self.y[idx], self.subjects[idx], self.sample_rate, self.n_classes)

    def trials(self) -> Iterator[EEGTrial]:
        for i in range(len(self)):
            yield EEGTrial(int(self.subjects[i]), int(self.y[i]), self.X[i], self.sample_rate)

    def zscored(self) -> "TrialSet":
        return TrialSet(zscore(self.X), self.y, self.subjects, self.sample_rate, self.n_classes)


# ----------------------------------------------------------------------------
# trial files
# ----------------------------------------------------------------------------
def _record_dtype(C: int, T: int) -> np.dtype:
    return np.dtype([("subject", "<i4"), ("label", "<i4"), ("signal", "<f4", (C, T))])


def write_trials(path, trials: TrialSet) -> Path:
    path = Path(path)
    n, C, T = trials.X.shape
    rec = np.zeros(n, dtype=_record_dtype(C, T))
    rec["subject"] = trials.subjects
    rec["label"] = trials.y
    rec["signal"] = trials.X
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, C, T, n, trials.n_classes, trials.sample_rate))
        fh.write(rec.tobytes())
    return path


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read(HEADER.size)
    if len(raw) < HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, version, C, T, n, K, fs = HEADER.unpack(raw)
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}, not a trial file")
    if version != VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    return {"n_channels": C, "n_samples": T, "n_trials": n, "n_classes": K, "sample_rate": fs}


def read_trials(path) -> TrialSet:
    hdr = read_header(path)
    C, T, n = hdr["n_channels"], hdr["n_samples"], hdr["n_trials"]
    expected = HEADER.size + n * (8 + 4 * C * T)
    actual = Path(path).stat().st_size
    if actual != expected:
        raise DataError(f"{path}: size {actual} bytes, header implies {expected}")
    rec = np.fromfile(path, dtype=_record_dtype(C, T), offset=HEADER.size, count=n)
    return TrialSet(rec["signal"].copy(), rec["label"].astype(np.int64), rec["subject"].astype(np.int64),
                    float(hdr["sample_rate"]), hdr["n_classes"])


# ----------------------------------------------------------------------------
# matrix files (attention maps, saliency vectors)
# ----------------------------------------------------------------------------
def write_matrix(path, matrix) -> Path:
    m = np.asarray(matrix, dtype="<f4")
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise DataError(f"matrix export needs a 1-d or 2-d array, got shape {m.shape}")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MATRIX_HEADER.pack(*m.shape))
        fh.write(np.ascontiguousarray(m).tobytes())
    return path


def read_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < MATRIX_HEADER.size:
        raise DataError(f"{path}: truncated matrix header")
    rows, cols = MATRIX_HEADER.unpack_from(raw)
    body = raw[MATRIX_HEADER.size:]
    if len(body) != 4 * rows * cols:
        raise DataError(f"{path}: {len(body)} payload bytes for a {rows}x{cols} matrix")
    return np.frombuffer(body, dtype="<f4").reshape(rows, cols).copy()


# ----------------------------------------------------------------------------
# preprocessing
# ----------------------------------------------------------------------------
def zscore(x) -> np.ndarray:
    """Channel-wise z-score along time for ``[..., C, T]``; flat channels use std 1."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    sd = x.std(axis=-1, keepdims=True)
    # constant channels are detected exactly; their float mean/std carry rounding noise
    flat = np.ptp(x, axis=-1, keepdims=True) == 0
    if flat.any():
        logger.info("z-score: %d flat channel(s), std clamped to 1", int(flat.sum()))
        mu = np.where(flat, x[..., :1], mu)
        sd = np.where(flat, 1.0, sd)
    return (x - mu) / sd


def segment(recording, window: int, overlap: float = 0.0) -> np.ndarray:
    """Cut a ``C x L`` recording into ``[n, C, window]`` segments; trailing remainder dropped."""
    rec = np.asarray(recording)
    if rec.ndim != 2:
        raise DataError(f"recording must be C x L, got shape {rec.shape}")
    if not 0.0 <= overlap < 1.0:
        raise ConfigurationError(f"overlap must be in [0, 1), got {overlap}")
    L = rec.shape[1]
    if window < 1 or window > L:
        raise DataError(f"window of {window} samples does not fit a recording of {L}")
    stride = max(1, int(round(window * (1.0 - overlap))))
    starts = range(0, L - window + 1, stride)
    return np.stack([rec[:, s:s + window] for s in starts])


# ----------------------------------------------------------------------------
# subject-independent splits
# ----------------------------------------------------------------------------
@dataclass
class SplitRun:
    train_subjects: List[int]
    val_subjects: List[int]
    test_subjects: List[int]
    train_idx: List[int]
    val_idx: List[int]
    test_idx: List[int]


@dataclass
class SplitManifest:
    protocol: str
    k: Optional[int]
    seed: int
    stratified: bool
    runs: List[SplitRun] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "SplitManifest":
        d = json.loads(text)
        runs = [SplitRun(**r) for r in d.pop("runs")]
        return cls(runs=runs, **d)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json())
        return path

    @classmethod
    def load(cls, path) -> "SplitManifest":
        return cls.from_json(Path(path).read_text())


def check_manifest(manifest: SplitManifest) -> None:
    """Raise unless test subjects never appear in training/validation and trial sets are disjoint.

    Under k-fold, validation subjects are also disjoint from training subjects;
    under LOSO the validation trials are a held-out share of each training subject.
    """
    for i, run in enumerate(manifest.runs):
        tr, va, te = set(run.train_subjects), set(run.val_subjects), set(run.test_subjects)
        if te & (tr | va):
            raise DataError(f"run {i}: test subjects overlap training/validation subjects")
        if manifest.protocol == "kfold" and tr & va:
            raise DataError(f"run {i}: validation subjects overlap training subjects")
        a, b, c = set(run.train_idx), set(run.val_idx), set(run.test_idx)
        if a & b or a & c or b & c:
            raise DataError(f"run {i}: trial index sets overlap")


def _stratified_holdout(idx: np.ndarray, labels: np.ndarray, frac: float, seed: int):
    try:
        return train_test_split(idx, test_size=frac, stratify=labels, random_state=seed)
    except ValueError:
        return train_test_split(idx, test_size=frac, random_state=seed)


def make_splits(subjects, labels, protocol: str = "loso", k: Optional[int] = None, seed: int = 0,
                val_fraction: float = 0.2) -> SplitManifest:
    """Build a subject-independent manifest from per-trial subject ids and labels.

    ``loso``: one run per subject, which is the test set; every other subject
    gives ``val_fraction`` of its trials (label-stratified) to validation.
    ``kfold``: subjects are dealt into ``k`` folds (stratified by label when
    every subject carries a single label); each fold is the test set once, one
    randomly drawn remaining fold is validation, the rest is training.
    """
    subjects = np.asarray(subjects, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if subjects.shape != labels.shape:
        raise DataError("subjects and labels must have one entry per trial")
    uniq = np.unique(subjects)
    runs: List[SplitRun] = []

    if protocol == "loso":
        if uniq.size < 2:
            raise ConfigurationError("LOSO needs at least two subjects")
        for s in uniq:
            test_idx = np.flatnonzero(subjects == s)
            train_idx, val_idx = [], []
            for j, other in enumerate(uniq):
                if other == s:
                    continue
                own = np.flatnonzero(subjects == other)
                tr, va = _stratified_holdout(own, labels[own], val_fraction, seed * 100003 + j)
                train_idx.extend(tr.tolist())
                val_idx.extend(va.tolist())
            others = [int(o) for o in uniq if o != s]
            runs.append(SplitRun(others, others, [int(s)], sorted(train_idx), sorted(val_idx),
                                 test_idx.tolist()))
        return SplitManifest("loso", None, seed, True, runs)

    if protocol != "kfold":
        raise ConfigurationError(f"unknown protocol {protocol!r}")
    if k is None or k < 3:
        raise ConfigurationError("k-fold needs k >= 3 (one test, one validation, at least one training fold)")
    if k > uniq.size:
        raise ConfigurationError(f"{k} folds requested but only {uniq.size} subjects")

    subj_labels = [np.unique(labels[subjects == s]) for s in uniq]
    stratified = all(len(u) == 1 for u in subj_labels)
    folds: List[np.ndarray] = []
    if stratified:
        y_subj = np.array([u[0] for u in subj_labels])
        try:
            splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
            folds = [uniq[te] for _, te in splitter.split(uniq, y_subj)]
        except ValueError:
            stratified = False
    if not stratified:
        splitter = KFold(n_splits=k, shuffle=True, random_state=seed)
        folds = [uniq[te] for _, te in splitter.split(uniq)]

    rng = np.random.default_rng(seed)
    for i in range(k):
        rest = [j for j in range(k) if j != i]
        v = int(rng.choice(rest))
        train_s = np.concatenate([folds[j] for j in rest if j != v])
        run = SplitRun(
            sorted(int(s) for s in train_s), sorted(int(s) for s in folds[v]), sorted(int(s) for s in folds[i]),
            np.flatnonzero(np.isin(subjects, train_s)).tolist(),
            np.flatnonzero(np.isin(subjects, folds[v])).tolist(),
            np.flatnonzero(np.isin(subjects, folds[i])).tolist(),
        )
        runs.append(run)
    return SplitManifest("kfold", k, seed, stratified, runs)


# ----------------------------------------------------------------------------
# synthetic EEG
# ----------------------------------------------------------------------------
CLASS_FREQS = (10.0, 22.0, 6.0, 30.0)


def signal_channels(n_classes: int, n_signal_channels: int = 2) -> List[List[int]]:
    """Channels carrying each class's sinusoid: class ``k`` owns a contiguous block."""
    return [list(range(k * n_signal_channels, (k + 1) * n_signal_channels)) for k in range(n_classes)]


def synth_generate(n_subjects: int = 12, trials_per_subject: int = 100, n_channels: int = 8,
                   n_samples: int = 500, n_classes: int = 2, seed: int = 0, sample_rate: float = 250.0,
                   n_signal_channels: int = 2, gain_range: Sequence[float] = (0.5, 1.5),
                   jitter_hz: float = 1.0, noise_std: float = 1.0) -> TrialSet:
    """Planted-sinusoid EEG with inter-subject variability.

    Class ``k`` adds a unit-amplitude sinusoid at ``CLASS_FREQS[k]`` (random
    phase per trial) to its channel block. Every subject scales that sinusoid
    by a gain drawn from ``gain_range`` and shifts each class frequency by up to
    ``jitter_hz``. Unit Gaussian noise covers every channel. Labels are
    balanced within each subject.
    """
    if not 2 <= n_classes <= len(CLASS_FREQS):
        raise ConfigurationError(f"n_classes must be in [2, {len(CLASS_FREQS)}]")
    if n_channels < n_classes * n_signal_channels:
        raise ConfigurationError(
            f"{n_channels} channels cannot hold {n_classes} blocks of {n_signal_channels} signal channels")
    if trials_per_subject < n_classes:
        raise ConfigurationError("need at least one trial per class per subject")
    rng = np.random.default_rng(seed)
    t = np.arange(n_samples) / sample_rate
    blocks = signal_channels(n_classes, n_signal_channels)
    n = n_subjects * trials_per_subject
    X = np.empty((n, n_channels, n_samples), dtype=np.float32)
    y = np.empty(n, dtype=np.int64)
    subj = np.empty(n, dtype=np.int64)
    i = 0
    for s in range(n_subjects):
        gain = rng.uniform(*gain_range)
        freqs = np.asarray(CLASS_FREQS[:n_classes]) + rng.uniform(-jitter_hz, jitter_hz, size=n_classes)
        labels = rng.permutation(np.resize(np.arange(n_classes), trials_per_subject))
        for lab in labels:
            trial = rng.normal(0.0, noise_std, size=(n_channels, n_samples))
            phase = rng.uniform(0, 2 * np.pi)
            trial[blocks[lab]] += gain * np.sin(2 * np.pi * freqs[lab] * t + phase)
            X[i] = trial
            y[i] = lab
            subj[i] = s
            i += 1
    return TrialSet(X, y, subj, float(sample_rate), n_classes)
