"""CAN frames, OTIDS log parsing, synthetic traffic, features and splits."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_CLASSES = ("Normal", "DoS", "Fuzzy", "Impersonation")
N_FEATURES = 10
MAX_CAN_ID = 0x7FF
DEFAULT_SPLIT_SEED = 42
DEFAULT_RATIOS = (0.6, 0.2, 0.2)

# Full-scale OTIDS cardinalities of the reference experiment.
FULL_SCALE_DATASET_SIZE = 461350
FULL_SCALE_ADV_SET_SIZE = 92270

CACHE_MAGIC = "canbench-dataset v1"

_RECORD_RE = re.compile(
    r"^Timestamp:\s*(?P<ts>\d+(?:\.\d*)?)\s+ID:\s*(?P<id>[0-9A-Fa-f]+)\s+"
    r"(?P<rtr>000|100)\s+DLC:\s*(?P<dlc>\d+)(?P<data>(?:\s+[0-9A-Fa-f]{2})*)\s*$"
)


class CanDataError(ValueError):
    pass


class OtidsParseError(CanDataError):
    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        prefix = f"line {line_no}: " if line_no is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class CanFrame:
    timestamp: float
    can_id: int
    remote: bool
    dlc: int
    data: tuple[int, ...] = (0,) * 8
    label: str = "Normal"

    def __post_init__(self):
        if self.timestamp < 0:
            raise CanDataError(f"negative timestamp {self.timestamp}")
        if not 0 <= self.can_id <= MAX_CAN_ID:
            raise CanDataError(f"CAN id {self.can_id:#x} exceeds 11 bits")
        if not 0 <= self.dlc <= 8:
            raise CanDataError(f"DLC {self.dlc} outside 0..8")
        if len(self.data) != 8 or any(not 0 <= b <= 255 for b in self.data):
            raise CanDataError("data must be 8 bytes")
        if any(self.data[self.dlc:]):
            raise CanDataError("bytes beyond DLC must be zero")


def parse_otids_record(line: str, label: str = "Normal",
                       line_no: int | None = None) -> CanFrame:
    m = _RECORD_RE.match(line.strip())
    if m is None:
        raise OtidsParseError(f"malformed record: {line.strip()!r}", line_no)
    can_id = int(m["id"], 16)
    if can_id > MAX_CAN_ID:
        raise OtidsParseError(f"id {can_id:#x} > 0x7ff", line_no)
    dlc = int(m["dlc"])
    if dlc > 8:
        raise OtidsParseError(f"DLC {dlc} > 8", line_no)
    payload = [int(b, 16) for b in m["data"].split()]
    if len(payload) != dlc:
        raise OtidsParseError(f"{len(payload)} data bytes but DLC {dlc}", line_no)
    data = tuple(payload + [0] * (8 - dlc))
    return CanFrame(float(m["ts"]), can_id, m["rtr"] == "100", dlc, data, label)


def format_otids_record(frame: CanFrame) -> str:
    """Canonical single-space rendering; inverse of :func:`parse_otids_record`."""
    parts = [f"Timestamp: {frame.timestamp:.6f}", f"ID: {frame.can_id:04x}",
             "100" if frame.remote else "000", f"DLC: {frame.dlc}"]
    parts.extend(f"{b:02x}" for b in frame.data[:frame.dlc])
    return " ".join(parts)


def parse_otids_log(lines: Iterable[str], label: str = "Normal") -> list[CanFrame]:
    """Parse a whole log. One traffic condition per file, so one label."""
    frames: list[CanFrame] = []
    last_ts = -1.0
    for no, line in enumerate(lines, start=1):
        frame = parse_otids_record(line, label, no)
        if frame.timestamp < last_ts:
            raise OtidsParseError("timestamp decreases", no)
        last_ts = frame.timestamp
        frames.append(frame)
    return frames


def extract_features(frame: CanFrame, include_remote: bool = False) -> np.ndarray:
    """ID, DLC and the eight data bytes, each scaled to [0, 1].

    The remote-frame bit is appended as an eleventh column on request.
    """
    values = [frame.can_id / MAX_CAN_ID, frame.dlc / 8.0]
    values.extend(b / 255.0 for b in frame.data)
    if include_remote:
        values.append(float(frame.remote))
    return np.array(values, dtype=np.float64)


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix ``X`` (n, d) with integer labels into ``class_names``."""

    X: np.ndarray
    y: np.ndarray
    class_names: tuple[str, ...] = DEFAULT_CLASSES

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64, copy=True)
        y = np.array(self.y, dtype=np.intp, copy=True)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise CanDataError(f"shape mismatch X{X.shape} y{y.shape}")
        if y.size and (y.min() < 0 or y.max() >= len(self.class_names)):
            raise CanDataError("label outside class_names")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes)

    def subset(self, indices) -> LabeledDataset:
        indices = np.asarray(indices, dtype=np.intp)
        return LabeledDataset(self.X[indices], self.y[indices], self.class_names)

    def rows(self):
        return zip(self.X, (self.class_names[k] for k in self.y))

    @classmethod
    def from_frames(cls, frames: Sequence[CanFrame],
                    class_names: Sequence[str] = DEFAULT_CLASSES,
                    include_remote: bool = False) -> LabeledDataset:
        index = {name: k for k, name in enumerate(class_names)}
        unknown = {f.label for f in frames} - index.keys()
        if unknown:
            raise CanDataError(f"labels not in class list: {sorted(unknown)}")
        d = N_FEATURES + int(include_remote)
        X = np.array([extract_features(f, include_remote) for f in frames]).reshape(-1, d)
        y = np.array([index[f.label] for f in frames], dtype=np.intp)
        return cls(X, y, tuple(class_names))


def concat(*parts: LabeledDataset) -> LabeledDataset:
    names = parts[0].class_names
    if any(p.class_names != names for p in parts):
        raise CanDataError("class lists differ")
    return LabeledDataset(np.vstack([p.X for p in parts]),
                          np.concatenate([p.y for p in parts]), names)


@dataclass(frozen=True)
class DataSplits:
    a: LabeledDataset
    b: LabeledDataset
    c: LabeledDataset


def _largest_remainder(total: int, ratios: Sequence[Fraction]) -> list[int]:
    exact = [total * r for r in ratios]
    base = [int(e) for e in exact]  # floor, exact values are non-negative
    short = total - sum(base)
    order = sorted(range(len(ratios)), key=lambda s: (-(exact[s] - base[s]), s))
    for s in order[:short]:
        base[s] += 1
    return base


def _allocate(class_counts: Sequence[int], ratios: Sequence[Fraction]) -> np.ndarray:
    """Integer table rows=classes, cols=splits with exact margins.

    Every cell is floor or ceil of its proportional share.
    """
    n_cls, n_split = len(class_counts), len(ratios)
    exact = [[n * r for r in ratios] for n in class_counts]
    table = np.array([[int(e) for e in row] for row in exact], dtype=np.int64)
    quota = np.array(_largest_remainder(sum(class_counts), ratios)) - table.sum(axis=0)
    need = [n - int(table[c].sum()) for c, n in enumerate(class_counts)]
    for c in sorted(range(n_cls), key=lambda c: (-need[c], c)):
        cands = [s for s in range(n_split) if exact[c][s] != table[c, s]]
        cands.sort(key=lambda s: (-quota[s], -(exact[c][s] - table[c, s]), s))
        for s in cands[:need[c]]:
            table[c, s] += 1
            quota[s] -= 1
    if (quota != 0).any() or (table.sum(axis=1) != np.asarray(class_counts)).any():
        raise CanDataError("stratified allocation failed")
    return table


def _check_ratios(ratios) -> list[Fraction]:
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise CanDataError(f"split ratios sum to {sum(ratios)}, expected 1")
    if any(r < 0 for r in ratios):
        raise CanDataError("negative split ratio")
    fr = [Fraction(r).limit_denominator(10**9) for r in ratios]
    fr[-1] = 1 - sum(fr[:-1])
    return fr


def split_dataset(ds: LabeledDataset, ratios=DEFAULT_RATIOS,
                  seed: int = DEFAULT_SPLIT_SEED) -> DataSplits:
    """Stratified seeded split into A/B/C."""
    if len(ds) == 0:
        raise CanDataError("cannot split an empty dataset")
    fr = _check_ratios(ratios)
    if len(fr) != 3:
        raise CanDataError("expected three ratios (A, B, C)")
    counts = ds.class_counts()
    present = counts[counts > 0]
    if (present < 3).any():
        raise CanDataError("every class needs at least 3 members")
    table = _allocate(counts.tolist(), fr)
    rng = np.random.default_rng(seed)
    parts: list[list[np.ndarray]] = [[], [], []]
    for c in range(ds.n_classes):
        members = rng.permutation(np.nonzero(ds.y == c)[0])
        start = 0
        for s in range(3):
            parts[s].append(members[start:start + table[c, s]])
            start += table[c, s]
    a, b, c = (ds.subset(np.sort(np.concatenate(p))) for p in parts)
    return DataSplits(a, b, c)


def stratified_kfold(ds: LabeledDataset, k: int = 5, seed: int = DEFAULT_SPLIT_SEED):
    """List of (train, validation) pairs; every row validates exactly once."""
    if k < 2:
        raise CanDataError(f"k must be >= 2, got {k}")
    counts = ds.class_counts()
    if ((counts > 0) & (counts < k)).any():
        raise CanDataError(f"a class has fewer than k={k} members")
    folds = []
    for val in fold_indices(ds, k, seed):
        mask = np.zeros(len(ds), dtype=bool)
        mask[val] = True
        folds.append((ds.subset(np.nonzero(~mask)[0]), ds.subset(val)))
    return folds


def fold_indices(ds: LabeledDataset, k: int = 5, seed: int = DEFAULT_SPLIT_SEED):
    """Validation index arrays of :func:`stratified_kfold`, same assignment."""
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(ds), dtype=np.intp)
    offset = 0
    for c in range(ds.n_classes):
        members = rng.permutation(np.nonzero(ds.y == c)[0])
        fold_of[members] = (np.arange(members.size) + offset) % k
        offset = (offset + members.size) % k
    return [np.nonzero(fold_of == f)[0] for f in range(k)]


# Synthetic traffic -----------------------------------------------------------

_LEGIT_IDS = (0x018F, 0x0260, 0x02A0, 0x0316, 0x0329, 0x043F, 0x0440, 0x04B0, 0x0545, 0x05F0)


@dataclass(frozen=True)
class SyntheticConfig:
    n: int = 1000
    n_classes: int = 4
    class_separation: float = 4.0
    seed: int = 0
    class_names: tuple[str, ...] | None = field(default=None)

    def names(self) -> tuple[str, ...]:
        if self.class_names is not None:
            return tuple(self.class_names)
        if self.n_classes <= len(DEFAULT_CLASSES):
            return DEFAULT_CLASSES[:self.n_classes]
        return tuple(f"class{k}" for k in range(self.n_classes))


def _class_profile(k: int, rng: np.random.Generator):
    """(id pool, dlc, per-id payload means) for class ``k``."""
    if k == 0:  # normal traffic: fixed ECU ids with periodic payloads
        ids = np.array(_LEGIT_IDS[:6])
        means = rng.integers(20, 236, size=(ids.size, 8)).astype(float)
        return ids, 8, means
    if k == 1:  # flooding with the highest-priority id
        return np.array([0x000]), 8, np.zeros((1, 8))
    if k == 2:  # fuzzing: arbitrary ids and payloads
        ids = rng.integers(0, MAX_CAN_ID + 1, size=24)
        return ids, None, rng.integers(0, 256, size=(ids.size, 8)).astype(float)
    ids = np.array(_LEGIT_IDS[k % 4: k % 4 + 4]) if k == 3 else \
        rng.choice(np.array(_LEGIT_IDS), size=4, replace=False)
    means = rng.integers(20, 236, size=(ids.size, 8)).astype(float)
    return ids, 8, means


def generate_synthetic(cfg: SyntheticConfig = SyntheticConfig()) -> LabeledDataset:
    """Class-conditional CAN traffic; higher ``class_separation`` = less overlap.

    Frames are built as :class:`CanFrame` values and featurized, so the data
    obeys every frame invariant.
    """
    if cfg.n_classes < 2 or cfg.n < cfg.n_classes:
        raise CanDataError(f"need n >= n_classes >= 2, got n={cfg.n}, "
                           f"n_classes={cfg.n_classes}")
    if cfg.class_separation <= 0:
        raise CanDataError("class_separation must be positive")
    names = cfg.names()
    if len(names) != cfg.n_classes:
        raise CanDataError("class_names length differs from n_classes")
    rng = np.random.default_rng(cfg.seed)
    profiles = [_class_profile(k, rng) for k in range(cfg.n_classes)]
    per_class = [cfg.n // cfg.n_classes + (1 if k < cfg.n % cfg.n_classes else 0)
                 for k in range(cfg.n_classes)]
    byte_sd = 64.0 / cfg.class_separation
    id_sd = 96.0 / cfg.class_separation
    X = np.empty((cfg.n, N_FEATURES))
    y = np.empty(cfg.n, dtype=np.intp)
    row = 0
    for k, count in enumerate(per_class):
        ids, dlc, means = profiles[k]
        for _ in range(count):
            j = rng.integers(ids.size)
            can_id = int(np.clip(round(ids[j] + rng.normal(0, id_sd)), 0, MAX_CAN_ID))
            n_bytes = int(rng.integers(0, 9)) if dlc is None else dlc
            payload = np.clip(np.rint(means[j] + rng.normal(0, byte_sd, 8)), 0, 255)
            payload[n_bytes:] = 0
            frame = CanFrame(0.0, can_id, False, n_bytes,
                             tuple(int(b) for b in payload), names[k])
            X[row] = extract_features(frame)
            y[row] = k
            row += 1
    order = rng.permutation(cfg.n)
    return LabeledDataset(X[order], y[order], names)


# Dataset cache ---------------------------------------------------------------

def save_dataset(ds: LabeledDataset, path) -> None:
    lines = [",".join([CACHE_MAGIC, str(ds.n_features), *ds.class_names])]
    for x, label in ds.rows():
        lines.append(",".join([*(repr(float(v)) for v in x), label]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_dataset(path) -> LabeledDataset:
    text = Path(path).read_text(encoding="ascii").splitlines()
    if not text:
        raise CanDataError(f"{path}: empty dataset cache")
    header = text[0].split(",")
    if header[0] != CACHE_MAGIC or len(header) < 3:
        raise CanDataError(f"{path}: not a {CACHE_MAGIC} file")
    d = int(header[1])
    names = tuple(header[2:])
    index = {n: k for k, n in enumerate(names)}
    X = np.empty((len(text) - 1, d))
    y = np.empty(len(text) - 1, dtype=np.intp)
    for i, line in enumerate(text[1:]):
        fields = line.split(",")
        if len(fields) != d + 1 or fields[-1] not in index:
            raise CanDataError(f"{path}: bad row {i + 2}")
        X[i] = [float(v) for v in fields[:-1]]
        y[i] = index[fields[-1]]
    return LabeledDataset(X, y, names)
