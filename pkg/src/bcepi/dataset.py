"""Epitope CSV ingestion, stratified splitting and feature standardization."""
from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence, TypeVar

import numpy as np

from .errors import DegenerateSplit, FileUnreadable, MissingColumn
from .seeding import SPLIT, rng_for

logger = logging.getLogger(__name__)

PEPTIDE_FEATURES = ("chou_fasman", "emini", "kolaskar_tongaonkar", "parker")
PROTEIN_FEATURES = ("isoelectric_point", "aromaticity", "hydrophobicity", "stability")
FEATURE_NAMES = PEPTIDE_FEATURES + PROTEIN_FEATURES
N_FEATURES = len(FEATURE_NAMES)

COLUMNS = ("parent_protein_id", "protein_seq", "start_position", "end_position",
           "peptide_seq", *FEATURE_NAMES, "target")

T = TypeVar("T")


@dataclass(frozen=True)
class EpitopeRecord:
    parent_protein_id: str
    protein_seq: str
    start_position: int
    end_position: int
    peptide_seq: str
    chou_fasman: Optional[float] = None
    emini: Optional[float] = None
    kolaskar_tongaonkar: Optional[float] = None
    parker: Optional[float] = None
    isoelectric_point: Optional[float] = None
    aromaticity: Optional[float] = None
    hydrophobicity: Optional[float] = None
    stability: Optional[float] = None
    target: int = 0
    row: int = 0  # 1-based data row in the source file


@dataclass(frozen=True)
class FeatureVector:
    x: tuple[float, ...]
    y: int

    def __post_init__(self):
        if len(self.x) != N_FEATURES or not all(math.isfinite(v) for v in self.x):
            raise ValueError(f"feature vector needs exactly {N_FEATURES} finite entries")


class SpanCheck(str, Enum):
    CONSISTENT = "consistent"
    MISMATCH = "mismatch"


@dataclass
class IngestionReport:
    path: str
    loaded: int = 0
    rejected: int = 0
    rejections: list[tuple[int, str]] = field(default_factory=list)
    span_mismatches: list[int] = field(default_factory=list)
    positives: int = 0

    def to_text(self) -> str:
        lines = [f"source: {self.path}",
                 f"loaded: {self.loaded}",
                 f"rejected: {self.rejected}",
                 f"positives: {self.positives}",
                 f"negatives: {self.loaded - self.positives}",
                 f"span_mismatches: {len(self.span_mismatches)}"]
        for row, reason in self.rejections:
            lines.append(f"rejected row {row}: {reason}")
        for row in self.span_mismatches:
            lines.append(f"span mismatch row {row}")
        return "\n".join(lines) + "\n"


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _parse_row(row: dict[str, str], lineno: int) -> EpitopeRecord:
    """Raise ValueError with a short reason if the row breaks a record invariant."""
    def number(name, kind):
        try:
            return kind(row[name].strip())
        except (ValueError, AttributeError):
            raise ValueError(f"unparseable {name} {row[name]!r}") from None

    protein = (row["protein_seq"] or "").strip().upper()
    peptide = (row["peptide_seq"] or "").strip().upper()
    if not protein or not peptide:
        raise ValueError("empty sequence")
    start = number("start_position", int)
    end = number("end_position", int)
    target = number("target", int)
    feats = {}
    for name in FEATURE_NAMES:
        v = number(name, float)
        if not math.isfinite(v):
            raise ValueError(f"non-finite {name}")
        feats[name] = v
    if target not in (0, 1):
        raise ValueError(f"target {target} not in {{0, 1}}")
    if end < start:
        raise ValueError("inverted span")
    if start < 1 or end > len(protein):
        raise ValueError("span outside protein")
    if len(peptide) != end - start + 1:
        raise ValueError("peptide length does not match span")
    return EpitopeRecord(row["parent_protein_id"], protein, start, end, peptide,
                         target=target, row=lineno, **feats)


def check_span(record: EpitopeRecord) -> SpanCheck:
    """Compare ``protein_seq[start..end]`` (1-based, inclusive) with the peptide."""
    fragment = record.protein_seq[record.start_position - 1:record.end_position]
    return SpanCheck.CONSISTENT if fragment == record.peptide_seq else SpanCheck.MISMATCH


def load_csv(path, drop_span_mismatches: bool = False) -> tuple[list[EpitopeRecord], IngestionReport]:
    """Read an epitope CSV, keeping valid rows in file order.

    Rows that violate a record invariant are listed in the report instead of
    raising. Span mismatches are flagged and kept unless ``drop_span_mismatches``.
    """
    report = IngestionReport(str(path))
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise FileUnreadable(f"{path}: {exc}") from exc
    records = []
    with fh:
        try:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            for name in COLUMNS:
                if name not in header:
                    raise MissingColumn(name)
            for i, row in enumerate(reader, start=1):
                try:
                    rec = _parse_row(row, i)
                except ValueError as exc:
                    report.rejected += 1
                    report.rejections.append((i, str(exc)))
                    continue
                if check_span(rec) is SpanCheck.MISMATCH:
                    report.span_mismatches.append(i)
                    if drop_span_mismatches:
                        report.rejected += 1
                        report.rejections.append((i, "span mismatch"))
                        continue
                records.append(rec)
        except (UnicodeDecodeError, csv.Error) as exc:
            raise FileUnreadable(f"{path}: {exc}") from exc
    report.loaded = len(records)
    report.positives = sum(r.target for r in records)
    if report.rejected:
        logger.warning("%s: rejected %d rows", path, report.rejected)
    return records, report


# --- splitting ---------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.64
    val_fraction: float = 0.16
    test_fraction: float = 0.20
    seed: int = 0

    def __post_init__(self):
        fracs = self.fractions
        if any(f <= 0 for f in fracs):
            raise ValueError("every split fraction must be > 0")
        if abs(sum(fracs) - 1.0) > 1e-12:
            raise ValueError(f"split fractions sum to {sum(fracs)!r}, expected 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    @property
    def fractions(self) -> tuple[float, float, float]:
        return (self.train_fraction, self.val_fraction, self.test_fraction)


def _apportion(total: int, weights: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment; ties go to the earlier slot."""
    wsum = sum(weights)
    quotas = [total * w / wsum for w in weights]
    counts = [math.floor(q) for q in quotas]
    order = sorted(range(len(weights)), key=lambda k: (-(quotas[k] - counts[k]), k))
    for k in order[:total - sum(counts)]:
        counts[k] += 1
    return counts


def split_indices(labels: Sequence[int], spec: SplitSpec) -> tuple[list[int], list[int], list[int]]:
    """Stratified, seeded split of ``range(len(labels))`` into train/val/test.

    Split sizes are apportioned from the total; each split's positive count is
    then apportioned from the positives in proportion to split size, so every
    split's positive fraction is within one record of the global fraction.
    Indices inside a split keep their original order.
    """
    labels = [int(v) for v in labels]
    pos = [i for i, v in enumerate(labels) if v == 1]
    neg = [i for i, v in enumerate(labels) if v == 0]
    if not pos or not neg:
        raise DegenerateSplit("both classes must be present before splitting")
    sizes = _apportion(len(labels), spec.fractions)
    if min(sizes) == 0:
        raise DegenerateSplit(f"split sizes {sizes} leave a split empty")
    n_pos = _apportion(len(pos), sizes)
    n_neg = [s - p for s, p in zip(sizes, n_pos)]
    if n_pos[0] == 0 or n_neg[0] == 0:
        raise DegenerateSplit("training split would be missing a class")
    rng = rng_for(spec.seed, SPLIT)
    pos_perm = [pos[k] for k in rng.permutation(len(pos))]
    neg_perm = [neg[k] for k in rng.permutation(len(neg))]
    out = []
    p0 = n0 = 0
    for p, n in zip(n_pos, n_neg):
        out.append(sorted(pos_perm[p0:p0 + p] + neg_perm[n0:n0 + n]))
        p0 += p
        n0 += n
    return out[0], out[1], out[2]


def stratified_split(records: Sequence[T], spec: SplitSpec,
                     label: Callable[[T], int] = lambda r: r.target
                     ) -> tuple[list[T], list[T], list[T]]:
    idx = split_indices([label(r) for r in records], spec)
    return tuple([records[i] for i in part] for part in idx)


# --- standardization -----------------------------------------------------------

def to_matrix(vectors: Sequence[FeatureVector]) -> tuple[np.ndarray, np.ndarray]:
    X = np.array([v.x for v in vectors], dtype=np.float64).reshape(len(vectors), N_FEATURES)
    y = np.array([v.y for v in vectors], dtype=np.int64)
    return X, y


@dataclass(frozen=True)
class Standardizer:
    means: np.ndarray
    stddevs: np.ndarray
    constant: tuple[bool, ...] = ()

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.means) / self.stddevs


def fit_standardizer(train) -> Standardizer:
    """Per-feature mean and population stddev from the training split only.

    Accepts a list of FeatureVector or a 2-D array. Constant columns get
    stddev 1 and are flagged.
    """
    X = to_matrix(train)[0] if not isinstance(train, np.ndarray) else np.asarray(train, dtype=np.float64)
    if len(X) == 0:
        raise ValueError("cannot fit a standardizer on an empty training set")
    means = X.mean(axis=0)
    std = X.std(axis=0)
    constant = std == 0
    if constant.any():
        names = [FEATURE_NAMES[k] for k in np.flatnonzero(constant)] if X.shape[1] == N_FEATURES else []
        logger.warning("constant training feature(s) %s: stddev forced to 1", names)
    std = np.where(constant, 1.0, std)
    return Standardizer(means, std, tuple(bool(c) for c in constant))


def apply(standardizer: Standardizer, v: FeatureVector) -> FeatureVector:
    return FeatureVector(tuple(standardizer.transform(np.array(v.x)).tolist()), v.y)


# --- exploratory exports --------------------------------------------------------

def summary_statistics(X: np.ndarray, y: np.ndarray) -> list[dict]:
    """Per-feature min/max/mean/stddev, split by class."""
    rows = []
    for cls in (0, 1):
        sub = X[y == cls]
        for k, name in enumerate(FEATURE_NAMES):
            col = sub[:, k]
            rows.append({"feature": name, "target": cls, "count": len(col),
                         "min": col.min() if len(col) else math.nan,
                         "max": col.max() if len(col) else math.nan,
                         "mean": col.mean() if len(col) else math.nan,
                         "stddev": col.std() if len(col) else math.nan})
    return rows


def correlation_matrix(X: np.ndarray) -> np.ndarray:
    """Pearson correlation; a constant column yields NaN entries."""
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.corrcoef(X, rowvar=False)


def write_summary_csv(path, X: np.ndarray, y: np.ndarray) -> None:
    rows = summary_statistics(X, y)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v
                        for k, v in r.items()})


def write_correlation_csv(path, X: np.ndarray) -> None:
    C = correlation_matrix(X)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["feature", *FEATURE_NAMES])
        for name, row in zip(FEATURE_NAMES, C):
            w.writerow([name, *(repr(float(v)) for v in row)])


def write_features_csv(path, vectors: Sequence[FeatureVector]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*FEATURE_NAMES, "target"])
        for v in vectors:
            w.writerow([*(repr(float(a)) for a in v.x), v.y])


def read_csv_rows(path) -> tuple[list[str], list[dict[str, str]]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
            return list(reader.fieldnames or []), rows
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise FileUnreadable(f"{path}: {exc}") from exc

