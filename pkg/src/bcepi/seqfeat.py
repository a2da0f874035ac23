"""Physicochemical descriptors computed from amino-acid sequences.

Four peptide-level descriptors (Chou-Fasman beta-turn, Emini surface
accessibility, Kolaskar-Tongaonkar antigenicity, Parker hydrophilicity) are
sliding-window scores collapsed to one scalar per peptide by averaging over
windows. Four protein-level descriptors (isoelectric point, aromaticity,
GRAVY hydropathy, instability index) are whole-sequence statistics.

Residue tables ship as plain-text files under ``bcepi/tables`` and are
checked against SHA-256 digests when the module is imported.
"""
from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from types import MappingProxyType
from typing import Mapping

from .dataset import FEATURE_NAMES, EpitopeRecord, FeatureVector
from .errors import (EmptySequence, IllegalResidue, MissingColumn, NoCrossing,
                     SequenceTooShort, TableChecksumError)

AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"
_ALPHABET = frozenset(AMINO_ACIDS)

PEPTIDE_WINDOW = 7
EMINI_WINDOW = 6
EMINI_NORMALIZER = 0.37
PI_TOLERANCE = 0.01

_TABLE_SHA256 = {
    "chou_fasman_turn.txt": "ea23b62fe1dd5603213cc466a5030b3aa62ef1e20bef41caa97e2c7fa2051416",
    "emini_surface.txt": "bfa03959c0d9e39023dc2704f435d9e2b585d45c8022e585c2cb6bd292c19f28",
    "guruprasad_diwv.txt": "b17f4b50884bb3b3907354034b14424d5b3b336054c5e6c7c5bded84aadb731e",
    "kolaskar_tongaonkar.txt": "926d1b2c4da4246dcae63ec4f9dd4c1837097e6a58750e2f9041a89298f3b347",
    "kyte_doolittle.txt": "5eae0a90265bc4d0c0dd42b7f062392ce0735a9ca731734e35a320fff4db9377",
    "parker_hydrophilicity.txt": "135b6fc9a53484726e327410d2d29b2d73031fe33aab8c9e54728426b35bd1f6",
    "pka_bjellqvist.txt": "9f97ec157deb2f3d37350cc342eda87e0fdfc35df8f1311d81c18c1584e442a9",
}


@dataclass(frozen=True)
class AminoAcidScale:
    name: str
    values: Mapping[str, float]
    provenance: str = ""

    def __post_init__(self):
        if set(self.values) != _ALPHABET:
            raise ValueError(f"scale {self.name!r} must cover exactly the 20 standard residues")
        if not all(math.isfinite(v) for v in self.values.values()):
            raise ValueError(f"scale {self.name!r} has non-finite entries")
        object.__setattr__(self, "values", MappingProxyType(dict(self.values)))

    def __getitem__(self, residue: str) -> float:
        try:
            return self.values[residue]
        except KeyError:
            raise KeyError(f"{residue!r} is not a standard residue (scale {self.name})") from None


@dataclass(frozen=True)
class PairScale:
    values: Mapping[tuple[str, str], float]
    provenance: str = ""

    def __post_init__(self):
        expected = {(x, y) for x in AMINO_ACIDS for y in AMINO_ACIDS}
        if set(self.values) != expected:
            raise ValueError("pair scale must cover all 400 ordered residue pairs")
        object.__setattr__(self, "values", MappingProxyType(dict(self.values)))

    def __getitem__(self, pair: tuple[str, str]) -> float:
        try:
            return self.values[pair]
        except KeyError:
            raise KeyError(f"no weight for dipeptide {pair!r}") from None

    def scaled(self, factor: float) -> "PairScale":
        return PairScale({k: v * factor for k, v in self.values.items()}, self.provenance)


@dataclass(frozen=True)
class PkaSet:
    n_terminus: float
    c_terminus: float
    side_chains: Mapping[str, float]
    provenance: str = ""

    def __post_init__(self):
        if set(self.side_chains) != set("DECYHKR"):
            raise ValueError("side-chain pKa set must cover D, E, C, Y, H, K, R")
        for v in (self.n_terminus, self.c_terminus, *self.side_chains.values()):
            if not 0.0 < v < 14.0:
                raise ValueError(f"pKa {v} outside (0, 14)")
        object.__setattr__(self, "side_chains", MappingProxyType(dict(self.side_chains)))


def _read_table(filename: str) -> tuple[str, list[list[str]]]:
    raw = resources.files("bcepi.tables").joinpath(filename).read_bytes()
    digest = hashlib.sha256(raw).hexdigest()
    if digest != _TABLE_SHA256[filename]:
        raise TableChecksumError(f"{filename}: sha256 {digest} does not match the recorded digest")
    comments, rows = [], []
    for line in raw.decode("utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            comments.append(line.lstrip("# "))
        else:
            rows.append(line.split())
    return "; ".join(comments), rows


def load_scale(filename: str, name: str) -> AminoAcidScale:
    provenance, rows = _read_table(filename)
    return AminoAcidScale(name, {r: float(v) for r, v in rows}, provenance)


def load_pair_scale(filename: str) -> PairScale:
    provenance, rows = _read_table(filename)
    return PairScale({(x, y): float(v) for x, y, v in rows}, provenance)


def load_pka_set(filename: str) -> PkaSet:
    provenance, rows = _read_table(filename)
    values = {k: float(v) for k, v in rows}
    return PkaSet(values.pop("N_term"), values.pop("C_term"), values, provenance)


CHOU_FASMAN = load_scale("chou_fasman_turn.txt", "chou_fasman")
EMINI = load_scale("emini_surface.txt", "emini")
KOLASKAR_TONGAONKAR = load_scale("kolaskar_tongaonkar.txt", "kolaskar_tongaonkar")
PARKER = load_scale("parker_hydrophilicity.txt", "parker")
KYTE_DOOLITTLE = load_scale("kyte_doolittle.txt", "kyte_doolittle")
DIWV = load_pair_scale("guruprasad_diwv.txt")
PKA = load_pka_set("pka_bjellqvist.txt")


def validate_sequence(raw: str) -> str:
    """Uppercase ``raw`` and check every character is a standard residue.

    Positions in :class:`IllegalResidue` are 0-based.
    """
    if not raw:
        raise EmptySequence()
    seq = raw.upper()
    for i, ch in enumerate(seq):
        if ch not in _ALPHABET:
            raise IllegalResidue(i, raw[i])
    return seq


def _window_coverage(length: int, window: int) -> list[int]:
    # number of length-`window` windows containing each position
    n_windows = length - window + 1
    return [min(i + 1, window, length - i, n_windows) for i in range(length)]


def windowed_mean_score(peptide: str, scale: AminoAcidScale, window: int) -> float:
    """Mean over all length-``w`` windows of the mean residue score, ``w = min(window, len)``.

    Computed as a residue-weighted average (each position weighted by the
    number of windows covering it), which equals the window-by-window mean
    and reproduces a uniform sequence's scale value exactly.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    seq = validate_sequence(peptide)
    w = min(window, len(seq))
    weights: Counter[str] = Counter()
    for residue, c in zip(seq, _window_coverage(len(seq), w)):
        weights[residue] += c
    total = w * (len(seq) - w + 1)
    return math.fsum(scale[r] * (c / total) for r, c in sorted(weights.items()))


def chou_fasman(peptide: str) -> float:
    return windowed_mean_score(peptide, CHOU_FASMAN, PEPTIDE_WINDOW)


def parker(peptide: str) -> float:
    """Parker hydrophilicity; positive values mean hydrophilic."""
    return windowed_mean_score(peptide, PARKER, PEPTIDE_WINDOW)


def kolaskar_tongaonkar(peptide: str) -> float:
    return windowed_mean_score(peptide, KOLASKAR_TONGAONKAR, PEPTIDE_WINDOW)


def emini(peptide: str) -> float:
    """Mean over windows of prod(surface probability) * 0.37**-w, w = min(6, len)."""
    seq = validate_sequence(peptide)
    w = min(EMINI_WINDOW, len(seq))
    norm = EMINI_NORMALIZER ** (-w)
    scores = [math.prod(EMINI[r] for r in seq[i:i + w]) * norm
              for i in range(len(seq) - w + 1)]
    return math.fsum(scores) / len(scores)


def net_charge(protein: str, pH: float, pka: PkaSet = PKA) -> float:
    """Henderson-Hasselbalch net charge of a linear chain at ``pH``."""
    seq = validate_sequence(protein)
    counts = Counter(seq)
    terms = [1.0 / (1.0 + 10.0 ** (pH - pka.n_terminus)),
             -1.0 / (1.0 + 10.0 ** (pka.c_terminus - pH))]
    for r in "HKR":
        if counts[r]:
            terms.append(counts[r] / (1.0 + 10.0 ** (pH - pka.side_chains[r])))
    for r in "DECY":
        if counts[r]:
            terms.append(-counts[r] / (1.0 + 10.0 ** (pka.side_chains[r] - pH)))
    return math.fsum(terms)


def isoelectric_point(protein: str, pka: PkaSet = PKA, tolerance: float = PI_TOLERANCE) -> float:
    """Bisect net charge on pH [0, 14] until the bracket is narrower than ``tolerance``."""
    seq = validate_sequence(protein)
    lo, hi = 0.0, 14.0
    q_lo, q_hi = net_charge(seq, lo, pka), net_charge(seq, hi, pka)
    if q_lo * q_hi > 0:
        raise NoCrossing(f"net charge has the same sign at pH 0 ({q_lo:.3g}) and 14 ({q_hi:.3g})")
    while hi - lo > tolerance:
        mid = 0.5 * (lo + hi)
        if net_charge(seq, mid, pka) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def aromaticity(protein: str) -> float:
    seq = validate_sequence(protein)
    return sum(seq.count(r) for r in "FWY") / len(seq)


def gravy(protein: str) -> float:
    """Grand average of Kyte-Doolittle hydropathy."""
    seq = validate_sequence(protein)
    n = len(seq)
    return math.fsum(KYTE_DOOLITTLE[r] * (c / n) for r, c in sorted(Counter(seq).items()))


def instability_index(protein: str, diwv: PairScale = DIWV) -> float:
    seq = validate_sequence(protein)
    if len(seq) < 2:
        raise SequenceTooShort(len(seq), 2)
    return 10.0 / len(seq) * math.fsum(diwv[seq[i], seq[i + 1]] for i in range(len(seq) - 1))


PEPTIDE_DESCRIPTORS = {
    "chou_fasman": chou_fasman,
    "emini": emini,
    "kolaskar_tongaonkar": kolaskar_tongaonkar,
    "parker": parker,
}
PROTEIN_DESCRIPTORS = {
    "isoelectric_point": isoelectric_point,
    "aromaticity": aromaticity,
    "hydrophobicity": gravy,
    "stability": instability_index,
}


def describe(peptide_seq: str, protein_seq: str) -> list[float]:
    """All eight descriptors in the fixed feature order."""
    values = {name: fn(peptide_seq) for name, fn in PEPTIDE_DESCRIPTORS.items()}
    values.update({name: fn(protein_seq) for name, fn in PROTEIN_DESCRIPTORS.items()})
    return [values[name] for name in FEATURE_NAMES]


def featurize(record: EpitopeRecord, mode: str = "passthrough") -> FeatureVector:
    """Build the model input for one record.

    ``passthrough`` copies the eight precomputed dataset columns;
    ``recompute`` derives them from ``peptide_seq`` and ``protein_seq``.
    """
    if mode == "passthrough":
        x = []
        for name in FEATURE_NAMES:
            value = getattr(record, name)
            if value is None:
                raise MissingColumn(name)
            x.append(float(value))
    elif mode == "recompute":
        x = describe(record.peptide_seq, record.protein_seq)
    else:
        raise ValueError(f"unknown feature mode {mode!r}; expected 'passthrough' or 'recompute'")
    return FeatureVector(tuple(x), record.target)
