import csv
import os
from pathlib import Path

import numpy as np
import pytest

from bcepi import seqfeat
from bcepi.dataset import COLUMNS

# first 200 residues of the SARS-CoV-2 spike glycoprotein
SPIKE_FRAGMENT = (
    "MFVFLVLLPLVSSQCVNLTTRTQLPPAYTNSFTRGVYYPDKVFRSSVLHSTQDLFLFLPFFSNVTWFHAIHVSGTNGTKRFDN"
    "PVLPFNDGVYFASTEKSNIIRGWIFGTTLDSKTQSLLIVNNATNVVIKVCEFQFCNDPFLGVYYHKNNKSWMESEFRVYSSAN"
    "NCTFEYVSQPFLMDLEGKQGNFKNLREFVFK"
)
AMINO_ACIDS = seqfeat.AMINO_ACIDS


def make_synthetic_rows(n_rows=1500, n_proteins=40, seed=7):
    """Epitope-like rows whose label depends mostly on protein descriptors.

    Descriptor columns are computed with bcepi.seqfeat, so passthrough and
    recompute agree on this corpus.
    """
    rng = np.random.default_rng(seed)
    proteins = []
    for _ in range(n_proteins):
        length = int(rng.integers(60, 240))
        probs = rng.dirichlet(np.full(20, 3.0))
        proteins.append("".join(rng.choice(list(AMINO_ACIDS), size=length, p=probs)))
    prot_feats = {p: [seqfeat.isoelectric_point(p), seqfeat.aromaticity(p)] for p in proteins}
    F = np.array(list(prot_feats.values()))
    mu, sd = F.mean(axis=0), F.std(axis=0)
    rows = []
    for i in range(n_rows):
        prot = proteins[int(rng.integers(n_proteins))]
        plen = int(rng.integers(5, 21))
        start = int(rng.integers(1, len(prot) - plen + 2))
        pep = prot[start - 1:start - 1 + plen]
        z = (np.array(prot_feats[prot]) - mu) / sd
        logit = 2.5 * z[0] + 1.5 * z[1] - 1.2 + 0.3 * rng.standard_normal()
        target = int(rng.random() < 1 / (1 + np.exp(-logit)))
        feats = seqfeat.describe(pep, prot)
        rows.append([f"P{proteins.index(prot):03d}", prot, start, start + plen - 1, pep,
                     *[repr(v) for v in feats], target])
    return rows


def write_rows(path, rows, header=COLUMNS):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


@pytest.fixture(scope="session")
def synthetic_rows():
    return make_synthetic_rows()


@pytest.fixture(scope="session")
def synthetic_csv(tmp_path_factory, synthetic_rows):
    return write_rows(tmp_path_factory.mktemp("data") / "synthetic.csv", synthetic_rows)


def real_dataset_path():
    """Combined B-cell + SARS CSV, if one is available locally.

    Looks at $BCEPI_DATA, then data/combined.csv, then concatenates
    data/input_bcell.csv and data/input_sars.csv.
    """
    env = os.environ.get("BCEPI_DATA")
    if env and Path(env).is_file():
        return Path(env)
    root = Path(__file__).resolve().parent.parent / "data"
    if (root / "combined.csv").is_file():
        return root / "combined.csv"
    parts = [root / "input_bcell.csv", root / "input_sars.csv"]
    if all(p.is_file() for p in parts):
        out = root / "combined.csv"
        with open(out, "w", newline="", encoding="utf-8") as dst:
            for k, p in enumerate(parts):
                with open(p, encoding="utf-8") as src:
                    lines = src.read().splitlines(keepends=True)
                dst.writelines(lines if k == 0 else lines[1:])
        return out
    return None


_ACCEPTANCE_LINES = []


class CriterionRecorder:
    """Prints and collects one PASS/FAIL line per acceptance criterion."""

    def __init__(self, label):
        self.label = label
        self.details = []

    def note(self, text):
        self.details.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = "; ".join(self.details)
        if exc is not None:
            detail = f"{detail}; {str(exc).splitlines()[0] if str(exc) else exc_type.__name__}".lstrip("; ")
        line = f"criterion {self.label}: {status}" + (f" ({detail})" if detail else "")
        print(line)
        _ACCEPTANCE_LINES.append(line)
        return False


@pytest.fixture
def criterion():
    return CriterionRecorder


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
