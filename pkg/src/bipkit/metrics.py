"""Embedding-level BIP metrics and pair-verification protocols.

Protocols follow the usual ten-fold verification layout: a pair list of
(a, b, genuine/impostor, fold) rows scored by cosine similarity. R-R scores
real against real, V-V virtual against virtual and R-V real against
virtual. An R-V list holds only impostor pairs, so it reports FAR alone.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math

import numpy as np

from .errors import EmptyScores, IndexOutOfRange, MissingFolds
from .store import as_matrix, canonical_pair_dot, count_at_least, row_max_cosine

PROTOCOLS = ("R-R", "V-V", "R-V")


@dataclasses.dataclass(frozen=True)
class BipMetrics:
    non_collision_pct: float
    inter_sep_pct: float
    n_virtual: int
    n_gallery: int
    tau: float
    gallery_offenders: list = dataclasses.field(default_factory=list)
    virtual_pair_violations: int = 0

    @property
    def passed(self):
        return self.non_collision_pct == 100.0 and self.inter_sep_pct == 100.0

    def to_dict(self):
        return dataclasses.asdict(self) | {"passed": self.passed}

    def table(self):
        return "\n".join([
            f"{'metric':<16}{'value':>10}",
            f"{'Non-Collision':<16}{self.non_collision_pct:>9.2f}%",
            f"{'Inter-Sep':<16}{self.inter_sep_pct:>9.2f}%",
            f"{'N (virtual)':<16}{self.n_virtual:>10d}",
            f"{'M (gallery)':<16}{self.n_gallery:>10d}",
            f"{'tau':<16}{self.tau:>10.4f}",
        ])


def _pct(good, total):
    return 100.0 if total == 0 else 100.0 * good / total


def non_collision_rate(virtual_set, gallery, tau, workers=None):
    """Percent of virtual rows whose max cosine to every gallery row is < tau."""
    V, G = as_matrix(virtual_set), as_matrix(gallery)
    if V.count == 0 or G.count == 0:
        return 100.0
    best, _ = row_max_cosine(V.data, G, workers)
    return _pct(int(np.count_nonzero(best < tau)), V.count)


def inter_sep_rate(virtual_set, tau, workers=None, sample=None, seed=0):
    """Percent of unordered virtual pairs with cos < tau.

    Exact over all N(N-1)/2 pairs unless ``sample`` (a number of random pairs)
    is given, which is a preview mode only.
    """
    V = as_matrix(virtual_set)
    n = V.count
    total = n * (n - 1) // 2
    if total == 0:
        return 100.0
    if sample is not None:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, size=sample)
        j = (i + rng.integers(1, n, size=sample)) % n
        c = canonical_pair_dot(V.data[i], V.data[j])
        return _pct(int(np.count_nonzero(c < tau)), sample)
    bad = count_at_least(V, None, tau, workers=workers, triangular=True)
    return _pct(total - bad, total)


def bip_metrics(virtual_set, gallery, tau, workers=None, max_offenders=20):
    V, G = as_matrix(virtual_set), as_matrix(gallery)
    offenders = []
    nc = 100.0
    if V.count and G.count:
        best, arg = row_max_cosine(V.data, G, workers)
        bad = np.flatnonzero(~(best < tau))
        nc = _pct(V.count - bad.size, V.count)
        offenders = [(int(j), int(arg[j]), float(best[j])) for j in bad[:max_offenders]]
    n = V.count
    total = n * (n - 1) // 2
    bad_pairs = count_at_least(V, None, tau, workers=workers, triangular=True) if total else 0
    return BipMetrics(nc, _pct(total - bad_pairs, total), n, G.count, float(tau),
                      offenders, int(bad_pairs))


# ---------------------------------------------------------------------------
# pair protocols


@dataclasses.dataclass
class PairList:
    a_index: np.ndarray
    b_index: np.ndarray
    genuine: np.ndarray
    folds: np.ndarray | None = None

    def __post_init__(self):
        self.a_index = np.asarray(self.a_index, dtype=np.int64)
        self.b_index = np.asarray(self.b_index, dtype=np.int64)
        self.genuine = np.asarray(self.genuine, dtype=bool)
        n = self.a_index.size
        if self.b_index.size != n or self.genuine.size != n:
            raise ValueError("pair list columns differ in length")
        if self.folds is not None:
            self.folds = np.asarray(self.folds, dtype=np.int64)
            if self.folds.size != n:
                raise ValueError("fold column length differs from pair count")

    def __len__(self):
        return self.a_index.size

    @classmethod
    def read_csv(cls, path):
        a, b, g, f = [], [], [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                a.append(int(row["a_index"]))
                b.append(int(row["b_index"]))
                lab = row["label"].strip().upper()
                if lab not in ("G", "I"):
                    raise ValueError(f"label must be G or I (got {row['label']!r})")
                g.append(lab == "G")
                fold = (row.get("fold") or "").strip()
                f.append(int(fold) if fold else None)
        if any(x is None for x in f):
            if not all(x is None for x in f):
                raise MissingFolds("fold column is only partly filled")
            folds = None
        else:
            folds = f
        return cls(a, b, g, folds)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["a_index", "b_index", "label", "fold"])
            for k in range(len(self)):
                fold = "" if self.folds is None else int(self.folds[k])
                w.writerow([int(self.a_index[k]), int(self.b_index[k]),
                            "G" if self.genuine[k] else "I", fold])
        return path


@dataclasses.dataclass(frozen=True)
class ProtocolReport:
    protocol: str
    threshold_used: float
    accuracy: float | None = None
    far: float | None = None
    per_fold: list | None = None

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)


def calibrate_threshold(genuine_scores, target_tar):
    """Largest theta with share(scores >= theta) >= target_tar.

    That theta is always an observed score: the k-th largest with
    k = ceil(target_tar * n). No interpolation.
    """
    x = np.sort(np.asarray(genuine_scores, dtype=np.float64))
    n = x.size
    if n == 0:
        raise EmptyScores("no genuine scores to calibrate on")
    if not 0.0 < target_tar <= 1.0:
        raise ValueError(f"target TAR must lie in (0, 1] (got {target_tar})")
    k = min(n, max(1, math.ceil(target_tar * n - 1e-9)))
    return float(x[n - k])


def pair_scores(embeddings_a, embeddings_b, pair_list):
    A, B = as_matrix(embeddings_a), as_matrix(embeddings_b)
    pl = pair_list
    for name, idx, m in (("a", pl.a_index, A), ("b", pl.b_index, B)):
        if idx.size and (idx.min() < 0 or idx.max() >= m.count):
            raise IndexOutOfRange(f"{name}_index outside [0, {m.count})")
    return canonical_pair_dot(A.data[pl.a_index], B.data[pl.b_index])


def _confusion(scores, genuine, theta):
    pred = scores >= theta
    acc = float(np.mean(pred == genuine)) if scores.size else None
    imp = ~genuine
    far = float(np.mean(pred[imp])) if imp.any() else None
    return acc, far


def evaluate_pairs(embeddings_a, embeddings_b, pair_list, threshold=None, tar=None,
                   protocol="R-R", calibration_scores=None):
    """Score a pair list and report accuracy and FAR (percent).

    Give either a fixed ``threshold`` or a ``tar``. With ``tar`` each fold is
    thresholded at the value calibrated on the genuine scores of the other
    folds (or on ``calibration_scores`` when the list has no genuine pairs,
    as for R-V); the summary averages the per-fold figures. R-V reports FAR
    only.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"protocol must be one of {PROTOCOLS} (got {protocol!r})")
    if (threshold is None) == (tar is None):
        raise ValueError("give exactly one of threshold or tar")
    scores = pair_scores(embeddings_a, embeddings_b, pair_list)
    genuine = pair_list.genuine
    far_only = protocol == "R-V"

    def pct(x):
        return None if x is None else 100.0 * x

    if threshold is not None:
        acc, far = _confusion(scores, genuine, threshold)
        return ProtocolReport(protocol, float(threshold),
                              None if far_only else pct(acc), pct(far))

    if pair_list.folds is None:
        raise MissingFolds("folded calibration needs fold labels in the pair list")
    per_fold = []
    for f in np.unique(pair_list.folds):
        test = pair_list.folds == f
        train_gen = scores[~test & genuine]
        if train_gen.size:
            theta = calibrate_threshold(train_gen, tar)
        elif calibration_scores is not None:
            theta = calibrate_threshold(calibration_scores, tar)
        else:
            raise EmptyScores(f"no genuine scores outside fold {f} to calibrate on")
        acc, far = _confusion(scores[test], genuine[test], theta)
        per_fold.append({"fold": int(f), "threshold": theta,
                         "accuracy": None if far_only else pct(acc), "far": pct(far)})
    thetas = [p["threshold"] for p in per_fold]
    fars = [p["far"] for p in per_fold if p["far"] is not None]
    accs = [p["accuracy"] for p in per_fold if p["accuracy"] is not None]
    return ProtocolReport(
        protocol,
        float(np.mean(thetas)),
        None if far_only or not accs else float(np.mean(accs)),
        float(np.mean(fars)) if fars else None,
        per_fold,
    )
