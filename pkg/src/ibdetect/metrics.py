"""Detection metrics and the disentanglement report."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import oracle
from .model import ModelParams, local_features

LOGLOSS_CLIP = 1e-7


def _pair(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.size == 0:
        raise ValueError("metrics need at least one score")
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores but {y.size} labels")
    return s, y.astype(np.int64)


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    s, y = _pair(scores, labels)
    return float(np.mean((s >= threshold).astype(np.int64) == y))


def auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    s, y = _pair(scores, labels)
    pos = y == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined unless both classes are present")
    ranks = rankdata(s, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def logloss(scores, labels) -> float:
    s, y = _pair(scores, labels)
    s = np.clip(s, LOGLOSS_CLIP, 1.0 - LOGLOSS_CLIP)
    return float(-np.mean(y * np.log(s) + (1 - y) * np.log(1.0 - s)))


def group_level_auc(scores, labels, group_ids) -> float:
    """AUC over per-group mean scores (video-level AUC from frame scores)."""
    s, y = _pair(scores, labels)
    g = np.asarray(group_ids).ravel()
    if g.shape != s.shape:
        raise ValueError(f"{g.size} group ids for {s.size} scores")
    groups, inverse = np.unique(g, return_inverse=True)
    counts = np.bincount(inverse)
    mean_scores = np.bincount(inverse, weights=s) / counts
    label_sum = np.bincount(inverse, weights=y)
    mixed = (label_sum != 0) & (label_sum != counts)
    if mixed.any():
        raise ValueError(f"groups with mixed labels: {groups[mixed][:5].tolist()}")
    return auc(mean_scores, (label_sum > 0).astype(np.int64))


def discretize_features(z: np.ndarray, bins: int = 2) -> tuple[np.ndarray, bool]:
    """Map a feature block to a small integer code (at most 4 states).

    Each dimension is split at its median into a bit. The bit matrix is
    projected onto its leading principal directions and cut again at the
    median: two directions with 2 bins each when ``bins == 2``, otherwise one
    direction cut into ``bins`` quantile bins. Returns ``(codes, degenerate)``;
    a constant block gives all-zero codes and ``degenerate=True``.
    """
    if bins not in (2, 3, 4):
        raise ValueError(f"bins must be 2, 3 or 4, got {bins}")
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] == 0:
        raise ValueError(f"need a (rows, dims) feature block, got shape {z.shape}")
    bits = (z > np.median(z, axis=0)).astype(np.float64)
    bits -= bits.mean(axis=0)
    if not np.any(bits):
        return np.zeros(z.shape[0], dtype=np.int64), True
    _, sv, vt = np.linalg.svd(bits, full_matrices=False)
    n_comp = 2 if bins == 2 else 1
    codes = np.zeros(z.shape[0], dtype=np.int64)
    for c in range(min(n_comp, vt.shape[0])):
        if sv[c] <= 1e-9 * sv[0]:
            break
        direction = vt[c]
        # fix the sign so codes do not depend on the SVD's arbitrary orientation
        pivot = np.argmax(np.abs(direction))
        direction = direction * np.sign(direction[pivot])
        proj = bits @ direction
        edges = np.quantile(proj, np.linspace(0, 1, (2 if bins == 2 else bins) + 1)[1:-1])
        codes = codes * (2 if bins == 2 else bins) + np.searchsorted(edges, proj, side="right")
    return codes, False


@dataclass
class DisentanglementReport:
    mi_matrix: np.ndarray
    label_mi: np.ndarray
    degenerate: list[bool]

    @property
    def mean_off_diagonal(self) -> float:
        n = self.mi_matrix.shape[0]
        off = self.mi_matrix[~np.eye(n, dtype=bool)]
        return float(off.mean())

    @property
    def mean_label_mi(self) -> float:
        return float(self.label_mi.mean())


def mi_report_from_features(features: list[np.ndarray], labels, bins: int = 2) -> DisentanglementReport:
    coded = [discretize_features(z, bins) for z in features]
    y = np.asarray(labels, dtype=np.int64)
    n = len(coded)
    mi = np.zeros((n, n))
    label_mi = np.zeros(n)
    for i, (ci, deg_i) in enumerate(coded):
        if deg_i:
            continue
        label_mi[i] = oracle.mutual_information(oracle.empirical_joint({"c": ci, "y": y}), "c", "y")
        for j in range(i, n):
            cj, deg_j = coded[j]
            if deg_j:
                continue
            if i == j:
                mi[i, i] = oracle.entropy(oracle.empirical_joint({"c": ci}), "c")
            else:
                joint = oracle.empirical_joint({"a": ci, "b": cj})
                mi[i, j] = mi[j, i] = oracle.mutual_information(joint, "a", "b")
    return DisentanglementReport(mi, label_mi, [deg for _, deg in coded])


def disentanglement_report(params: ModelParams, inputs, labels, bins: int = 2) -> DisentanglementReport:
    return mi_report_from_features(local_features(params, inputs), labels, bins)


@dataclass
class MetricsRecord:
    accuracy: float
    auc: float
    logloss: float
    group_auc: float | None = None
    mi_matrix: list[list[float]] | None = None
    label_mi: list[float] | None = None
    mean_off_diagonal_mi: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_scores(scores, labels, group_ids=None) -> MetricsRecord:
    return MetricsRecord(
        accuracy=accuracy(scores, labels),
        auc=auc(scores, labels),
        logloss=logloss(scores, labels),
        group_auc=None if group_ids is None else group_level_auc(scores, labels, group_ids),
    )
