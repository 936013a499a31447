"""Evaluation: confusion matrices, per-class recall/precision/F1 with
weighted averages, row normalization, and agglomerative clustering of the
confusion rows (squared-Euclidean Ward criterion via the Lance-Williams
update)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import LabeledDataset
from .errors import ClassCountMismatch, EmptyDataset, InvalidK, ToolkitError
from .nn.model import Model

WEIGHTED_ROW = "__weighted_average__"


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (n, n) int64; rows = actual, columns = predicted
    classes: list[str]

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        n = len(self.classes)
        if self.counts.shape != (n, n):
            raise ToolkitError(f"confusion matrix shape {self.counts.shape} for {n} classes")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def predict_proba(model: Model, rows: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Forward uint8 rows through the model in inference mode."""
    outputs = []
    for start in range(0, len(rows), batch_size):
        xb = rows[start : start + batch_size].astype(np.float32) / 255.0
        outputs.append(model.forward(xb, train=False))
    return np.concatenate(outputs) if outputs else np.zeros((0, 0), dtype=np.float32)


def confusion(model: Model, test: LabeledDataset, batch_size: int = 256) -> ConfusionMatrix:
    """Argmax predictions tallied into counts[actual][predicted].

    Ties in the output distribution resolve to the lowest class index.
    """
    n = len(test.classes)
    if model.class_names is not None and len(model.class_names) != n:
        raise ClassCountMismatch(
            f"model has {len(model.class_names)} classes, dataset has {n}"
        )
    counts = np.zeros((n, n), dtype=np.int64)
    for start in range(0, len(test), batch_size):
        rows = test.rows[start : start + batch_size]
        labels = test.labels[start : start + batch_size]
        probs = predict_proba(model, rows, batch_size=batch_size)
        if probs.shape[1] != n:
            raise ClassCountMismatch(f"model outputs {probs.shape[1]} classes, dataset has {n}")
        predicted = probs.argmax(axis=1)
        np.add.at(counts, (labels, predicted), 1)
    return ConfusionMatrix(counts=counts, classes=list(test.classes))


@dataclass
class ClassMetrics:
    name: str
    tp: int
    fp: int
    fn: int
    support: int
    recall: float
    precision: float
    f1: float
    undefined: tuple[str, ...] = ()  # metrics whose denominator was zero


@dataclass
class MetricsReport:
    per_class: list[ClassMetrics]
    weighted_recall: float
    weighted_precision: float
    weighted_f1: float
    accuracy: float
    total: int


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Recall TP/(TP+FN), precision TP/(TP+FP), F1 = harmonic mean; weighted
    averages weight each class by its support.  Zero-denominator metrics are
    reported as 0 and flagged."""
    counts = cm.counts
    diag = np.diag(counts)
    row_sums = counts.sum(axis=1)
    col_sums = counts.sum(axis=0)
    per_class: list[ClassMetrics] = []
    for i, name in enumerate(cm.classes):
        tp = int(diag[i])
        fn = int(row_sums[i] - diag[i])
        fp = int(col_sums[i] - diag[i])
        undefined: list[str] = []
        if tp + fn > 0:
            recall = tp / (tp + fn)
        else:
            recall = 0.0
            undefined.append("recall")
        if tp + fp > 0:
            precision = tp / (tp + fp)
        else:
            precision = 0.0
            undefined.append("precision")
        if recall + precision > 0:
            f1 = 2.0 * recall * precision / (recall + precision)
        else:
            f1 = 0.0
            undefined.append("f1")
        per_class.append(
            ClassMetrics(
                name=name,
                tp=tp,
                fp=fp,
                fn=fn,
                support=int(row_sums[i]),
                recall=recall,
                precision=precision,
                f1=f1,
                undefined=tuple(undefined),
            )
        )
    total = int(counts.sum())
    if total:
        weights = row_sums / total
        weighted_recall = float(sum(w * m.recall for w, m in zip(weights, per_class)))
        weighted_precision = float(sum(w * m.precision for w, m in zip(weights, per_class)))
        weighted_f1 = float(sum(w * m.f1 for w, m in zip(weights, per_class)))
        accuracy = float(diag.sum() / total)
    else:
        weighted_recall = weighted_precision = weighted_f1 = accuracy = 0.0
    return MetricsReport(
        per_class=per_class,
        weighted_recall=weighted_recall,
        weighted_precision=weighted_precision,
        weighted_f1=weighted_f1,
        accuracy=accuracy,
        total=total,
    )


def row_normalize(cm: ConfusionMatrix) -> np.ndarray:
    """Scale each row to sum to 1; all-zero rows stay all-zero."""
    counts = cm.counts.astype(np.float64)
    sums = counts.sum(axis=1, keepdims=True)
    out = np.divide(counts, sums, out=np.zeros_like(counts), where=sums > 0)
    return out


# -- agglomerative clustering ------------------------------------------------


@dataclass
class Dendrogram:
    """Merge list in standard linkage encoding: leaves 0..n-1, the i-th merge
    creates node n+i; heights are the within-cluster sum-of-squares increase."""

    n_leaves: int
    merges: list[tuple[int, int, float]]
    members: dict[int, list[int]] = field(repr=False, default_factory=dict)

    @property
    def heights(self) -> list[float]:
        return [h for _, _, h in self.merges]

    def leaf_order(self) -> list[int]:
        if not self.merges:
            return list(range(self.n_leaves))

        def leaves(node: int) -> list[int]:
            if node < self.n_leaves:
                return [node]
            a, b, _ = self.merges[node - self.n_leaves]
            return leaves(a) + leaves(b)

        order: list[int] = []
        root = self.n_leaves + len(self.merges) - 1
        for leaf in leaves(root):
            order.append(leaf)
        # leaves never touched by a merge (k-truncated trees) keep index order
        seen = set(order)
        order += [i for i in range(self.n_leaves) if i not in seen]
        return order

    def cut(self, k: int) -> list[list[int]]:
        """Group assignment after merging down to k clusters."""
        if not 1 <= k <= self.n_leaves:
            raise InvalidK(f"k={k} not in 1..{self.n_leaves}")
        parent = list(range(self.n_leaves + len(self.merges)))

        def find(i: int) -> int:
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for step in range(self.n_leaves - k):
            a, b, _ = self.merges[step]
            node = self.n_leaves + step
            parent[find(a)] = node
            parent[find(b)] = node
        groups: dict[int, list[int]] = {}
        for leaf in range(self.n_leaves):
            groups.setdefault(find(leaf), []).append(leaf)
        return sorted(groups.values(), key=lambda g: g[0])


def ward_dendrogram(rows: np.ndarray) -> Dendrogram:
    """Agglomerative clustering over the rows.

    At every step the pair of clusters whose merge least increases the total
    within-cluster sum of squares is joined; distances are maintained with
    the Lance-Williams update ((s_a+s_c)d_ac + (s_b+s_c)d_bc - s_c*d_ab) /
    (s_a+s_b+s_c), seeded with half the squared Euclidean distances so that
    every height equals the sum-of-squares increase of that merge.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ToolkitError(f"expected a matrix of row vectors, got shape {rows.shape}")
    n = rows.shape[0]
    dist: dict[tuple[int, int], float] = {}
    for i in range(n):
        for j in range(i + 1, n):
            diff = rows[i] - rows[j]
            dist[(i, j)] = 0.5 * float(diff @ diff)
    sizes = {i: 1 for i in range(n)}
    members = {i: [i] for i in range(n)}
    active = list(range(n))
    merges: list[tuple[int, int, float]] = []
    next_id = n
    last_height = -math.inf
    while len(active) > 1:
        best = None
        for ai, a in enumerate(active):
            for b in active[ai + 1 :]:
                d = dist[(a, b)]
                if best is None or d < best[0]:
                    best = (d, a, b)
        height, a, b = best  # type: ignore[misc]
        if height < last_height - 1e-9:
            raise ToolkitError("non-monotone merge heights; clustering state corrupt")
        last_height = max(last_height, height)
        sa, sb = sizes[a], sizes[b]
        for c in active:
            if c in (a, b):
                continue
            sc = sizes[c]
            dac = dist[tuple(sorted((a, c)))]
            dbc = dist[tuple(sorted((b, c)))]
            merged = ((sa + sc) * dac + (sb + sc) * dbc - sc * height) / (sa + sb + sc)
            dist[(c, next_id) if c < next_id else (next_id, c)] = merged
        merges.append((a, b, height))
        sizes[next_id] = sa + sb
        members[next_id] = members[a] + members[b]
        active = [c for c in active if c not in (a, b)] + [next_id]
        next_id += 1
    return Dendrogram(n_leaves=n, merges=merges, members=members)


def cluster_confusion(normalized: np.ndarray, k: int) -> tuple[Dendrogram, list[list[int]]]:
    """Cluster row-normalized confusion rows and cut into k groups."""
    normalized = np.asarray(normalized, dtype=np.float64)
    if normalized.ndim != 2 or normalized.shape[0] != normalized.shape[1]:
        raise ToolkitError(f"expected a square matrix, got {normalized.shape}")
    if not 1 <= k <= normalized.shape[0]:
        raise InvalidK(f"k={k} not in 1..{normalized.shape[0]}")
    dendrogram = ward_dendrogram(normalized)
    return dendrogram, dendrogram.cut(k)


# -- report files -------------------------------------------------------------


def metrics_csv(report: MetricsReport) -> str:
    lines = ["class,recall,precision,f1,support"]
    for m in report.per_class:
        lines.append(f"{m.name},{m.recall:.6f},{m.precision:.6f},{m.f1:.6f},{m.support}")
    lines.append(
        f"{WEIGHTED_ROW},{report.weighted_recall:.6f},{report.weighted_precision:.6f},"
        f"{report.weighted_f1:.6f},{report.total}"
    )
    return "\n".join(lines) + "\n"


def confusion_csv(cm: ConfusionMatrix) -> str:
    header = "," + ",".join(cm.classes)
    lines = [header]
    for name, row in zip(cm.classes, cm.counts):
        lines.append(name + "," + ",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def parse_confusion_csv(text: str) -> ConfusionMatrix:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise ToolkitError("empty confusion matrix file")
    classes = lines[0].split(",")[1:]
    counts = []
    for line in lines[1:]:
        cells = line.split(",")
        counts.append([int(v) for v in cells[1:]])
    return ConfusionMatrix(counts=np.array(counts, dtype=np.int64), classes=classes)


def dendrogram_lines(dendrogram: Dendrogram) -> str:
    return "".join(f"{a} {b} {h!r}\n" for a, b, h in dendrogram.merges)


def format_metrics_table(report: MetricsReport) -> str:
    width = max([len(m.name) for m in report.per_class] + [len("weighted average")])
    lines = [f"{'class':<{width}}  {'recall':>8}  {'precision':>9}  {'f1':>8}  {'support':>8}"]
    for m in report.per_class:
        lines.append(
            f"{m.name:<{width}}  {m.recall:>8.4f}  {m.precision:>9.4f}  "
            f"{m.f1:>8.4f}  {m.support:>8}"
        )
    lines.append(
        f"{'weighted average':<{width}}  {report.weighted_recall:>8.4f}  "
        f"{report.weighted_precision:>9.4f}  {report.weighted_f1:>8.4f}  {report.total:>8}"
    )
    lines.append(f"overall accuracy: {report.accuracy:.4f}")
    return "\n".join(lines)


def write_report(
    report: MetricsReport,
    cm: ConfusionMatrix,
    out_dir: str | Path,
    dendrogram: Optional[Dendrogram] = None,
) -> dict[str, Path]:
    """Write the evaluation bundle; refuses to report on an empty test set."""
    if report.total == 0:
        raise EmptyDataset("refusing to write a report for an empty evaluation set")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "metrics": out / "metrics.csv",
        "confusion": out / "confusion.csv",
    }
    paths["metrics"].write_text(metrics_csv(report), encoding="utf-8")
    paths["confusion"].write_text(confusion_csv(cm), encoding="utf-8")
    if dendrogram is not None:
        paths["dendrogram"] = out / "dendrogram.txt"
        paths["dendrogram"].write_text(dendrogram_lines(dendrogram), encoding="utf-8")
    return paths
