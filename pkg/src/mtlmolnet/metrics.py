"""Classification metrics, correlation, PCA, and multi-run aggregation.

AUROC is the Mann-Whitney statistic: the probability that a random
positive outscores a random negative, ties counted one half. AUPRC is
average precision over positives in descending score order; ties keep
their input order under a stable descending sort, which is the documented
(and deterministic) convention since average precision is sensitive to it.

PCA uses deflated power iteration on the centered population covariance;
each component's sign is fixed so its largest-magnitude entry is positive.
"""

import csv
from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    pass


class SingleClass(MetricError):
    pass


class NoPositives(MetricError):
    pass


class ConstantInput(MetricError):
    pass


class ConvergenceFailure(RuntimeError):
    pass


def auroc(scores, labels):
    """Rank-based AUROC with average ranks for tied scores."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUROC needs both classes present")

    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        # average 1-based rank over the tie run [i, j]
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1

    rank_sum = ranks[labels == 1].sum()
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def auprc(scores, labels):
    """Average precision: sum over positives of precision-at-cut / n_pos.

    A cut sits at each distinct score value, so tied scores share one cut
    and every positive in the tie gets the block-boundary precision; with
    all scores equal this gives exactly prevalence. This matches the usual
    step-wise precision-recall area.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        raise NoPositives("AUPRC needs at least one positive")

    order = np.argsort(-scores, kind="stable")
    ordered = labels[order]
    sorted_scores = scores[order]
    ap = 0.0
    hits = 0
    i = 0
    n = len(order)
    while i < n:
        j = i
        while j + 1 < n and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        block_pos = int((ordered[i : j + 1] == 1).sum())
        hits += block_pos
        if block_pos:
            ap += block_pos * hits / (j + 1)
        i = j + 1
    return ap / n_pos


def pearson(x, y):
    """Sample Pearson correlation coefficient."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise MetricError(f"pearson: shape mismatch {x.shape} vs {y.shape}")
    if len(x) < 2:
        raise ConstantInput("pearson needs at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = np.sqrt((dx * dx).sum())
    sy = np.sqrt((dy * dy).sum())
    if sx == 0.0 or sy == 0.0:
        raise ConstantInput("pearson undefined for a constant vector")
    return float((dx * dy).sum() / (sx * sy))


@dataclass
class PcaResult:
    components: np.ndarray  # [d x k], orthonormal columns
    explained_variance: np.ndarray  # [k], non-increasing
    projected: np.ndarray  # [n x k]


def pca(X, k, tol=1e-10, max_iter=10000, seed=0):
    """Top-k principal axes of X via deflated power iteration.

    Eigenvalues of the centered population covariance become the explained
    variances. Iterates are re-orthogonalized against found components each
    step, so near-degenerate spectra still yield an orthonormal basis.
    """
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if n < 2:
        raise MetricError("pca needs at least two rows")
    if not (1 <= k <= min(n, d)):
        raise MetricError(f"pca: k={k} out of range for {n}x{d} data")

    Xc = X - X.mean(axis=0)
    cov = (Xc.T @ Xc) / n
    rng = np.random.default_rng(seed)

    components = np.zeros((d, k))
    variances = np.zeros(k)
    found = np.zeros((d, 0))
    for comp in range(k):
        v = rng.normal(size=d)
        v -= found @ (found.T @ v)
        norm = np.linalg.norm(v)
        if norm < 1e-12:  # pathological start; retry deterministically
            v = np.eye(d)[comp % d] - found @ (found.T @ np.eye(d)[comp % d])
            norm = np.linalg.norm(v)
        v /= norm
        lam = 0.0
        for it in range(max_iter):
            w = cov @ v
            w -= found @ (found.T @ w)
            wn = np.linalg.norm(w)
            if wn < 1e-300:
                lam = 0.0  # remaining spectrum is zero; keep current direction
                break
            w /= wn
            if w @ v < 0:
                w = -w
            delta = np.linalg.norm(w - v)
            v = w
            lam = float(v @ cov @ v)
            if delta < tol:
                break
        else:
            raise ConvergenceFailure(
                f"power iteration did not converge for component {comp} "
                f"within {max_iter} iterations"
            )
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        components[:, comp] = v
        variances[comp] = max(lam, 0.0)
        found = components[:, : comp + 1]
        cov = cov - variances[comp] * np.outer(v, v)

    return PcaResult(components=components, explained_variance=variances,
                     projected=Xc @ components)


@dataclass
class MetricsReport:
    """Per-task aggregation across runs: mean and population std."""

    rows: list  # (task, metric, mean, std)
    raw: dict  # task -> list of scores

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["task", "metric", "mean", "std"])
            for task, metric, mean, std in self.rows:
                writer.writerow([task, metric, repr(mean), repr(std)])

    def to_text(self):
        widths = [max(len(str(r[0])) for r in self.rows) if self.rows else 4, 6]
        lines = [f"{'task'.ljust(widths[0])}  metric  mean±std"]
        for task, metric, mean, std in self.rows:
            lines.append(f"{task.ljust(widths[0])}  {metric:<6}  {mean:.3f}±{std:.3f}")
        return "\n".join(lines)


def aggregate(runs, metrics=None):
    """Aggregate per-run {task: score} dicts into a MetricsReport.

    ``metrics`` optionally maps task -> metric name for the report rows.
    Runs where a task is missing or None are skipped for that task.
    """
    if not runs:
        raise MetricError("aggregate needs at least one run")
    tasks = []
    for run in runs:
        for task in run:
            if task not in tasks:
                tasks.append(task)
    rows = []
    raw = {}
    for task in tasks:
        vals = [run[task] for run in runs if run.get(task) is not None]
        raw[task] = vals
        name = (metrics or {}).get(task, "score")
        if vals:
            arr = np.asarray(vals, dtype=np.float64)
            rows.append((task, name, float(arr.mean()), float(arr.std())))
        else:
            rows.append((task, name, float("nan"), float("nan")))
    return MetricsReport(rows=rows, raw=raw)
