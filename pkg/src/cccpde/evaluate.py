"""Classification and uncertainty evaluation.

ROC curves sweep the unique scores with half-credit on ties, so the area
matches the rank-based pair-counting statistic exactly. Credible-interval
filtering partitions samples once and the same retained set is applied to
every scorer, keeping before/after curves comparable across models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bayes import UncertaintyReport
from .errors import DomainError, ShapeError
from .numerics import logsumexp

NO_SUPPORT = -1  # classification outcome when every class has zero density


@dataclass(frozen=True)
class RocCurve:
    """Threshold sweep (score >= threshold predicts positive) plus its area."""

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> RocCurve:
    """ROC over unique score thresholds; trapezoid area, ties get half credit."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ShapeError(
            f"scores {scores.shape} and labels {labels.shape} must be equal 1-D")
    pos_total = int(np.sum(labels == 1))
    neg_total = int(np.sum(labels == 0))
    if pos_total == 0 or neg_total == 0:
        raise DomainError("ROC needs at least one sample of each class")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = (labels[order] == 1).astype(np.float64)
    # group indices where a run of tied scores ends
    ends = np.nonzero(np.diff(sorted_scores))[0]
    ends = np.concatenate([ends, [scores.size - 1]])
    cum_tp = np.cumsum(sorted_pos)[ends]
    cum_fp = (ends + 1.0) - cum_tp
    tpr = np.concatenate([[0.0], cum_tp / pos_total])
    fpr = np.concatenate([[0.0], cum_fp / neg_total])
    thresholds = np.concatenate([[np.inf], sorted_scores[ends]])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) * 0.5))
    return RocCurve(fpr, tpr, thresholds, auc)


def ratio_test_classify(log_densities: np.ndarray,
                        log_priors: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    """Prior-weighted maximum-likelihood classification.

    Returns (predictions, scores). Rows where every class has zero density
    get the NO_SUPPORT outcome instead of an arbitrary class. For binary
    problems the score is the log odds (class 1 minus class 0); it is nan
    on NO_SUPPORT rows. Ties break toward the lower class index.
    """
    log_densities = np.atleast_2d(np.asarray(log_densities, dtype=np.float64))
    log_priors = np.asarray(log_priors, dtype=np.float64).reshape(-1)
    if log_densities.shape[1] != log_priors.size:
        raise ShapeError(
            f"{log_densities.shape[1]} classes of densities vs "
            f"{log_priors.size} priors")
    adjusted = log_densities + log_priors[None, :]
    predictions = np.argmax(adjusted, axis=1).astype(np.int64)
    no_support = np.all(np.isneginf(adjusted), axis=1)
    predictions[no_support] = NO_SUPPORT
    scores = None
    if log_priors.size == 2:
        with np.errstate(invalid="ignore"):
            scores = adjusted[:, 1] - adjusted[:, 0]
        scores[no_support] = np.nan
    return predictions, scores


def filter_by_uncertainty(reports: list[UncertaintyReport],
                          threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Partition sample indices by credible-interval range, stable order.

    Samples whose interval range exceeds the threshold are rejected.
    """
    if threshold <= 0:
        raise DomainError(f"threshold must be positive, got {threshold}")
    ranges = np.array([r.interval_range for r in reports])
    retained = np.nonzero(ranges <= threshold)[0]
    rejected = np.nonzero(ranges > threshold)[0]
    return retained, rejected


def filtered_roc_comparison(labels: np.ndarray,
                            scores_by_scorer: dict[str, np.ndarray],
                            reports: list[UncertaintyReport],
                            threshold: float,
                            ) -> tuple[dict[str, tuple[RocCurve, RocCurve]],
                                       np.ndarray, np.ndarray]:
    """Full vs retained ROC per scorer, under one shared retained set.

    The retained set comes from the credible intervals alone, so every
    scorer is filtered identically.
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    if len(reports) != n:
        raise ShapeError(f"{len(reports)} reports for {n} labels")
    for name, scores in scores_by_scorer.items():
        if np.asarray(scores).shape[0] != n:
            raise ShapeError(
                f"scorer {name!r} has {np.asarray(scores).shape[0]} scores "
                f"for {n} labels")
    retained, rejected = filter_by_uncertainty(reports, threshold)
    curves = {}
    for name, scores in scores_by_scorer.items():
        scores = np.asarray(scores, dtype=np.float64)
        curves[name] = (roc_auc(scores, labels),
                        roc_auc(scores[retained], labels[retained]))
    return curves, retained, rejected


def in_set_score(model, x: np.ndarray) -> np.ndarray:
    """Maximum per-class log-density; high for supported points."""
    return model.log_densities(x).max(axis=1)


def density_grid(model, bounds: tuple[float, float, float, float],
                 resolution: int):
    """Per-class and prior-weighted total log-densities on a 2-D grid.

    Returns (x grid, y grid, points, per-class log-densities, total
    log-density); point rows vary x fastest.
    """
    if model.dim != 2:
        raise DomainError(f"density grids need a 2-D model, got dim {model.dim}")
    if resolution < 2:
        raise DomainError(f"resolution must be >= 2, got {resolution}")
    x_min, x_max, y_min, y_max = bounds
    if not (x_max > x_min and y_max > y_min):
        raise DomainError(f"degenerate bounds {bounds}")
    xs = np.linspace(x_min, x_max, resolution)
    ys = np.linspace(y_min, y_max, resolution)
    points = np.column_stack([np.tile(xs, resolution), np.repeat(ys, resolution)])
    log_d = model.log_densities(points)
    with np.errstate(divide="ignore"):
        log_priors = np.log(model.class_priors)
    total = logsumexp(log_d + log_priors[None, :], axis=1)
    return xs, ys, points, log_d, total


# -- CSV export ---------------------------------------------------------------


def write_roc_csv(curve: RocCurve, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("fpr,tpr,threshold\n")
        for f, t, thr in zip(curve.fpr, curve.tpr, curve.thresholds):
            fh.write(f"{float(f)!r},{float(t)!r},{float(thr)!r}\n")


def write_reports_csv(path, labels, score_ffnn, score_sigmoid,
                      log_densities, reports: list[UncertaintyReport]) -> None:
    labels = np.asarray(labels)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("index,label,score_ffnn,score_sigmoid,"
                 "logp_class0,logp_class1,post_mean,ci_lo,ci_hi,abstain\n")
        for i, report in enumerate(reports):
            fh.write(
                f"{i},{int(labels[i])},{float(score_ffnn[i])!r},"
                f"{float(score_sigmoid[i])!r},"
                f"{float(log_densities[i, 0])!r},{float(log_densities[i, 1])!r},"
                f"{float(report.mean)!r},{float(report.interval[0])!r},"
                f"{float(report.interval[1])!r},{int(report.abstain)}\n")


def write_density_grid_csv(path, xs, ys, log_d, total) -> None:
    n_classes = log_d.shape[1]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        cols = ",".join(f"logp_{k}" for k in range(n_classes))
        fh.write(f"x,y,{cols},logp_total\n")
        idx = 0
        for y in ys:
            for x in xs:
                row = ",".join(repr(float(v)) for v in log_d[idx])
                fh.write(f"{float(x)!r},{float(y)!r},{row},"
                         f"{float(total[idx])!r}\n")
                idx += 1
