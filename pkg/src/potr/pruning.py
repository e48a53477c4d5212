"""Iterative splat removal driven by exact per-splat MSE impact.

Each iteration re-renders the current model against the fixed reference
targets, scores every splat by the MSE change its removal would cause, and
removes a batch whose total importance stays within a per-iteration budget.
Re-scoring between iterations keeps the additive approximation of joint
removal honest.
"""

from dataclasses import dataclass, field

import numpy as np

from .rasterizer import compute_delta_mse


@dataclass
class PruneConfig:
    delta_mse_max: float          # eligibility threshold on the removal effect
    a: float = 10.0               # removal-order shape parameter
    iterations: int = 48

    def __post_init__(self):
        if self.delta_mse_max <= 0:
            raise ValueError("delta_mse_max must be > 0")
        if self.a <= 0:
            raise ValueError("a must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass
class PruneIterationReport:
    iteration: int
    budget: float
    removed: int
    removed_importance: float
    cumulative_removed_importance: float
    splats_before: int
    splats_after: int
    mse: float
    removed_ids: np.ndarray = field(repr=False, default=None)

    def to_dict(self):
        return {
            "iteration": self.iteration,
            "budget": self.budget,
            "removed": self.removed,
            "removed_importance": self.removed_importance,
            "cumulative_removed_importance": self.cumulative_removed_importance,
            "splats_before": self.splats_before,
            "splats_after": self.splats_after,
            "mse": self.mse,
        }


def mapping_m(x, a=10.0):
    """Removal-priority mapping: identity for x >= 0, square-root discounted
    magnitude for x < 0 so that improving removals rank ahead of equally sized
    degrading ones. m(x) = (sqrt(1 - 2 a x) - 1) / a on the negative branch.
    """
    x = np.asarray(x, dtype=np.float64)
    xn = np.minimum(x, 0.0)
    neg = (np.sqrt(1.0 - 2.0 * a * xn) - 1.0) / a
    out = np.where(x >= 0.0, x, neg)
    return float(out) if out.ndim == 0 else out


def compute_budget(delta_mse, importance, delta_mse_max, remaining_iterations):
    """Importance mass allowed to be removed this iteration: the eligible
    splats' total importance spread over the remaining iterations."""
    if remaining_iterations < 1:
        raise ValueError("remaining_iterations must be >= 1")
    delta_mse = np.asarray(delta_mse, dtype=np.float64)
    importance = np.asarray(importance, dtype=np.float64)
    eligible = delta_mse < delta_mse_max
    return float(importance[eligible].sum() / remaining_iterations)


def removal_order(delta_mse, delta_mse_max, a=10.0):
    """All splat indices sorted by ascending removal score (ties by index)."""
    scores = mapping_m(np.asarray(delta_mse, dtype=np.float64) / delta_mse_max, a)
    return np.argsort(scores, kind="stable")


def select_removal_set(delta_mse, importance, budget, delta_mse_max, a=10.0):
    """Pick the removal set for one iteration.

    Eligible splats (delta MSE below the threshold) are taken in ascending
    score order until their cumulative importance crosses the budget; the
    crossing splat is included. Zero-importance splats cost nothing and are
    always swept regardless of the budget.
    """
    delta_mse = np.asarray(delta_mse, dtype=np.float64)
    importance = np.asarray(importance, dtype=np.float64)
    cand = np.nonzero(delta_mse < delta_mse_max)[0]
    if len(cand) == 0:
        return np.empty(0, dtype=np.int64)
    scores = mapping_m(delta_mse[cand] / delta_mse_max, a)
    cand = cand[np.argsort(scores, kind="stable")]

    imp = importance[cand]
    positive = imp > 0.0
    take = ~positive
    if budget > 0.0:
        cum = np.cumsum(np.where(positive, imp, 0.0))
        crossed = np.nonzero(cum >= budget)[0]
        cut = int(crossed[0]) if len(crossed) else len(cand) - 1
        take = take.copy()
        take[:cut + 1] = True
    return np.sort(cand[take])


def run_pruning(splats, cameras, targets, config: PruneConfig, threads=1,
                report_sink=None, first_iteration=1, last_iteration=None):
    """Run the iterative controller.

    Returns (pruned splats, kept original indices, iteration reports). Stops
    early once no splat is eligible. report_sink, when given, receives each
    report dict as it is produced. first_iteration/last_iteration run a
    sub-range of the schedule (budgets still spread over the full horizon),
    letting the caller interleave other work between iterations.
    """
    if last_iteration is None:
        last_iteration = config.iterations
    current = splats
    kept = np.arange(len(splats), dtype=np.int64)
    reports = []
    cum_removed_importance = 0.0

    for it in range(first_iteration, last_iteration + 1):
        stats = compute_delta_mse(current, cameras, targets, threads=threads)
        eligible = stats.delta_mse < config.delta_mse_max
        if not eligible.any():
            break
        remaining = config.iterations - it + 1
        budget = compute_budget(stats.delta_mse, stats.importance,
                                config.delta_mse_max, remaining)
        sel = select_removal_set(stats.delta_mse, stats.importance, budget,
                                 config.delta_mse_max, config.a)
        removed_importance = float(stats.importance[sel].sum())
        cum_removed_importance += removed_importance
        report = PruneIterationReport(
            iteration=it,
            budget=budget,
            removed=len(sel),
            removed_importance=removed_importance,
            cumulative_removed_importance=cum_removed_importance,
            splats_before=len(current),
            splats_after=len(current) - len(sel),
            mse=stats.mse,
            removed_ids=kept[sel],
        )
        reports.append(report)
        if report_sink is not None:
            report_sink(report.to_dict())
        if len(sel) == 0:
            continue
        mask = np.ones(len(current), dtype=bool)
        mask[sel] = False
        current = current.subset(mask)
        kept = kept[mask]
    return current, kept, reports


def run_pruning_to_counts(splats, cameras, targets, cumulative_counts,
                          delta_mse_max, a=10.0, threads=1):
    """Rate-sweep variant: remove fixed batch sizes instead of budgeted mass.

    cumulative_counts is an increasing list of total-removed targets; one
    re-scoring pass runs per entry and the lowest-score splats fill the batch.
    Returns the kept original indices after each checkpoint.
    """
    current = splats
    kept = np.arange(len(splats), dtype=np.int64)
    checkpoints = []
    removed = 0
    for target in cumulative_counts:
        batch = min(target, len(splats)) - removed
        if batch > 0:
            stats = compute_delta_mse(current, cameras, targets, threads=threads)
            order = removal_order(stats.delta_mse, delta_mse_max, a)
            sel = np.sort(order[:batch])
            mask = np.ones(len(current), dtype=bool)
            mask[sel] = False
            current = current.subset(mask)
            kept = kept[mask]
            removed = target
        checkpoints.append(kept.copy())
    return checkpoints


def importance_baseline_keep(importance, remove_count):
    """Reference policy: drop the remove_count lowest-importance splats in one
    shot; returns the kept indices."""
    order = np.argsort(np.asarray(importance, dtype=np.float64), kind="stable")
    return np.sort(order[remove_count:])
