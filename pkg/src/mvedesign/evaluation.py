"""Designed-versus-random evaluation of surrogate training subsets.

The harness trains a weighted k-nearest-neighbor surrogate on the subset a
selector picked, scores it on a held-out validation split, and reports the
percent improvement over equally sized random subsets, with a bootstrap
standard deviation over replicates.  All randomness is derived from the
plan seed, so the full report is reproducible record for record.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array

from .design import Design, make_selector
from .features import FeatureMatrix, minmax_apply, minmax_fit, normalize_features
from .seeding import derive_rng

_EXACT_MATCH = 1e-12
_BOOTSTRAP_RESAMPLES = 1000


@dataclass(frozen=True)
class SplitPlan:
    """Frozen split of corpus ids into validation and candidate pool."""

    validation_ids: tuple
    pool_ids: tuple
    fractions: tuple = (0.10, 0.25, 0.50)
    replicates: int = 10
    seed: int = 0


def split_pool(ids, grain_sizes, val_fraction: float, seed: int = 0,
               fractions=(0.10, 0.25, 0.50), replicates: int = 10) -> SplitPlan:
    """Seeded validation/pool split, stratified so every grain size
    appears on both sides.

    The total validation count is ``round(val_fraction * N)``; it is
    apportioned across size groups by largest remainder with at least one
    id per group.
    """
    ids = list(ids)
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must lie in (0, 1)")
    sizes = [grain_sizes[i] for i in ids]
    groups: dict = {}
    for i, size in zip(ids, sizes):
        groups.setdefault(size, []).append(i)
    target_total = round(val_fraction * len(ids))
    if target_total < len(groups) or len(ids) - target_total < len(groups):
        raise ValueError(
            f"val_fraction {val_fraction} cannot stratify {len(ids)} ids "
            f"over {len(groups)} grain sizes"
        )
    thin = [size for size, members in groups.items() if len(members) < 2]
    if thin:
        raise ValueError(
            f"grain sizes {sorted(thin)} have a single id and cannot appear "
            f"in both validation and pool"
        )
    keys = sorted(groups)
    quotas = np.array([val_fraction * len(groups[k]) for k in keys])
    counts = np.maximum(1, np.floor(quotas).astype(int))
    counts = np.minimum(counts, [len(groups[k]) - 1 for k in keys])
    while counts.sum() != target_total:
        remainders = quotas - counts
        if counts.sum() < target_total:
            room = counts < np.array([len(groups[k]) - 1 for k in keys])
            pick = int(np.argmax(np.where(room, remainders, -np.inf)))
            counts[pick] += 1
        else:
            room = counts > 1
            pick = int(np.argmin(np.where(room, remainders, np.inf)))
            counts[pick] -= 1
    rng = derive_rng(seed, "split")
    validation: list = []
    pool: list = []
    for key, take in zip(keys, counts):
        members = sorted(groups[key])
        order = rng.permutation(len(members))
        validation.extend(members[i] for i in order[:take])
        pool.extend(members[i] for i in order[take:])
    return SplitPlan(tuple(sorted(validation)), tuple(sorted(pool)),
                     tuple(fractions), replicates, seed)


# ---------------------------------------------------------------------------
# the nonparametric surrogate
# ---------------------------------------------------------------------------

def knn_predict(train_x: np.ndarray, train_y: np.ndarray, query_x: np.ndarray,
                k: int) -> np.ndarray:
    """Inverse-squared-distance weighted mean of the k nearest targets.

    A query within 1e-12 of a training point returns that point's target
    exactly (lowest matching index wins).  Inputs are assumed normalized
    with the training-set record.
    """
    train_x = np.asarray(train_x, dtype=float)
    train_y = np.asarray(train_y, dtype=float)
    query_x = np.asarray(query_x, dtype=float)
    if len(train_x) == 0:
        raise ValueError("training set must not be empty")
    if not 1 <= k <= len(train_x):
        raise ValueError(f"k={k} outside [1, {len(train_x)}]")
    dist = cdist(query_x, train_x)
    out = np.empty((len(query_x), train_y.shape[1] if train_y.ndim > 1 else 1))
    y2d = train_y if train_y.ndim > 1 else train_y[:, None]
    order_cols = np.arange(train_x.shape[0])
    for row, d in enumerate(dist):
        nearest = int(np.argmin(d))
        if d[nearest] < _EXACT_MATCH:
            out[row] = y2d[nearest]
            continue
        top = np.lexsort((order_cols, d))[:k]
        w = 1.0 / (d[top] ** 2)
        out[row] = (w @ y2d[top]) / w.sum()
    return out if train_y.ndim > 1 else out.ravel()


class KNNSurrogate(BaseEstimator, RegressorMixin):
    """k-nearest-neighbor regressor over min-max normalized features.

    The normalization record is refit from the training features each
    time, so prediction quality reflects only the chosen training subset.
    """

    def __init__(self, n_neighbors: int = 8):
        self.n_neighbors = n_neighbors

    def fit(self, X, y):
        X = check_array(X, dtype=float)
        y = check_array(y, dtype=float, ensure_2d=False)
        if len(X) != len(y):
            raise ValueError("X and y must have the same length")
        if not 1 <= self.n_neighbors <= len(X):
            raise ValueError(f"n_neighbors={self.n_neighbors} outside [1, {len(X)}]")
        self.data_min_, self.data_max_ = minmax_fit(X)
        self.train_x_ = minmax_apply(X, self.data_min_, self.data_max_)
        self.train_y_ = y
        return self

    def predict(self, X) -> np.ndarray:
        X = check_array(X, dtype=float)
        scaled = minmax_apply(X, self.data_min_, self.data_max_)
        return knn_predict(self.train_x_, self.train_y_, scaled, self.n_neighbors)


# ---------------------------------------------------------------------------
# design evaluation
# ---------------------------------------------------------------------------

def _target_matrix(targets, ids) -> np.ndarray:
    missing = [i for i in ids if i not in targets]
    if missing:
        raise ValueError(f"targets missing for ids: {missing}")
    return np.array([targets[i] for i in ids], dtype=float)


def evaluate_design(design: Design, features: FeatureMatrix, targets,
                    plan: SplitPlan, k: int = 8) -> float:
    """Validation loss of a surrogate trained on the design's subset.

    Targets are centered and scaled by pool statistics; the loss is the
    mean squared error over every validation id and target component.
    """
    pool_ids = list(plan.pool_ids)
    if np.any(design.indices >= len(pool_ids)) or np.any(design.indices < 0):
        raise ValueError("design indices fall outside the candidate pool")
    train_ids = [pool_ids[i] for i in design.indices]

    pool_targets = _target_matrix(targets, pool_ids)
    center = pool_targets.mean(axis=0)
    scale = pool_targets.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)

    train_y = (_target_matrix(targets, train_ids) - center) / scale
    val_y = (_target_matrix(targets, plan.validation_ids) - center) / scale

    surrogate = KNNSurrogate(n_neighbors=min(k, len(train_ids)))
    surrogate.fit(features.rows(train_ids), train_y)
    pred = surrogate.predict(features.rows(plan.validation_ids))
    return float(np.mean((pred - val_y) ** 2))


@dataclass
class EvalRecord:
    feature_set: str
    criterion: str
    fraction: float
    replicate: int
    replicate_seed: int | None
    n_design: int
    loss_design: float
    loss_random_mean: float
    improvement_pct: float
    bootstrap_std: float


def improvement_report(feature_sets, targets, plan: SplitPlan,
                       criteria=("cmm", "maxpro", "twin", "random"),
                       k: int = 8, seed: int | None = None) -> list:
    """Designed-versus-random comparison over every (feature set,
    criterion, fraction) cell of the plan.

    Each cell builds ``plan.replicates`` replicate designs (seeded starts
    for the greedy criteria, distinct seeds for random; the deterministic
    twin is built once) and compares each against the mean loss of an
    equal number of seeded random baseline designs.  The bootstrap
    standard deviation resamples replicate improvements; for the twin it
    resamples the baseline losses instead, since the design itself cannot
    vary.
    """
    seed = plan.seed if seed is None else seed
    all_ids = list(plan.pool_ids) + list(plan.validation_ids)
    records: list = []
    for fs_name, fm in feature_sets.items():
        missing = [i for i in all_ids if i not in set(fm.ids)]
        if missing:
            raise ValueError(f"feature set {fs_name!r} missing ids: {missing}")
        _target_matrix(targets, all_ids)

        pool_raw = fm.rows(plan.pool_ids)
        pool_fm = normalize_features(
            FeatureMatrix(plan.pool_ids, pool_raw, fm.provenance)
        )
        for fraction in plan.fractions:
            n_design = max(1, round(fraction * len(plan.pool_ids)))
            baseline_losses = np.array([
                evaluate_design(
                    make_selector("random", n_design,
                                  seed=_cell_seed(seed, fs_name, "baseline", fraction, r)).fit(pool_fm).design_,
                    fm, targets, plan, k=k,
                )
                for r in range(plan.replicates)
            ])
            baseline_mean = float(baseline_losses.mean())
            for criterion in criteria:
                records.extend(_cell_records(
                    criterion, fs_name, fraction, n_design, fm, pool_fm, targets,
                    plan, k, seed, baseline_losses, baseline_mean,
                ))
    return records


def _cell_seed(seed, fs_name, role, fraction, replicate) -> int:
    return int(derive_rng(seed, fs_name, role, f"{fraction:.6g}", replicate).integers(2**62))


def _cell_records(criterion, fs_name, fraction, n_design, fm, pool_fm, targets,
                  plan, k, seed, baseline_losses, baseline_mean) -> list:
    boot_rng = derive_rng(seed, fs_name, criterion, f"{fraction:.6g}", "bootstrap")
    records = []
    if criterion == "twin":
        design = make_selector("twin", n_design).fit(pool_fm).design_
        loss = evaluate_design(design, fm, targets, plan, k=k)
        resampled = baseline_losses[
            boot_rng.integers(0, len(baseline_losses), (_BOOTSTRAP_RESAMPLES, len(baseline_losses)))
        ].mean(axis=1)
        boot = float((100.0 * (resampled - loss) / resampled).std())
        improvement = 100.0 * (baseline_mean - loss) / baseline_mean
        for r in range(plan.replicates):
            records.append(EvalRecord(fs_name, criterion, fraction, r, None, n_design,
                                      loss, baseline_mean, improvement, boot))
        return records

    losses = []
    seeds = []
    for r in range(plan.replicates):
        rep_seed = _cell_seed(seed, fs_name, f"design-{criterion}", fraction, r)
        selector = make_selector(criterion, n_design, seed=rep_seed)
        design = selector.fit(pool_fm).design_
        losses.append(evaluate_design(design, fm, targets, plan, k=k))
        seeds.append(rep_seed)
    improvements = 100.0 * (baseline_mean - np.array(losses)) / baseline_mean
    resampled = improvements[
        boot_rng.integers(0, len(improvements), (_BOOTSTRAP_RESAMPLES, len(improvements)))
    ].mean(axis=1)
    boot = float(resampled.std())
    for r in range(plan.replicates):
        records.append(EvalRecord(fs_name, criterion, fraction, r, seeds[r], n_design,
                                  float(losses[r]), baseline_mean, float(improvements[r]), boot))
    return records


def summarize_records(records) -> list:
    """Per-cell means of the replicate records, for plotting."""
    cells: dict = {}
    for rec in records:
        cells.setdefault((rec.feature_set, rec.criterion, rec.fraction), []).append(rec)
    out = []
    for (fs, crit, frac), recs in sorted(cells.items()):
        out.append({
            "feature_set": fs,
            "criterion": crit,
            "fraction": frac,
            "n_design": recs[0].n_design,
            "mean_loss_design": float(np.mean([r.loss_design for r in recs])),
            "loss_random_mean": recs[0].loss_random_mean,
            "mean_improvement_pct": float(np.mean([r.improvement_pct for r in recs])),
            "bootstrap_std": recs[0].bootstrap_std,
        })
    return out


def save_report(records, path, provenance: dict | None = None) -> None:
    with open(path, "w", newline="\n") as fh:
        for key, value in (provenance or {}).items():
            fh.write(f"# {key}={value}\n")
        fh.write("feature_set,criterion,fraction,replicate,n_design,"
                 "loss_design,loss_random_mean,improvement_pct,bootstrap_std\n")
        for r in records:
            fh.write(
                f"{r.feature_set},{r.criterion},{r.fraction:.6g},{r.replicate},{r.n_design},"
                f"{r.loss_design:.17g},{r.loss_random_mean:.17g},"
                f"{r.improvement_pct:.17g},{r.bootstrap_std:.17g}\n"
            )


def load_report(path) -> list:
    records = []
    with open(path, "r") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("feature_set,"):
                continue
            fs, crit, frac, rep, n, loss, rand, imp, boot = line.split(",")
            records.append(EvalRecord(fs, crit, float(frac), int(rep), None, int(n),
                                      float(loss), float(rand), float(imp), float(boot)))
    if not records:
        raise ValueError(f"no evaluation records found in {path}")
    return records


def save_summary(records, path, provenance: dict | None = None) -> None:
    with open(path, "w", newline="\n") as fh:
        for key, value in (provenance or {}).items():
            fh.write(f"# {key}={value}\n")
        fh.write("feature_set,criterion,fraction,n_design,mean_loss_design,"
                 "loss_random_mean,mean_improvement_pct,bootstrap_std\n")
        for cell in summarize_records(records):
            fh.write(
                f"{cell['feature_set']},{cell['criterion']},{cell['fraction']:.6g},"
                f"{cell['n_design']},{cell['mean_loss_design']:.17g},"
                f"{cell['loss_random_mean']:.17g},{cell['mean_improvement_pct']:.17g},"
                f"{cell['bootstrap_std']:.17g}\n"
            )
