"""Training-subset construction over a candidate feature matrix.

Four selectors share one estimator API: ``fit`` over a min-max normalized
candidate matrix populates ``indices_`` (the chosen candidate rows, in
selection order), ``trace_`` (per-step criterion values), and ``design_``.

* greedy conditional maximin: each step adds the candidate farthest, in
  minimum distance, from the current selection;
* greedy maximum projection: each step adds the candidate with the least
  added sum of inverse squared dimension-wise gap products, evaluated in
  log space so it survives hundreds of dimensions;
* twinning: a deterministic nearest-neighbor partition walk that balances
  spreading with matching the candidate distribution;
* random: seeded uniform sampling without replacement, the baseline.

Selectors refuse raw (unscaled) inputs: distances in mixed units make the
criteria meaningless.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator

from .features import FeatureMatrix
from .seeding import derive_rng
from .validation import check_in_unit_interval

_LOG_GAP_FLOOR = np.log(1e-12)


def _candidate_values(F) -> tuple:
    """Extract (values, provenance) and enforce the normalized-input rule."""
    if isinstance(F, FeatureMatrix):
        if F.normalization is None:
            raise ValueError("selectors require a normalized feature matrix")
        return F.values, F.provenance
    values = np.asarray(F, dtype=float)
    if values.ndim != 2:
        raise ValueError("candidate features must be a 2-D matrix")
    if not np.all(np.isfinite(values)):
        raise ValueError("candidate features must be finite")
    check_in_unit_interval(values, "candidate features")
    return values, "unlabeled"


@dataclass
class Design:
    """Ordered selection of candidate rows with its construction trace."""

    criterion: str
    indices: np.ndarray
    seed: int | None
    trace: np.ndarray
    provenance: str

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.trace = np.asarray(self.trace, dtype=float)
        if len(np.unique(self.indices)) != len(self.indices):
            raise ValueError("design indices must be unique")

    @property
    def n(self) -> int:
        return len(self.indices)


class _BaseSelector(BaseEstimator):
    criterion = "base"

    def fit(self, F, y=None):
        values, provenance = _candidate_values(F)
        n_total = values.shape[0]
        if not 1 <= self.n_select <= n_total:
            raise ValueError(
                f"cannot select {self.n_select} of {n_total} candidates"
            )
        indices, trace, seed = self._select(values)
        self.indices_ = np.asarray(indices, dtype=np.int64)
        self.trace_ = np.asarray(trace, dtype=float)
        self.design_ = Design(self.criterion, self.indices_, seed, self.trace_, provenance)
        return self

    def _select(self, values):  # pragma: no cover - abstract
        raise NotImplementedError


def _first_index(values: np.ndarray, start, seed) -> tuple:
    if start is not None:
        if not 0 <= start < len(values):
            raise ValueError(f"start index {start} out of range")
        return int(start), seed
    rng = derive_rng(seed if seed is not None else 0, "greedy-start")
    return int(rng.integers(len(values))), seed


class MaximinSelector(_BaseSelector):
    """Greedy conditional maximin: maximize the minimum pairwise distance.

    Ties break to the lowest candidate index; the trace records the
    minimum distance achieved by each added point (infinity for the
    start point, which has no distance yet).
    """

    criterion = "cmm"

    def __init__(self, n_select: int, start: int | None = None, seed: int | None = None):
        self.n_select = n_select
        self.start = start
        self.seed = seed

    def _select(self, values):
        first, seed = _first_index(values, self.start, self.seed)
        chosen = [first]
        trace = [np.inf]
        min_dist = cdist(values, values[[first]]).ravel()
        for _ in range(self.n_select - 1):
            min_dist[chosen] = -np.inf  # never reselect
            nxt = int(np.argmax(min_dist))
            chosen.append(nxt)
            trace.append(float(min_dist[nxt]))
            min_dist = np.minimum(min_dist, cdist(values, values[[nxt]]).ravel())
        return chosen, trace, seed


class MaxProSelector(_BaseSelector):
    """Greedy maximum-projection selection.

    Each step adds the candidate minimizing the added cost
    ``sum_selected prod_l |c_l - s_l|^(-2k)``, accumulated in log space;
    exact coordinate collisions contribute a clamped gap of 1e-12.  The
    trace records each added point's log cost.
    """

    criterion = "maxpro"

    def __init__(self, n_select: int, start: int | None = None, seed: int | None = None,
                 power: float = 1.0):
        self.n_select = n_select
        self.start = start
        self.seed = seed
        self.power = power

    def _log_pair_cost(self, values, index):
        gaps = np.abs(values - values[index])
        log_gaps = np.log(gaps, out=np.full_like(gaps, _LOG_GAP_FLOOR), where=gaps > 0)
        log_gaps = np.maximum(log_gaps, _LOG_GAP_FLOOR)
        return -2.0 * self.power * log_gaps.sum(axis=1)

    def _select(self, values):
        first, seed = _first_index(values, self.start, self.seed)
        chosen = [first]
        trace = [np.inf]
        log_cost = self._log_pair_cost(values, first)
        for _ in range(self.n_select - 1):
            log_cost[chosen] = np.inf  # never reselect
            nxt = int(np.argmin(log_cost))
            chosen.append(nxt)
            trace.append(float(log_cost[nxt]))
            log_cost = np.logaddexp(log_cost, self._log_pair_cost(values, nxt))
        return chosen, trace, seed


class TwinSelector(_BaseSelector):
    """Deterministic twinning: sequential nearest-neighbor partitioning.

    With ``r = max(2, round(N/n))``, start at the point nearest the pool
    centroid, then repeatedly select the current point, retire its ``r-1``
    nearest unassigned neighbors, and jump to the unassigned point nearest
    the retired group's centroid.  If the pool is exhausted before the
    design is full, the remaining slots are filled by maximin steps.  The
    trace records each selected point's distance to the previous group
    centroid (infinity for the start and any maximin fill).
    """

    criterion = "twin"

    def __init__(self, n_select: int):
        self.n_select = n_select

    def _select(self, values):
        n_total = len(values)
        ratio = max(2, round(n_total / self.n_select))
        unassigned = np.ones(n_total, dtype=bool)
        chosen: list = []
        trace: list = []

        centroid = values.mean(axis=0)
        current = _nearest_to(values, centroid, unassigned)
        jump_dist = np.inf
        while len(chosen) < self.n_select and current is not None:
            chosen.append(current)
            trace.append(jump_dist)
            unassigned[current] = False
            group = [current]
            take = min(ratio - 1, int(unassigned.sum()))
            if take > 0:
                dist = np.linalg.norm(values - values[current], axis=1)
                dist[~unassigned] = np.inf
                neighbors = np.lexsort((np.arange(n_total), dist))[:take]
                unassigned[neighbors] = False
                group.extend(int(i) for i in neighbors)
            if not unassigned.any():
                break
            group_centroid = values[group].mean(axis=0)
            current = _nearest_to(values, group_centroid, unassigned)
            jump_dist = float(np.linalg.norm(values[current] - group_centroid))

        while len(chosen) < self.n_select:
            # pool exhausted early: top up with maximin steps over the rest
            min_dist = cdist(values, values[chosen]).min(axis=1)
            min_dist[chosen] = -np.inf
            nxt = int(np.argmax(min_dist))
            chosen.append(nxt)
            trace.append(np.inf)
        return chosen, trace, None


def _nearest_to(values, point, mask) -> int | None:
    if not mask.any():
        return None
    dist = np.linalg.norm(values - point, axis=1)
    dist[~mask] = np.inf
    return int(np.argmin(dist))


class RandomSelector(_BaseSelector):
    """Seeded uniform sampling without replacement."""

    criterion = "random"

    def __init__(self, n_select: int, seed: int = 0):
        self.n_select = n_select
        self.seed = seed

    def _select(self, values):
        rng = derive_rng(self.seed, "random-design")
        chosen = rng.choice(len(values), size=self.n_select, replace=False)
        return list(map(int, chosen)), [np.nan] * self.n_select, self.seed


SELECTORS = {
    "cmm": MaximinSelector,
    "maxpro": MaxProSelector,
    "twin": TwinSelector,
    "random": RandomSelector,
}


def make_selector(criterion: str, n_select: int, seed: int | None = None,
                  start: int | None = None) -> _BaseSelector:
    if criterion not in SELECTORS:
        raise ValueError(f"unknown criterion {criterion!r}; expected one of {sorted(SELECTORS)}")
    if criterion == "twin":
        return TwinSelector(n_select)
    if criterion == "random":
        return RandomSelector(n_select, seed=seed if seed is not None else 0)
    return SELECTORS[criterion](n_select, start=start, seed=seed)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def energy_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sample energy statistic ``2 E|a-b| - E|a-a'| - E|b-b'|``
    over all ordered pairs; zero iff the multisets coincide."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(
        2.0 * cdist(a, b).mean() - cdist(a, a).mean() - cdist(b, b).mean()
    )


def maxpro_log_criterion(values: np.ndarray, power: float = 1.0) -> float:
    """Log of the summed inverse squared gap products over all pairs."""
    n = len(values)
    if n < 2:
        return -np.inf
    terms = []
    for i in range(n - 1):
        gaps = np.abs(values[i + 1:] - values[i])
        log_gaps = np.log(gaps, out=np.full_like(gaps, _LOG_GAP_FLOOR), where=gaps > 0)
        log_gaps = np.maximum(log_gaps, _LOG_GAP_FLOOR)
        terms.append(-2.0 * power * log_gaps.sum(axis=1))
    flat = np.concatenate(terms)
    peak = flat.max()
    return float(peak + np.log(np.exp(flat - peak).sum()))


def tv_distance(hist_a: dict, hist_b: dict) -> float:
    """Total-variation distance between two normalized histograms."""
    keys = set(hist_a) | set(hist_b)
    total_a = sum(hist_a.values()) or 1
    total_b = sum(hist_b.values()) or 1
    return 0.5 * sum(
        abs(hist_a.get(k, 0) / total_a - hist_b.get(k, 0) / total_b) for k in keys
    )


@dataclass
class DesignDiagnostics:
    min_pairwise_distance: float
    maxpro_log_criterion: float
    energy_distance_to_pool: float
    min_projected_spacing: np.ndarray
    grain_size_histogram: dict | None = None
    pool_grain_size_histogram: dict | None = None
    grain_size_tv_distance: float | None = None

    @property
    def worst_projected_spacing(self) -> float:
        return float(np.min(self.min_projected_spacing))


def design_diagnostics(design: Design, F, grain_sizes=None) -> DesignDiagnostics:
    """Spread, projection, and distribution-emulation scores of a design.

    ``grain_sizes`` (one value per candidate row) enables the grain-size
    histogram comparison; omit it for feature clouds without that notion.
    """
    values, _ = _candidate_values(F)
    subset = values[design.indices]
    if len(subset) >= 2:
        pair = cdist(subset, subset)
        min_pairwise = float(pair[np.triu_indices(len(subset), k=1)].min())
        spacing = np.array([
            np.abs(subset[:, None, l] - subset[None, :, l])[np.triu_indices(len(subset), k=1)].min()
            for l in range(subset.shape[1])
        ])
    else:
        min_pairwise = np.inf
        spacing = np.full(subset.shape[1], np.inf)
    diag = DesignDiagnostics(
        min_pairwise_distance=min_pairwise,
        maxpro_log_criterion=maxpro_log_criterion(subset),
        energy_distance_to_pool=energy_distance(subset, values),
        min_projected_spacing=spacing,
    )
    if grain_sizes is not None:
        sizes = np.asarray(grain_sizes)
        if len(sizes) != len(values):
            raise ValueError("need one grain size per candidate row")
        pool_hist = _histogram(sizes)
        design_hist = _histogram(sizes[design.indices])
        diag.grain_size_histogram = design_hist
        diag.pool_grain_size_histogram = pool_hist
        diag.grain_size_tv_distance = tv_distance(design_hist, pool_hist)
    return diag


def _histogram(sizes) -> dict:
    values, counts = np.unique(np.asarray(sizes), return_counts=True)
    return {float(v): int(c) for v, c in zip(values, counts)}


# ---------------------------------------------------------------------------
# design files
# ---------------------------------------------------------------------------

def save_design(design: Design, path, diagnostics: DesignDiagnostics | None = None,
                provenance: dict | None = None) -> None:
    """Structured text: header fields, the ordered indices, the per-step
    trace, and an optional diagnostics block."""
    with open(path, "w", newline="\n") as fh:
        fh.write("design 1\n")
        fh.write(f"criterion: {design.criterion}\n")
        fh.write(f"provenance: {design.provenance}\n")
        fh.write(f"n: {design.n}\n")
        fh.write(f"seed: {'none' if design.seed is None else design.seed}\n")
        for key, value in (provenance or {}).items():
            fh.write(f"{key}: {value}\n")
        fh.write("indices: " + " ".join(str(i) for i in design.indices) + "\n")
        fh.write("trace: " + " ".join(f"{v:.17g}" for v in design.trace) + "\n")
        if diagnostics is not None:
            fh.write("diagnostics:\n")
            fh.write(f"  min_pairwise_distance: {diagnostics.min_pairwise_distance:.17g}\n")
            fh.write(f"  maxpro_log_criterion: {diagnostics.maxpro_log_criterion:.17g}\n")
            fh.write(f"  energy_distance_to_pool: {diagnostics.energy_distance_to_pool:.17g}\n")
            fh.write("  min_projected_spacing: "
                     + " ".join(f"{v:.17g}" for v in diagnostics.min_projected_spacing) + "\n")
            if diagnostics.grain_size_tv_distance is not None:
                fh.write(f"  grain_size_tv_distance: {diagnostics.grain_size_tv_distance:.17g}\n")
                fh.write("  grain_size_histogram: " + _histogram_token(diagnostics.grain_size_histogram) + "\n")
                fh.write("  pool_grain_size_histogram: "
                         + _histogram_token(diagnostics.pool_grain_size_histogram) + "\n")


def _histogram_token(hist: dict) -> str:
    return " ".join(f"{size:g}:{count}" for size, count in sorted(hist.items()))


def load_design(path) -> Design:
    fields = {}
    with open(path, "r") as fh:
        first = fh.readline().strip()
        if first != "design 1":
            raise ValueError(f"not a recognized design file: {path}")
        for line in fh:
            if line.startswith("diagnostics:"):
                break
            if ":" in line:
                key, value = line.split(":", 1)
                fields[key.strip()] = value.strip()
    seed = None if fields.get("seed") in (None, "none") else int(fields["seed"])
    return Design(
        criterion=fields["criterion"],
        indices=np.array([int(v) for v in fields["indices"].split()]),
        seed=seed,
        trace=np.array([float(v) for v in fields["trace"].split()]),
        provenance=fields.get("provenance", "unlabeled"),
    )
