"""Per-volume feature vectors, min-max normalization, and distances.

Two built-in descriptor families:

* the classic descriptor: real/imaginary parts of the nine volume-averaged
  harmonic coefficients (components that vanish identically over SO(3) are
  dropped) plus the nominal grain size scaled by 1/16;
* raw sub-volume statistics: the same retained harmonic components plus an
  interface density and a log grain count, which feed the contrastive
  embedding.

Externally computed feature sets are ingested through the CSV loader and
take part in design construction unchanged.
"""

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, TransformerMixin

from .seeding import derive_rng
from .texture import gsh_basis, gsh_coefficients, random_orientations

#: Grain sizes enter the classic descriptor in units of 16 voxels so that
#: one raw-unit axis cannot dominate Euclidean distances.
GRAIN_SIZE_SCALE = 1.0 / 16.0

_ZERO_DETECT_SAMPLES = 10_000
_ZERO_DETECT_TOL = 1e-10
_ZERO_DETECT_SEED = 52801


@dataclass
class FeatureMatrix:
    """N x p feature table with row identifiers and a provenance tag.

    ``normalization`` is either ``None`` (raw values) or the per-dimension
    ``(min, max)`` record used to scale the values into [0, 1].
    """

    ids: tuple
    values: np.ndarray
    provenance: str
    normalization: tuple | None = None

    def __post_init__(self):
        self.ids = tuple(str(i) for i in self.ids)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("values must be a 2-D matrix")
        if len(self.ids) != self.values.shape[0]:
            raise ValueError("one id per row required")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("ids must be unique")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature values must be finite")
        if self.normalization is not None:
            lo, hi = self.normalization
            if np.any(np.asarray(hi) < np.asarray(lo)):
                raise ValueError("normalization record must have max >= min")

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def rows(self, wanted_ids) -> np.ndarray:
        index = {i: k for k, i in enumerate(self.ids)}
        missing = [i for i in wanted_ids if i not in index]
        if missing:
            raise KeyError(f"ids missing from feature matrix: {missing}")
        return self.values[[index[i] for i in wanted_ids]]


@lru_cache(maxsize=1)
def retained_gsh_components() -> np.ndarray:
    """Boolean mask over the 18 stacked real/imaginary basis components.

    Components whose magnitude stays below 1e-10 over ten thousand uniform
    orientations are treated as identically zero and dropped (the n = 0
    imaginary part, under the convention used here).
    """
    rng = derive_rng(_ZERO_DETECT_SEED, "retained-components")
    basis = gsh_basis(random_orientations(_ZERO_DETECT_SAMPLES, rng))
    stacked = np.concatenate([basis.real, basis.imag], axis=1)
    mask = np.abs(stacked).max(axis=0) >= _ZERO_DETECT_TOL
    mask.setflags(write=False)
    return mask


def _retained_coefficients(mve) -> np.ndarray:
    coeff = gsh_coefficients(mve)
    stacked = np.concatenate([coeff.real, coeff.imag])
    return stacked[retained_gsh_components()]


def classic_descriptor(mve) -> np.ndarray:
    """Retained harmonic coefficient components plus scaled grain size."""
    return np.concatenate([
        _retained_coefficients(mve),
        [mve.meta.target_grain_size * GRAIN_SIZE_SCALE],
    ])


def interface_density(grain_id: np.ndarray) -> float:
    """Fraction of face-adjacent voxel pairs whose grain labels differ
    (non-wrapping adjacency, so crops and full volumes are comparable)."""
    pairs = 0
    differing = 0
    for axis in range(grain_id.ndim):
        a = np.moveaxis(grain_id, axis, 0)
        differing += int(np.count_nonzero(a[1:] != a[:-1]))
        pairs += (a.shape[0] - 1) * int(np.prod(a.shape[1:]))
    return differing / pairs if pairs else 0.0


def subvolume_statistics(mve) -> np.ndarray:
    """Size-agnostic statistics vector: retained harmonic components,
    interface density, and log(1 + grain count)."""
    if min(mve.dims) < 4:
        raise ValueError("statistics need at least 4 voxels per axis")
    return np.concatenate([
        _retained_coefficients(mve),
        [interface_density(mve.grain_id), np.log1p(mve.n_grains)],
    ])


class ClassicDescriptor(BaseEstimator, TransformerMixin):
    """Stateless transformer mapping volume elements to classic descriptors."""

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        return np.array([classic_descriptor(m) for m in X])


class SubvolumeStatistics(BaseEstimator, TransformerMixin):
    """Stateless transformer mapping volume elements to raw statistics."""

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        return np.array([subvolume_statistics(m) for m in X])


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def minmax_fit(values: np.ndarray) -> tuple:
    values = np.asarray(values, dtype=float)
    return values.min(axis=0), values.max(axis=0)


def minmax_apply(values: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Scale into [0, 1] per dimension; constant dimensions map to 0.5."""
    span = hi - lo
    constant = span <= 0
    safe = np.where(constant, 1.0, span)
    out = (values - lo) / safe
    out[:, constant] = 0.5
    return out


class FeatureNormalizer(BaseEstimator, TransformerMixin):
    """Min-max scaler with the fixed constant-dimension convention."""

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] < 2:
            raise ValueError("need at least two rows to fit normalization")
        self.data_min_, self.data_max_ = minmax_fit(X)
        return self

    def transform(self, X) -> np.ndarray:
        return minmax_apply(np.asarray(X, dtype=float), self.data_min_, self.data_max_)


def normalize_features(fm: FeatureMatrix) -> FeatureMatrix:
    """Min-max scale every dimension to [0, 1], storing the record.

    Idempotent: a second application leaves the values unchanged.
    """
    if fm.values.shape[0] < 2:
        raise ValueError("need at least two rows to normalize")
    lo, hi = minmax_fit(fm.values)
    return replace(fm, values=minmax_apply(fm.values, lo, hi), normalization=(lo, hi))


def distance_matrix(features) -> np.ndarray:
    """Pairwise Euclidean distances between feature rows."""
    values = features.values if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError("distance_matrix requires finite inputs")
    return cdist(values, values)


# ---------------------------------------------------------------------------
# feature file formats
# ---------------------------------------------------------------------------

def save_features(fm: FeatureMatrix, path, provenance: dict | None = None) -> None:
    """Canonical CSV form: comment lines with provenance and the
    normalization record, a header row ``id,f0,...``, one row per id."""
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# provenance={fm.provenance}\n")
        for key, value in (provenance or {}).items():
            fh.write(f"# {key}={value}\n")
        if fm.normalization is not None:
            lo, hi = fm.normalization
            fh.write("# norm_min=" + ",".join(f"{v:.17g}" for v in lo) + "\n")
            fh.write("# norm_max=" + ",".join(f"{v:.17g}" for v in hi) + "\n")
        fh.write("id," + ",".join(f"f{j}" for j in range(fm.n_features)) + "\n")
        for row_id, row in zip(fm.ids, fm.values):
            fh.write(row_id + "," + ",".join(f"{v:.17g}" for v in row) + "\n")


def load_features(path, format: str = "csv") -> FeatureMatrix:
    """Read a feature file, rejecting malformed rows with a diagnostic
    that names the offending row."""
    if format == "binary":
        return _load_features_binary(path)
    if format != "csv":
        raise ValueError(f"unknown feature format {format!r}")
    provenance = "external"
    norm_min = norm_max = None
    ids, rows = [], []
    width = None
    with open(path, "r") as fh:
        header_seen = False
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("provenance="):
                    provenance = body.split("=", 1)[1]
                elif body.startswith("norm_min="):
                    norm_min = np.array([float(v) for v in body.split("=", 1)[1].split(",")])
                elif body.startswith("norm_max="):
                    norm_max = np.array([float(v) for v in body.split("=", 1)[1].split(",")])
                continue
            if not header_seen:
                header_seen = True  # id,f0,... column row
                continue
            parts = line.split(",")
            row_id = parts[0]
            try:
                row = np.array([float(v) for v in parts[1:]])
            except ValueError as exc:
                raise ValueError(f"row {lineno} ({row_id}): unparseable value") from exc
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ValueError(
                    f"row {lineno} ({row_id}): {len(row)} values, expected {width}"
                )
            if not np.all(np.isfinite(row)):
                raise ValueError(f"row {lineno} ({row_id}): non-finite value")
            if row_id in set(ids):
                raise ValueError(f"row {lineno}: duplicate id {row_id!r}")
            ids.append(row_id)
            rows.append(row)
    if not rows:
        raise ValueError(f"no feature rows found in {path}")
    normalization = (norm_min, norm_max) if norm_min is not None and norm_max is not None else None
    return FeatureMatrix(tuple(ids), np.array(rows), provenance, normalization)


def save_features_binary(fm: FeatureMatrix, path) -> None:
    """Compact twin of the CSV form: a text header line carrying (N, p)
    followed by row-major little-endian float64 values."""
    with open(path, "wb") as fh:
        fh.write(f"features-bin 1 n={len(fm.ids)} p={fm.n_features}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(fm.values, dtype="<f8").tobytes())


def _load_features_binary(path) -> FeatureMatrix:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        payload = fh.read()
    if len(header) < 2 or header[0] != "features-bin":
        raise ValueError(f"not a recognized binary feature file: {path}")
    fields = dict(token.split("=", 1) for token in header[2:])
    n, p = int(fields["n"]), int(fields["p"])
    values = np.frombuffer(payload, dtype="<f8", count=n * p).reshape(n, p).copy()
    ids = tuple(f"row-{i:04d}" for i in range(n))
    return FeatureMatrix(ids, values, "external")
