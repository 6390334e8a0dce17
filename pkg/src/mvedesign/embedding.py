"""Shallow contrastive embedding of volume elements.

Training follows the self-supervised cropping protocol: two sub-volumes of
one parent form an anchor/positive pair, a sub-volume of a different
parent is the negative, and a hinge loss with margin 1/2 pulls the pair
together while pushing the negative away.  The network is an affine map
from min-max normalized sub-volume statistics to a 16-dimensional latent
vector, optimized by plain mini-batch gradient descent so that runs are
deterministic and dependency-free.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .features import (
    interface_density,
    minmax_apply,
    minmax_fit,
    retained_gsh_components,
    subvolume_statistics,
)
from .seeding import derive_rng
from .texture import GSH_L, gsh_basis

_EPS = 1e-12


class TrainingDiverged(RuntimeError):
    """Raised when the training loss leaves the finite range."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass
class Triplet:
    """Raw statistic vectors of an anchor/positive/negative crop triple."""

    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray
    anchor_id: str
    negative_id: str

    def __post_init__(self):
        if not (len(self.anchor) == len(self.positive) == len(self.negative)):
            raise ValueError("triplet vectors must have equal dimension")


class TripletSampler:
    """Seeded stream of crop triplets over a fixed corpus.

    Anchor and positive are statistics of two independent uniform-origin
    crops of one randomly chosen parent; the negative crop comes from a
    different, uniformly chosen parent.
    """

    def __init__(self, mves, rng: np.random.Generator, crop: int = 16):
        if len(mves) < 2:
            raise ValueError("triplet sampling needs at least two volume elements")
        for m in mves:
            if min(m.dims) < crop:
                raise ValueError(f"{m.meta.id} is smaller than the {crop}^3 crop window")
        self.mves = list(mves)
        self.rng = rng
        self.crop = int(crop)
        # per-parent coefficient contributions, so a crop's harmonic block
        # reduces to one voxel-count weighted matrix product
        mask = retained_gsh_components()
        self._grain_terms = []
        for m in self.mves:
            conj_basis = (2 * GSH_L + 1) * np.conj(gsh_basis(m.grain_orientations))
            stacked = np.concatenate([conj_basis.real, conj_basis.imag], axis=1)
            self._grain_terms.append(np.ascontiguousarray(stacked[:, mask]))

    def _crop_stats(self, index: int) -> np.ndarray:
        mve = self.mves[index]
        origin = tuple(
            int(self.rng.integers(0, d - self.crop + 1)) for d in mve.dims
        )
        window = mve.grain_id[
            origin[0]:origin[0] + self.crop,
            origin[1]:origin[1] + self.crop,
            origin[2]:origin[2] + self.crop,
        ]
        counts = np.bincount(window.ravel(), minlength=mve.n_grains)
        weights = counts / window.size
        return np.concatenate([
            weights @ self._grain_terms[index],
            [interface_density(window), np.log1p(np.count_nonzero(counts))],
        ])

    def sample(self) -> Triplet:
        n = len(self.mves)
        parent = int(self.rng.integers(n))
        other = int(self.rng.integers(n - 1))
        if other >= parent:
            other += 1
        return Triplet(
            anchor=self._crop_stats(parent),
            positive=self._crop_stats(parent),
            negative=self._crop_stats(other),
            anchor_id=self.mves[parent].meta.id,
            negative_id=self.mves[other].meta.id,
        )

    def sample_batch(self, count: int) -> list:
        return [self.sample() for _ in range(count)]


def sample_triplet(mves, rng: np.random.Generator, crop: int = 16) -> Triplet:
    return TripletSampler(mves, rng, crop=crop).sample()


# ---------------------------------------------------------------------------
# loss and gradient
# ---------------------------------------------------------------------------

def triplet_loss(za, zp, zn, margin: float = 0.5) -> float:
    """Hinge value ``max(0, d(za, zp) - d(za, zn) + margin)``."""
    za, zp, zn = (np.asarray(v, dtype=float) for v in (za, zp, zn))
    d_ap = float(np.linalg.norm(za - zp))
    d_an = float(np.linalg.norm(za - zn))
    return max(0.0, d_ap - d_an + margin)


def triplet_gradient(W: np.ndarray, b: np.ndarray, triplet: Triplet,
                     margin: float = 0.5) -> tuple:
    """Analytic subgradient of the hinge loss for one normalized triplet.

    Inputs are the already-normalized statistic vectors; the latents are
    ``z = W @ x + b``.  Inactive triplets return zero gradients, and the
    distance denominators are guarded at 1e-12 so coincident latents do
    not produce non-finite directions.
    """
    xa, xp, xn = triplet.anchor, triplet.positive, triplet.negative
    za, zp, zn = W @ xa + b, W @ xp + b, W @ xn + b
    diff_ap, diff_an = za - zp, za - zn
    d_ap = float(np.linalg.norm(diff_ap))
    d_an = float(np.linalg.norm(diff_an))
    loss = d_ap - d_an + margin
    if loss <= 0.0:
        return np.zeros_like(W), np.zeros_like(b), 0.0
    u_ap = diff_ap / max(d_ap, _EPS)
    u_an = diff_an / max(d_an, _EPS)
    ga = u_ap - u_an
    gp = -u_ap
    gn = u_an
    dW = np.outer(ga, xa) + np.outer(gp, xp) + np.outer(gn, xn)
    db = ga + gp + gn
    return dW, db, float(loss)


def _batch_losses(W, b, A, P, N, margin):
    Za, Zp, Zn = A @ W.T + b, P @ W.T + b, N @ W.T + b
    d_ap = np.linalg.norm(Za - Zp, axis=1)
    d_an = np.linalg.norm(Za - Zn, axis=1)
    return np.maximum(0.0, d_ap - d_an + margin), (Za, Zp, Zn, d_ap, d_an)


def _batch_gradient(W, b, A, P, N, margin):
    losses, (Za, Zp, Zn, d_ap, d_an) = _batch_losses(W, b, A, P, N, margin)
    active = losses > 0.0
    u_ap = (Za - Zp) / np.maximum(d_ap, _EPS)[:, None]
    u_an = (Za - Zn) / np.maximum(d_an, _EPS)[:, None]
    ga = np.where(active[:, None], u_ap - u_an, 0.0)
    gp = np.where(active[:, None], -u_ap, 0.0)
    gn = np.where(active[:, None], u_an, 0.0)
    count = len(losses)
    dW = (ga.T @ A + gp.T @ P + gn.T @ N) / count
    db = (ga + gp + gn).mean(axis=0)
    return dW, db, losses


# ---------------------------------------------------------------------------
# the estimator
# ---------------------------------------------------------------------------

class TripletEmbedding(BaseEstimator, TransformerMixin):
    """Affine embedding of volume elements trained on crop triplets.

    Statistics are size-agnostic, so full-size volumes embed with the same
    map that was trained on crops.  All randomness derives from ``seed``;
    two fits with identical inputs produce bit-identical weights.
    """

    def __init__(self, latent_dim: int = 16, margin: float = 0.5, epochs: int = 50,
                 batch_size: int = 64, learning_rate: float = 1e-2, crop: int = 16,
                 holdout_fraction: float = 0.2, triplets_per_epoch: int | None = None,
                 norm_triplets: int = 96, eval_triplets: int = 200, seed: int = 0):
        self.latent_dim = latent_dim
        self.margin = margin
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.crop = crop
        self.holdout_fraction = holdout_fraction
        self.triplets_per_epoch = triplets_per_epoch
        self.norm_triplets = norm_triplets
        self.eval_triplets = eval_triplets
        self.seed = seed

    def _triplet_arrays(self, triplets):
        A = minmax_apply(np.array([t.anchor for t in triplets]), self.feat_min_, self.feat_max_)
        P = minmax_apply(np.array([t.positive for t in triplets]), self.feat_min_, self.feat_max_)
        N = minmax_apply(np.array([t.negative for t in triplets]), self.feat_min_, self.feat_max_)
        return A, P, N

    def fit(self, X, y=None):
        mves = list(X)
        if len(mves) < 10:
            raise ValueError("embedding training needs at least 10 volume elements")
        if self.margin <= 0:
            raise ValueError("margin must be positive")

        order = derive_rng(self.seed, "embed-split").permutation(len(mves))
        n_holdout = min(len(mves) - 2, max(2, round(self.holdout_fraction * len(mves))))
        holdout = [mves[i] for i in order[:n_holdout]]
        train = [mves[i] for i in order[n_holdout:]]
        self.holdout_ids_ = tuple(m.meta.id for m in holdout)

        norm_sampler = TripletSampler(train, derive_rng(self.seed, "embed-norm"), crop=self.crop)
        norm_stack = []
        for t in norm_sampler.sample_batch(self.norm_triplets):
            norm_stack.extend([t.anchor, t.positive, t.negative])
        self.feat_min_, self.feat_max_ = minmax_fit(np.array(norm_stack))
        self.n_features_in_ = len(self.feat_min_)

        h = self.n_features_in_
        init_rng = derive_rng(self.seed, "embed-init")
        W = init_rng.normal(0.0, 0.1 / np.sqrt(h), (self.latent_dim, h))
        b = np.zeros(self.latent_dim)

        holdout_sampler = TripletSampler(holdout, derive_rng(self.seed, "embed-holdout"), crop=self.crop)
        Ah, Ph, Nh = self._triplet_arrays(holdout_sampler.sample_batch(self.eval_triplets))

        train_sampler = TripletSampler(train, derive_rng(self.seed, "embed-train"), crop=self.crop)
        per_epoch = self.triplets_per_epoch or len(train)

        history = []

        def holdout_loss():
            losses, _ = _batch_losses(W, b, Ah, Ph, Nh, self.margin)
            return float(losses.mean())

        A0, P0, N0 = self._triplet_arrays(train_sampler.sample_batch(per_epoch))
        initial_losses, _ = _batch_losses(W, b, A0, P0, N0, self.margin)
        history.append((0, float(initial_losses.mean()), holdout_loss()))

        for epoch in range(1, self.epochs + 1):
            A, P, N = self._triplet_arrays(train_sampler.sample_batch(per_epoch))
            epoch_losses = []
            for start in range(0, per_epoch, self.batch_size):
                stop = min(start + self.batch_size, per_epoch)
                dW, db, losses = _batch_gradient(
                    W, b, A[start:stop], P[start:stop], N[start:stop], self.margin
                )
                epoch_losses.append(losses)
                W = W - self.learning_rate * dW
                b = b - self.learning_rate * db
            train_loss = float(np.concatenate(epoch_losses).mean())
            record = (epoch, train_loss, holdout_loss())
            history.append(record)
            if not all(np.isfinite(v) for v in record[1:]) or not np.all(np.isfinite(W)):
                raise TrainingDiverged(f"loss diverged at epoch {epoch}", history)

        self.W_ = W
        self.b_ = b
        self.history_ = history
        return self

    def transform(self, X) -> np.ndarray:
        stats = np.array([subvolume_statistics(m) for m in X])
        scaled = minmax_apply(stats, self.feat_min_, self.feat_max_)
        return scaled @ self.W_.T + self.b_


def embed(model: TripletEmbedding, mve) -> np.ndarray:
    """Latent vector of one volume element."""
    return model.transform([mve])[0]


def margin_satisfaction(model: TripletEmbedding, mves, n_triplets: int,
                        rng: np.random.Generator) -> float:
    """Fraction of fresh triplets whose latents satisfy the margin
    (``d_an >= d_ap + margin``, i.e. zero hinge loss)."""
    sampler = TripletSampler(mves, rng, crop=model.crop)
    A, P, N = model._triplet_arrays(sampler.sample_batch(n_triplets))
    losses, _ = _batch_losses(model.W_, model.b_, A, P, N, model.margin)
    return float(np.mean(losses <= 0.0))


# ---------------------------------------------------------------------------
# model and history files
# ---------------------------------------------------------------------------

def save_embedding(model: TripletEmbedding, path, provenance: dict | None = None) -> None:
    """Text header (input width, latent dim, margin, normalization record)
    followed by little-endian float64 payload: W row-major, then b."""
    h = model.n_features_in_
    tokens = [
        "embedding", "1",
        f"h={h}",
        f"dim={model.latent_dim}",
        f"margin={model.margin:.17g}",
        f"crop={model.crop}",
        "min=" + ",".join(f"{v:.17g}" for v in model.feat_min_),
        "max=" + ",".join(f"{v:.17g}" for v in model.feat_max_),
    ]
    for key, value in (provenance or {}).items():
        tokens.append(f"{key}={value}")
    with open(path, "wb") as fh:
        fh.write((" ".join(tokens) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(model.W_, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.b_, dtype="<f8").tobytes())


def load_embedding(path) -> TripletEmbedding:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        payload = fh.read()
    if len(header) < 2 or header[0] != "embedding":
        raise ValueError(f"not a recognized embedding file: {path}")
    fields = dict(token.split("=", 1) for token in header[2:])
    h, dim = int(fields["h"]), int(fields["dim"])
    model = TripletEmbedding(latent_dim=dim, margin=float(fields["margin"]),
                             crop=int(fields["crop"]))
    model.feat_min_ = np.array([float(v) for v in fields["min"].split(",")])
    model.feat_max_ = np.array([float(v) for v in fields["max"].split(",")])
    model.n_features_in_ = h
    model.W_ = np.frombuffer(payload, dtype="<f8", count=dim * h).reshape(dim, h).copy()
    model.b_ = np.frombuffer(payload, dtype="<f8", offset=dim * h * 8, count=dim).copy()
    model.history_ = []
    return model


def save_history(history, path, provenance: dict | None = None) -> None:
    with open(path, "w", newline="\n") as fh:
        for key, value in (provenance or {}).items():
            fh.write(f"# {key}={value}\n")
        fh.write("epoch,train_loss,holdout_loss\n")
        for epoch, train_loss, holdout_loss in history:
            fh.write(f"{epoch},{train_loss:.17g},{holdout_loss:.17g}\n")
