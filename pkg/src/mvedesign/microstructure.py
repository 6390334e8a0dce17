"""Periodic voxelized polycrystal generation and sub-volume cropping.

A volume element is a box of voxels, each carrying the integer label of
the grain it belongs to; every grain has one crystal orientation.  Grains
come from a periodic Voronoi tessellation of uniformly random seed points,
with the seed count set by the requested nominal grain diameter.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .seeding import derive_rng
from .texture import (
    FiberTexture,
    TextureSpec,
    UniformTexture,
    random_fiber_texture,
    sample_orientations,
)

_VOXEL_CHUNK = 8192


@dataclass
class MveMeta:
    id: str
    target_grain_size: float
    texture: TextureSpec
    seed: int


@dataclass
class MVE:
    """Voxel grid of grain labels plus the per-grain orientation table.

    ``grain_id`` has shape ``dims`` and values in ``0..G-1``;
    ``grain_orientations`` is the ``(G, 3)`` table of Bunge Euler angles.
    """

    dims: tuple
    grain_id: np.ndarray
    grain_orientations: np.ndarray
    meta: MveMeta

    @property
    def n_grains(self) -> int:
        return len(self.grain_orientations)

    def validate(self) -> None:
        if any(d <= 0 for d in self.dims):
            raise ValueError("dims must be positive")
        if tuple(self.grain_id.shape) != tuple(self.dims):
            raise ValueError("grain_id shape does not match dims")
        labels = np.unique(self.grain_id)
        if labels.min() < 0 or labels.max() >= self.n_grains:
            raise ValueError("grain labels must index the orientation table")
        if len(labels) != self.n_grains:
            raise ValueError("orientation table has entries for empty grains")


@dataclass(frozen=True)
class CorpusSpec:
    """Plan for a generation run.

    The untextured block enumerates ``grain_sizes x seeds_per_size`` with
    uniform texture; each of the ``textured_count`` examples draws its
    grain size uniformly from ``grain_sizes`` and a random fiber texture,
    diffused by per-grain Euler jitter of ``perturb_deg`` degrees.
    """

    dims: tuple = (32, 32, 32)
    grain_sizes: tuple = tuple(range(4, 16))
    seeds_per_size: int = 10
    textured_count: int = 0
    seed: int = 0
    perturb_deg: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "grain_sizes", tuple(float(s) for s in self.grain_sizes))
        if self.seeds_per_size < 0 or self.textured_count < 0:
            raise ValueError("counts must be >= 0")
        limit = min(self.dims) / 2
        for size in self.grain_sizes:
            if not 2 <= size <= limit:
                raise ValueError(
                    f"grain size {size} outside [2, {limit}] for dims {self.dims}"
                )

    @property
    def untextured_count(self) -> int:
        return len(self.grain_sizes) * self.seeds_per_size

    @property
    def total_count(self) -> int:
        return self.untextured_count + self.textured_count


def _seed_count(dims, target_grain_size: float) -> int:
    return max(1, round(np.prod(dims) / float(target_grain_size) ** 3))


def _assign_voxels(dims, seeds: np.ndarray) -> np.ndarray:
    """Nearest periodic seed for every voxel center; ties go to the lowest
    seed index (argmin returns the first minimum)."""
    axes_sq = []
    for axis, length in enumerate(dims):
        coords = np.arange(length) + 0.5
        delta = np.abs(coords[:, None] - seeds[None, :, axis])
        delta = np.minimum(delta, length - delta)
        axes_sq.append(delta * delta)
    nx, ny, nz = dims
    labels = np.empty(dims, dtype=np.int32)
    # slab over x keeps the (ny*nz, K) distance block small
    for i in range(nx):
        block = axes_sq[0][i][None, None, :] + axes_sq[1][:, None, :] + axes_sq[2][None, :, :]
        labels[i] = np.argmin(block, axis=-1)
    return labels


def generate_mve(dims, target_grain_size: float, texture_spec: TextureSpec, seed: int,
                 mve_id: str | None = None) -> MVE:
    """Periodic Voronoi polycrystal with ``round(prod(dims)/d^3)`` seeds.

    Deterministic in ``seed``: seed points are drawn first, then one
    orientation per Voronoi seed; seeds that capture no voxel are dropped
    and the surviving labels compacted in seed order.
    """
    dims = tuple(int(d) for d in dims)
    if not 2 <= target_grain_size <= min(dims) / 2:
        raise ValueError(
            f"target_grain_size {target_grain_size} outside [2, {min(dims) / 2}] "
            f"for dims {dims}"
        )
    rng = derive_rng(seed, "mve")
    n_seeds = _seed_count(dims, target_grain_size)
    positions = rng.uniform(0.0, 1.0, (n_seeds, 3)) * np.asarray(dims, dtype=float)
    orientations = sample_orientations(texture_spec, n_seeds, rng)

    raw_labels = _assign_voxels(dims, positions)
    survivors, compact = np.unique(raw_labels, return_inverse=True)
    grain_id = compact.reshape(dims).astype(np.int32)
    meta = MveMeta(
        id=mve_id if mve_id is not None else f"mve-seed{seed}",
        target_grain_size=float(target_grain_size),
        texture=texture_spec,
        seed=int(seed),
    )
    return MVE(dims, grain_id, orientations[survivors], meta)


def _corpus_item(spec: CorpusSpec, index: int) -> MVE:
    rng = derive_rng(spec.seed, "corpus", index)
    child_seed = int(rng.integers(0, 2**63 - 1))
    if index < spec.untextured_count:
        size = spec.grain_sizes[index // spec.seeds_per_size]
        texture: TextureSpec = UniformTexture()
    else:
        size = spec.grain_sizes[int(rng.integers(len(spec.grain_sizes)))]
        texture = random_fiber_texture(rng, perturb_deg=spec.perturb_deg)
    return generate_mve(spec.dims, size, texture, child_seed, mve_id=f"mve-{index:04d}")


def generate_corpus(spec: CorpusSpec, jobs: int = 1) -> list:
    """All volume elements of a corpus plan, in index order.

    Every element derives its own random stream from ``(spec.seed,
    index)``, so the result is independent of scheduling; ``jobs > 1``
    fans the work over processes.
    """
    indices = range(spec.total_count)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_corpus_item, [spec] * spec.total_count, indices, chunksize=8))
    return [_corpus_item(spec, i) for i in indices]


def crop_subvolume(mve: MVE, origin, extent) -> MVE:
    """Axis-aligned sub-volume with compacted grain labels.

    Crops never wrap across the periodic boundary, so ``origin + extent``
    must stay within the parent dimensions.
    """
    origin = tuple(int(v) for v in origin)
    extent = tuple(int(v) for v in extent)
    for o, e, d in zip(origin, extent, mve.dims):
        if o < 0 or e <= 0 or o + e > d:
            raise ValueError(
                f"crop origin {origin} extent {extent} exceeds dims {mve.dims}"
            )
    window = mve.grain_id[
        origin[0]:origin[0] + extent[0],
        origin[1]:origin[1] + extent[1],
        origin[2]:origin[2] + extent[2],
    ]
    survivors, compact = np.unique(window, return_inverse=True)
    meta = replace(mve.meta, id=f"{mve.meta.id}/crop{origin[0]}-{origin[1]}-{origin[2]}")
    return MVE(
        extent,
        compact.reshape(extent).astype(np.int32),
        mve.grain_orientations[survivors],
        meta,
    )


# ---------------------------------------------------------------------------
# container file format
# ---------------------------------------------------------------------------

def _texture_token(spec: TextureSpec) -> str:
    if isinstance(spec, UniformTexture):
        return "uniform"
    if isinstance(spec, FiberTexture):
        c = ",".join(f"{v:.17g}" for v in spec.crystal_axis)
        s = ",".join(f"{v:.17g}" for v in spec.sample_axis)
        return f"fiber:{c}:{s}:{spec.perturb_deg:.17g}"
    raise TypeError(f"unsupported texture spec {spec!r}")


def _texture_from_token(token: str) -> TextureSpec:
    if token == "uniform":
        return UniformTexture()
    if token.startswith("fiber:"):
        _, c, s, perturb = token.split(":")
        return FiberTexture(
            tuple(float(v) for v in c.split(",")),
            tuple(float(v) for v in s.split(",")),
            perturb_deg=float(perturb),
        )
    raise ValueError(f"unknown texture token {token!r}")


def save_mve(mve: MVE, path, provenance: dict | None = None) -> None:
    """Single-file container: one structured header line, then grain ids
    as little-endian uint32 (x varying fastest), then the orientation
    table as little-endian float64 rows (phi1, Phi, phi2)."""
    tokens = [
        "mve", "1",
        f"id={mve.meta.id}",
        "dims=" + ",".join(str(d) for d in mve.dims),
        f"grains={mve.n_grains}",
        f"grain_size={mve.meta.target_grain_size:.17g}",
        f"texture={_texture_token(mve.meta.texture)}",
        f"seed={mve.meta.seed}",
    ]
    for key, value in (provenance or {}).items():
        tokens.append(f"{key}={value}")
    with open(path, "wb") as fh:
        fh.write((" ".join(tokens) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(mve.grain_id.ravel(order="F"), dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(mve.grain_orientations, dtype="<f8").tobytes())


def load_mve(path) -> MVE:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        payload = fh.read()
    tokens = header.split()
    if len(tokens) < 2 or tokens[0] != "mve" or tokens[1] != "1":
        raise ValueError(f"not a recognized volume-element file: {path}")
    fields = dict(token.split("=", 1) for token in tokens[2:])
    dims = tuple(int(v) for v in fields["dims"].split(","))
    n_grains = int(fields["grains"])
    n_vox = int(np.prod(dims))
    ids = np.frombuffer(payload, dtype="<u4", count=n_vox)
    grain_id = ids.reshape(dims, order="F").astype(np.int32)
    angles = np.frombuffer(payload, dtype="<f8", offset=n_vox * 4, count=n_grains * 3)
    meta = MveMeta(
        id=fields["id"],
        target_grain_size=float(fields["grain_size"]),
        texture=_texture_from_token(fields["texture"]),
        seed=int(fields["seed"]),
    )
    return MVE(dims, grain_id, angles.reshape(n_grains, 3).copy(), meta)
