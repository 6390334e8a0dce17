"""Rotation algebra, crystallographic texture sampling, symmetrized l=4
harmonics on the rotation group, and pole-figure densities.

Conventions
-----------
* Orientations are Bunge Euler triplets ``(phi1, Phi, phi2)`` in radians,
  stored as float arrays of shape ``(..., 3)``.  Canonical ranges are
  ``phi1, phi2 in [0, 2*pi)`` and ``Phi in [0, pi]``.
* ``euler_to_rotation`` returns ``R = Rz(phi2) @ Rx(Phi) @ Rz(phi1)``, the
  map from sample-frame to crystal-frame coordinates.  A crystal direction
  ``d`` therefore appears in the sample frame as ``R.T @ d``, and a cubic
  crystal symmetry rotation ``S`` acts by premultiplication ``R -> S @ R``.
* The harmonic basis is ``T[m, n](g) = exp(i*m*phi2) * d4[m, n](Phi) *
  exp(i*n*phi1)`` symmetrized over ``m in {-4, 0, +4}`` with the cubic
  weights ``sqrt(7/12)`` (m = 0) and ``sqrt(5/24)`` (m = +/-4).  Any fixed
  unitary convention gives identical descriptor distances downstream; this
  one keeps the n = 0 component real.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import permutations, product
from typing import TYPE_CHECKING, Union

import numpy as np

from .seeding import derive_rng
from .validation import as_float_array, check_unit_vector

if TYPE_CHECKING:
    from .microstructure import MVE

GSH_L = 4
GSH_ORDERS = np.arange(-4, 5)
_CUBIC_M = (-4, 0, 4)
_CUBIC_WEIGHTS = (math.sqrt(5.0 / 24.0), math.sqrt(7.0 / 12.0), math.sqrt(5.0 / 24.0))

#: Analytic bound on |basis component| (|d| <= 1, weights sum below this).
GSH_COMPONENT_BOUND = math.sqrt(7.0 / 12.0) + 2.0 * math.sqrt(5.0 / 24.0)

_TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# rotation algebra
# ---------------------------------------------------------------------------

def rot_z(theta) -> np.ndarray:
    t = np.asarray(theta, dtype=float)
    c, s = np.cos(t), np.sin(t)
    zero, one = np.zeros_like(c), np.ones_like(c)
    return np.stack(
        [
            np.stack([c, -s, zero], axis=-1),
            np.stack([s, c, zero], axis=-1),
            np.stack([zero, zero, one], axis=-1),
        ],
        axis=-2,
    )


def rot_x(theta) -> np.ndarray:
    t = np.asarray(theta, dtype=float)
    c, s = np.cos(t), np.sin(t)
    zero, one = np.zeros_like(c), np.ones_like(c)
    return np.stack(
        [
            np.stack([one, zero, zero], axis=-1),
            np.stack([zero, c, -s], axis=-1),
            np.stack([zero, s, c], axis=-1),
        ],
        axis=-2,
    )


def euler_to_rotation(angles) -> np.ndarray:
    """Rotation matrix ``Rz(phi2) @ Rx(Phi) @ Rz(phi1)`` for Bunge angles.

    Accepts a single triplet or an array of shape ``(..., 3)``; returns
    matrices of shape ``(..., 3, 3)``.
    """
    a = as_float_array(angles, "angles")
    if a.shape[-1] != 3:
        raise ValueError("angles must have trailing dimension 3")
    return rot_z(a[..., 2]) @ rot_x(a[..., 1]) @ rot_z(a[..., 0])


def canonicalize_euler(angles) -> np.ndarray:
    """Wrap Euler triplets into the canonical Bunge ranges.

    Uses ``Rx(-Phi) = Rz(pi) Rx(Phi) Rz(pi)``: a negative (or reflex) tilt
    folds back into ``[0, pi]`` while shifting both z-angles by pi.
    """
    a = np.array(as_float_array(angles, "angles"), copy=True)
    a[..., 1] = np.mod(a[..., 1], _TWO_PI)
    flip = a[..., 1] > math.pi
    a[..., 1] = np.where(flip, _TWO_PI - a[..., 1], a[..., 1])
    a[..., 0] = np.where(flip, a[..., 0] + math.pi, a[..., 0])
    a[..., 2] = np.where(flip, a[..., 2] + math.pi, a[..., 2])
    a[..., 0] = np.mod(a[..., 0], _TWO_PI)
    a[..., 2] = np.mod(a[..., 2], _TWO_PI)
    return a


def rotation_to_euler(R) -> np.ndarray:
    """Inverse of :func:`euler_to_rotation` up to the gimbal degeneracy.

    At ``Phi in {0, pi}`` only the sum (respectively difference) of the
    z-angles is determined; the representative with ``phi2 = 0`` is
    returned there.
    """
    mat = as_float_array(R, "R")
    if mat.shape[-2:] != (3, 3):
        raise ValueError("R must have shape (..., 3, 3)")
    cos_big = np.clip(mat[..., 2, 2], -1.0, 1.0)
    sin_big = np.hypot(mat[..., 2, 0], mat[..., 2, 1])
    # atan2 keeps full precision at both poles, unlike arccos of R[2, 2]
    big = np.arctan2(sin_big, cos_big)
    regular = sin_big > 1e-9
    phi1 = np.arctan2(mat[..., 2, 0], mat[..., 2, 1])
    phi2 = np.arctan2(mat[..., 0, 2], -mat[..., 1, 2])
    # Phi ~ 0: R = Rz(phi1 + phi2); Phi ~ pi: only phi1 - phi2 is fixed,
    # with R[0, 1] = -sin(phi1 - phi2) and R[0, 0] = cos(phi1 - phi2).
    gimbal_top = np.arctan2(mat[..., 1, 0], mat[..., 0, 0])
    gimbal_bottom = np.arctan2(-mat[..., 0, 1], mat[..., 0, 0])
    phi1 = np.where(regular, phi1, np.where(cos_big > 0.0, gimbal_top, gimbal_bottom))
    phi2 = np.where(regular, phi2, 0.0)
    return canonicalize_euler(np.stack([phi1, big, phi2], axis=-1))


def quaternion_to_matrix(q) -> np.ndarray:
    """Unit quaternion(s) ``(w, x, y, z)`` to rotation matrices."""
    arr = as_float_array(q, "q")
    w, x, y, z = arr[..., 0], arr[..., 1], arr[..., 2], arr[..., 3]
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1),
        ],
        axis=-2,
    )


def random_orientations(n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` orientations drawn from the uniform (Haar) measure on SO(3)."""
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return rotation_to_euler(quaternion_to_matrix(q))


def axis_angle_matrix(axis, angle) -> np.ndarray:
    """Rodrigues rotation about a unit axis; ``angle`` may be an array."""
    k = check_unit_vector(axis, "axis")
    t = np.asarray(angle, dtype=float)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    c = np.cos(t)[..., None, None]
    s = np.sin(t)[..., None, None]
    return c * np.eye(3) + s * kx + (1 - c) * np.outer(k, k)


def rotation_between(a, b) -> np.ndarray:
    """Minimal rotation mapping unit vector ``a`` onto unit vector ``b``."""
    va = check_unit_vector(a, "a")
    vb = check_unit_vector(b, "b")
    cross = np.cross(va, vb)
    sin_ang = float(np.linalg.norm(cross))
    cos_ang = float(np.dot(va, vb))
    if sin_ang < 1e-12:
        if cos_ang > 0.0:
            return np.eye(3)
        # antiparallel: half-turn about any axis perpendicular to a
        helper = np.eye(3)[int(np.argmin(np.abs(va)))]
        perp = np.cross(va, helper)
        perp /= np.linalg.norm(perp)
        return axis_angle_matrix(perp, math.pi)
    return axis_angle_matrix(cross / sin_ang, math.atan2(sin_ang, cos_ang))


@lru_cache(maxsize=1)
def _cubic_rotation_cache() -> np.ndarray:
    mats = []
    for perm in permutations(range(3)):
        for signs in product((1.0, -1.0), repeat=3):
            m = np.zeros((3, 3))
            for row, (col, sign) in enumerate(zip(perm, signs)):
                m[row, col] = sign
            if np.linalg.det(m) > 0.5:
                mats.append(m)
    out = np.array(mats)
    out.setflags(write=False)
    return out


def cubic_rotations() -> np.ndarray:
    """The 24 proper rotations of the cube, as signed permutation matrices."""
    return _cubic_rotation_cache()


# ---------------------------------------------------------------------------
# texture specifications and sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UniformTexture:
    """No preferred orientation: grains drawn uniformly on SO(3)."""

    kind = "uniform"


@dataclass(frozen=True)
class FiberTexture:
    """One crystal axis locked to one sample axis, free spin about it.

    Sampled orientations satisfy ``euler_to_rotation(o) @ crystal_axis ==
    sample_axis`` exactly (before perturbation).  ``perturb_deg`` adds an
    independent uniform jitter in ``(-perturb_deg, +perturb_deg)`` degrees
    to each Euler angle, turning a sharp fiber into a diffuse one.
    """

    crystal_axis: tuple
    sample_axis: tuple
    perturb_deg: float = 0.0

    kind = "fiber"

    def __post_init__(self):
        c = check_unit_vector(self.crystal_axis, "crystal_axis")
        s = check_unit_vector(self.sample_axis, "sample_axis")
        object.__setattr__(self, "crystal_axis", tuple(float(v) for v in c))
        object.__setattr__(self, "sample_axis", tuple(float(v) for v in s))
        if self.perturb_deg < 0:
            raise ValueError("perturb_deg must be >= 0")


TextureSpec = Union[UniformTexture, FiberTexture]


def fiber_orientation(crystal_axis, sample_axis, spin: float) -> np.ndarray:
    """Single fiber orientation with an explicit spin angle about the
    sample axis."""
    base = rotation_between(crystal_axis, sample_axis)
    return rotation_to_euler(axis_angle_matrix(sample_axis, float(spin)) @ base)


def sample_orientations(spec: TextureSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` orientations according to a texture specification."""
    if isinstance(spec, UniformTexture):
        return random_orientations(n, rng)
    if isinstance(spec, FiberTexture):
        base = rotation_between(spec.crystal_axis, spec.sample_axis)
        spins = rng.uniform(0.0, _TWO_PI, n)
        mats = axis_angle_matrix(spec.sample_axis, spins) @ base
        angles = rotation_to_euler(mats)
        if spec.perturb_deg > 0.0:
            half = math.radians(spec.perturb_deg)
            angles = canonicalize_euler(angles + rng.uniform(-half, half, (n, 3)))
        return angles
    raise TypeError(f"unsupported texture spec {spec!r}")


def sample_orientation(spec: TextureSpec, rng: np.random.Generator) -> np.ndarray:
    return sample_orientations(spec, 1, rng)[0]


def random_fiber_texture(rng: np.random.Generator, perturb_deg: float = 10.0) -> FiberTexture:
    """Fiber spec with independently uniform crystal and sample axes."""
    axes = rng.normal(size=(2, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    return FiberTexture(tuple(axes[0]), tuple(axes[1]), perturb_deg=perturb_deg)


# ---------------------------------------------------------------------------
# Wigner d and the symmetrized basis
# ---------------------------------------------------------------------------

def wigner_d(l: int, m: int, n: int, beta) -> np.ndarray:
    """Wigner little-d ``d^l_{m,n}(beta)`` via the explicit factorial series.

    Vectorized over ``beta``; exact for the small fixed degrees used here.
    """
    b = np.asarray(beta, dtype=float)
    c, s = np.cos(b / 2.0), np.sin(b / 2.0)
    pref = math.sqrt(
        math.factorial(l + m) * math.factorial(l - m)
        * math.factorial(l + n) * math.factorial(l - n)
    )
    total = np.zeros_like(b)
    for t in range(max(0, n - m), min(l + n, l - m) + 1):
        den = (
            math.factorial(l + n - t) * math.factorial(t)
            * math.factorial(m - n + t) * math.factorial(l - m - t)
        )
        sign = -1.0 if (m - n + t) % 2 else 1.0
        total = total + (sign / den) * c ** (2 * l - m + n - 2 * t) * s ** (m - n + 2 * t)
    return pref * total


def gsh_basis(angles) -> np.ndarray:
    """Cubic-symmetrized degree-4 basis values at the given orientations.

    Returns a complex array of shape ``(..., 9)`` indexed by ``n = -4..4``.
    The symmetrization makes the value invariant under the 24 cubic
    rotations applied on the crystal side of the orientation.
    """
    a = as_float_array(angles, "angles")
    if a.shape[-1] != 3:
        raise ValueError("angles must have trailing dimension 3")
    phi1, big, phi2 = a[..., 0], a[..., 1], a[..., 2]
    out = np.zeros(a.shape[:-1] + (9,), dtype=complex)
    for weight, m in zip(_CUBIC_WEIGHTS, _CUBIC_M):
        phase2 = np.exp(1j * m * phi2)
        for j, n in enumerate(GSH_ORDERS):
            out[..., j] += weight * phase2 * wigner_d(GSH_L, m, int(n), big) * np.exp(1j * n * phi1)
    return out


def volume_fractions(mve: "MVE") -> np.ndarray:
    """Per-grain voxel fractions; sums to one."""
    counts = np.bincount(mve.grain_id.ravel(), minlength=len(mve.grain_orientations))
    return counts / mve.grain_id.size


def gsh_coefficients(mve: "MVE") -> np.ndarray:
    """Volume-averaged basis coefficients ``(2l+1) * mean(conj(basis))``.

    The mean runs over voxels, which reduces to a voxel-count weighted mean
    over grains because orientation is constant within a grain.
    """
    w = volume_fractions(mve)
    basis = gsh_basis(mve.grain_orientations)
    return (2 * GSH_L + 1) * (w @ np.conj(basis))


@lru_cache(maxsize=4)
def single_crystal_gsh_max(samples: int = 200_000, seed: int = 74250) -> float:
    """Numerical estimate of the largest basis-component magnitude over
    single orientations.  Used to scale Monte-Carlo decay bounds."""
    rng = derive_rng(seed, "single-crystal-gsh-max")
    worst = 0.0
    for start in range(0, samples, 50_000):
        block = min(50_000, samples - start)
        worst = max(worst, float(np.abs(gsh_basis(random_orientations(block, rng))).max()))
    return worst


# ---------------------------------------------------------------------------
# pole figures
# ---------------------------------------------------------------------------

_LAMBERT_RADIUS = math.sqrt(2.0)


def pole_family_directions(family) -> np.ndarray:
    """All distinct cubic-equivalent directions of an (hkl) family, with
    antipodes identified through the full set of signed images."""
    base = np.asarray(family, dtype=float)
    norm = float(np.linalg.norm(base))
    if norm == 0.0:
        raise ValueError("pole family must be a nonzero direction")
    base = base / norm
    images = np.concatenate([cubic_rotations() @ base, -(cubic_rotations() @ base)])
    _, keep = np.unique(np.round(images, 9), axis=0, return_index=True)
    return images[np.sort(keep)]


@lru_cache(maxsize=8)
def _lambert_bin_areas(resolution: int, supersample: int = 16) -> np.ndarray:
    """Relative solid angle captured by each square bin of the Lambert
    disk, estimated on a fine subgrid (the projection is area-preserving,
    so disk area fractions equal solid angle fractions)."""
    fine = resolution * supersample
    centers = (np.arange(fine) + 0.5) / fine * (2 * _LAMBERT_RADIUS) - _LAMBERT_RADIUS
    xx, yy = np.meshgrid(centers, centers, indexing="ij")
    inside = (xx * xx + yy * yy) <= (2.0 + 1e-12)
    coarse = inside.reshape(resolution, supersample, resolution, supersample)
    counts = coarse.sum(axis=(1, 3)).astype(float)
    areas = counts / counts.sum()
    areas.setflags(write=False)
    return areas


@dataclass
class PoleDensity:
    """Upper-hemisphere pole density on an equal-area square grid.

    ``density`` is in multiples-of-random units; ``bin_area`` holds each
    bin's share of the hemisphere solid angle (zero outside the projected
    disk).  The area-weighted mean density is one by construction.
    """

    family: tuple
    resolution: int
    density: np.ndarray
    bin_area: np.ndarray

    def weighted_mean(self) -> float:
        return float(np.sum(self.density * self.bin_area) / np.sum(self.bin_area))

    def bin_centers_angles(self):
        """Azimuth/polar angles (radians) of bin centers inside the disk."""
        res = self.resolution
        centers = (np.arange(res) + 0.5) / res * (2 * _LAMBERT_RADIUS) - _LAMBERT_RADIUS
        xx, yy = np.meshgrid(centers, centers, indexing="ij")
        r2 = np.minimum(xx * xx + yy * yy, 2.0)
        z = 1.0 - r2 / 2.0
        scale = np.sqrt(np.maximum(1.0 - r2 / 4.0, 0.0))
        azimuth = np.arctan2(yy * scale, xx * scale)
        polar = np.arccos(np.clip(z, -1.0, 1.0))
        return azimuth, polar


def pole_density(mve: "MVE", pole_family=(1, 0, 0), grid_resolution: int = 32) -> PoleDensity:
    """Accumulate cubic-equivalent poles of every voxel into equal-area
    upper-hemisphere bins, normalized to multiples-of-random."""
    if grid_resolution < 8:
        raise ValueError("grid_resolution must be at least 8 bins per axis")
    rotations = euler_to_rotation(mve.grain_orientations)
    directions = pole_family_directions(pole_family)
    # crystal -> sample frame is R^T
    sample_dirs = np.einsum("gba,eb->gea", rotations, directions).reshape(-1, 3)
    weights = np.repeat(volume_fractions(mve), len(directions)) / len(directions)

    x, y, z = sample_dirs[:, 0].copy(), sample_dirs[:, 1].copy(), sample_dirs[:, 2].copy()
    flip = (z < 0) | ((z == 0) & ((x < 0) | ((x == 0) & (y < 0))))
    x[flip] *= -1.0
    y[flip] *= -1.0
    z[flip] *= -1.0
    z = np.clip(z, 0.0, 1.0)

    factor = np.sqrt(2.0 / (1.0 + z))
    px, py = factor * x, factor * y
    res = grid_resolution
    ix = np.clip(((px + _LAMBERT_RADIUS) / (2 * _LAMBERT_RADIUS) * res).astype(int), 0, res - 1)
    iy = np.clip(((py + _LAMBERT_RADIUS) / (2 * _LAMBERT_RADIUS) * res).astype(int), 0, res - 1)
    counts = np.bincount(ix * res + iy, weights=weights, minlength=res * res)
    counts = counts.reshape(res, res)

    areas = np.array(_lambert_bin_areas(res))
    stranded = (areas <= 0.0) & (counts > 0.0)
    if np.any(stranded):
        # boundary sliver missed by the area subgrid; give it a half-cell
        areas[stranded] = 0.5 * areas[areas > 0].min()
        areas /= areas.sum()
    density = np.zeros_like(counts)
    np.divide(counts, areas, out=density, where=areas > 0)
    return PoleDensity(tuple(pole_family), res, density, areas)


def export_pole_density(pole: PoleDensity, path, provenance: dict | None = None) -> None:
    """Write bin-center azimuth/polar angles (radians) and densities as CSV."""
    azimuth, polar = pole.bin_centers_angles()
    mask = pole.bin_area > 0
    with open(path, "w", newline="\n") as fh:
        for key, value in (provenance or {}).items():
            fh.write(f"# {key}={value}\n")
        fh.write(f"# pole_family={''.join(str(int(v)) for v in pole.family)}\n")
        fh.write("azimuth,polar,density\n")
        for az, po, dens in zip(azimuth[mask], polar[mask], pole.density[mask]):
            fh.write(f"{az:.17g},{po:.17g},{dens:.17g}\n")
