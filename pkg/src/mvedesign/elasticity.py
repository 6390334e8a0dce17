"""Cubic elasticity, stiffness rotation, and the iso-strain stress oracle.

Voigt convention throughout: component order (11, 22, 33, 23, 13, 12)
with engineering shear strains, so the 6x6 stiffness maps strain to
stress without scale factors.  Stiffnesses are in GPa, stresses in MPa.
"""

from dataclasses import dataclass

import numpy as np

from .texture import euler_to_rotation
from .validation import as_float_array, check_rotation_matrix

#: Voigt index -> tensor index pair
_VOIGT_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))

#: Nickel-superalloy single-crystal constants, GPa.
NI_SUPERALLOY_GPA = (199.0, 128.0, 99.0)

#: Default macroscopic load: 50 MPa uniaxial tension along z.
DEFAULT_LOAD_MPA = (0.0, 0.0, 50.0, 0.0, 0.0, 0.0)


def cubic_stiffness(c11: float, c12: float, c44: float) -> np.ndarray:
    """Crystal-frame cubic stiffness in Voigt form.

    Rejects elastically unstable constants (C11 <= |C12|,
    C11 + 2*C12 <= 0, or C44 <= 0).
    """
    if c11 <= abs(c12) or c11 + 2.0 * c12 <= 0.0 or c44 <= 0.0:
        raise ValueError(
            f"unstable cubic constants C11={c11}, C12={c12}, C44={c44}"
        )
    C = np.zeros((6, 6))
    C[:3, :3] = c12
    np.fill_diagonal(C[:3, :3], c11)
    C[3, 3] = C[4, 4] = C[5, 5] = c44
    return C


def voigt_to_tensor(C: np.ndarray) -> np.ndarray:
    """Expand a 6x6 stiffness into the full 3x3x3x3 tensor."""
    C = as_float_array(C, "C", shape=(6, 6))
    full = np.empty((3, 3, 3, 3))
    for a, (i, j) in enumerate(_VOIGT_PAIRS):
        for b, (k, l) in enumerate(_VOIGT_PAIRS):
            full[i, j, k, l] = C[a, b]
            full[j, i, k, l] = C[a, b]
            full[i, j, l, k] = C[a, b]
            full[j, i, l, k] = C[a, b]
    return full


def tensor_to_voigt(full: np.ndarray) -> np.ndarray:
    C = np.empty(full.shape[:-4] + (6, 6))
    for a, (i, j) in enumerate(_VOIGT_PAIRS):
        for b, (k, l) in enumerate(_VOIGT_PAIRS):
            C[..., a, b] = full[..., i, j, k, l]
    return C


def rotate_stiffness(C: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Stiffness expressed in the frame reached by rotation ``R``,
    computed through the full fourth-order transformation."""
    check_rotation_matrix(R, "R")
    full = voigt_to_tensor(C)
    rotated = np.einsum("ia,jb,kc,ld,abcd->ijkl", R, R, R, R, full, optimize=True)
    return tensor_to_voigt(rotated)


def rotate_stiffness_batch(C: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Rotate one stiffness by a stack of rotations; returns (..., 6, 6)."""
    full = voigt_to_tensor(C)
    rotated = np.einsum("...ia,...jb,...kc,...ld,abcd->...ijkl", R, R, R, R, full, optimize=True)
    return tensor_to_voigt(rotated)


def stiffness_invariants(C: np.ndarray) -> tuple:
    """The two linear rotation invariants: sum_ij C_iijj and sum_ij C_ijij.

    For cubic constants these equal 3*C11 + 6*C12 and 3*C11 + 6*C44.
    """
    full = voigt_to_tensor(C)
    dilatational = float(np.einsum("iijj->", full))
    deviatoric = float(np.einsum("ijij->", full))
    return dilatational, deviatoric


@dataclass
class StressField:
    """Per-voxel stress in Voigt order (MPa) plus the applied load."""

    dims: tuple
    stress: np.ndarray  # shape dims + (6,)
    applied: np.ndarray  # shape (6,)

    def volume_average(self) -> np.ndarray:
        return self.stress.reshape(-1, 6).mean(axis=0)


def taylor_stress_field(mve, applied=DEFAULT_LOAD_MPA,
                        constants=NI_SUPERALLOY_GPA, smooth: bool = False) -> StressField:
    """Iso-strain stress estimate under a macroscopic load.

    The volume-averaged stiffness fixes one common strain,
    ``eps = mean(C)^-1 @ applied``; each voxel then carries the stress of
    its own rotated stiffness at that strain.  The volume average of the
    result reproduces the applied load identically.
    """
    sigma = as_float_array(applied, "applied", shape=(6,))
    C0 = cubic_stiffness(*constants) * 1e3  # GPa -> MPa
    rotations = euler_to_rotation(mve.grain_orientations)
    grain_C = rotate_stiffness_batch(C0, rotations)  # (G, 6, 6)

    counts = np.bincount(mve.grain_id.ravel(), minlength=mve.n_grains)
    weights = counts / mve.grain_id.size
    mean_C = np.einsum("g,gij->ij", weights, grain_C)
    try:
        strain = np.linalg.solve(mean_C, sigma)
    except np.linalg.LinAlgError as exc:
        raise ValueError("volume-average stiffness is singular") from exc

    grain_stress = grain_C @ strain  # (G, 6)
    field = grain_stress[mve.grain_id]
    if smooth:
        field = _box_smooth_periodic(field)
    return StressField(tuple(mve.dims), field, sigma)


def _box_smooth_periodic(field: np.ndarray) -> np.ndarray:
    """One pass of periodic 3x3x3 box averaging; preserves the mean."""
    out = np.zeros_like(field)
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                out += np.roll(field, (dx, dy, dz), axis=(0, 1, 2))
    return out / 27.0


def von_mises(stress: np.ndarray) -> np.ndarray:
    """Equivalent stress of Voigt-ordered components (..., 6)."""
    s = np.asarray(stress, dtype=float)
    s11, s22, s33 = s[..., 0], s[..., 1], s[..., 2]
    s23, s13, s12 = s[..., 3], s[..., 4], s[..., 5]
    return np.sqrt(
        0.5 * ((s11 - s22) ** 2 + (s22 - s33) ** 2 + (s33 - s11) ** 2)
        + 3.0 * (s23 ** 2 + s13 ** 2 + s12 ** 2)
    )


#: Column labels of the 13-component field summary.
SUMMARY_LABELS = (
    "mean_s11", "mean_s22", "mean_s33", "mean_s23", "mean_s13", "mean_s12",
    "std_s11", "std_s22", "std_s33", "std_s23", "std_s13", "std_s12",
    "mean_vm",
)


def field_summary(field: StressField) -> np.ndarray:
    """13-vector: per-component mean and standard deviation of the six
    stress components, plus the mean von Mises stress."""
    flat = field.stress.reshape(-1, 6)
    return np.concatenate([
        flat.mean(axis=0),
        flat.std(axis=0),
        [float(von_mises(flat).mean())],
    ])


# ---------------------------------------------------------------------------
# stress field file format
# ---------------------------------------------------------------------------

def save_stress_field(field: StressField, path, provenance: dict | None = None) -> None:
    """Header line (dims, applied load, units) then little-endian float64
    payload, six components per voxel, x varying fastest."""
    tokens = [
        "stress", "1",
        "dims=" + ",".join(str(d) for d in field.dims),
        "applied=" + ",".join(f"{v:.17g}" for v in field.applied),
        "units=MPa",
    ]
    for key, value in (provenance or {}).items():
        tokens.append(f"{key}={value}")
    flat = field.stress.reshape(field.dims + (6,)).transpose(2, 1, 0, 3)
    with open(path, "wb") as fh:
        fh.write((" ".join(tokens) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(flat, dtype="<f8").tobytes())


def load_stress_field(path) -> StressField:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        payload = fh.read()
    tokens = header.split()
    if len(tokens) < 2 or tokens[0] != "stress" or tokens[1] != "1":
        raise ValueError(f"not a recognized stress-field file: {path}")
    fields = dict(token.split("=", 1) for token in tokens[2:])
    dims = tuple(int(v) for v in fields["dims"].split(","))
    applied = np.array([float(v) for v in fields["applied"].split(",")])
    n = int(np.prod(dims)) * 6
    flat = np.frombuffer(payload, dtype="<f8", count=n)
    stress = flat.reshape((dims[2], dims[1], dims[0], 6)).transpose(2, 1, 0, 3).copy()
    return StressField(dims, stress, applied)
