"""Real spherical harmonics bases, degrees 0..3.

Basis i (1-based) corresponds to the degree/order pair via (l, m) -> l(l+1) + m + 1.
Index 1 is the view-independent DC basis; 2..16 are the AC bases. Uses the
orthonormal real SH convention common in graphics renderers (the same constants
and signs as the standard splatting implementations).
"""

import numpy as np

SH_DC = 0.28209479177387814  # Y_1 = 1 / (2 sqrt(pi))

_C1 = 0.4886025119029199
_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
       -1.0925484305920792, 0.5462742152960396)
_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
       0.3731763325901154, -0.4570457994644658, 1.445305721320277,
       -0.5900435899266435)

NUM_BASES = 16


def sh_basis(dirs):
    """Evaluate the 16 bases at unit directions.

    dirs: (..., 3) array of unit vectors. Returns (..., 16), column j holding
    basis j+1.
    """
    d = np.asarray(dirs, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z

    out = np.empty(d.shape[:-1] + (NUM_BASES,), dtype=np.float64)
    out[..., 0] = SH_DC
    out[..., 1] = -_C1 * y
    out[..., 2] = _C1 * z
    out[..., 3] = -_C1 * x
    out[..., 4] = _C2[0] * xy
    out[..., 5] = _C2[1] * yz
    out[..., 6] = _C2[2] * (2.0 * zz - xx - yy)
    out[..., 7] = _C2[3] * xz
    out[..., 8] = _C2[4] * (xx - yy)
    out[..., 9] = _C3[0] * y * (3.0 * xx - yy)
    out[..., 10] = _C3[1] * xy * z
    out[..., 11] = _C3[2] * y * (4.0 * zz - xx - yy)
    out[..., 12] = _C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
    out[..., 13] = _C3[4] * x * (4.0 * zz - xx - yy)
    out[..., 14] = _C3[5] * z * (xx - yy)
    out[..., 15] = _C3[6] * x * (xx - 3.0 * yy)
    return out


def sh_basis_eval(index, direction):
    """Single basis value. index is 1-based (1..16)."""
    if not 1 <= index <= NUM_BASES:
        raise ValueError(f"SH basis index must be in 1..16, got {index}")
    return float(sh_basis(np.asarray(direction, dtype=np.float64))[index - 1])


def sh_index(l, m):
    """Degree/order pair to 1-based basis index."""
    return l * (l + 1) + m + 1


def eval_sh_color(coeffs, direction):
    """Color from lighting coefficients at a unit direction.

    coeffs: (16,) for one channel or (..., 16) for several. Returns the raw
    linear combination; compositing is responsible for clamping at zero.
    """
    basis = sh_basis(np.asarray(direction, dtype=np.float64))
    return np.asarray(coeffs, dtype=np.float64) @ basis


def fibonacci_sphere(n):
    """Deterministic quasi-uniform unit directions (golden-spiral lattice)."""
    i = np.arange(n, dtype=np.float64) + 0.5
    phi = np.pi * (1.0 + np.sqrt(5.0)) * i
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
