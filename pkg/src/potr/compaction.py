"""Lighting-coefficient energy compaction via importance-weighted ridge regression.

Every surviving splat gets a fresh set of 16x3 coefficients that reproduce its
colors at the directions it is actually seen from, while spending as little
coefficient energy as possible elsewhere. Work happens in YCoCg so chrominance
can be regularized harder; near-parallel basis columns are dropped up front and
a second solve re-fits whatever survives quantization-level zeroing.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .sh import SH_DC, sh_basis
from .rasterizer import render_image

RGB_TO_YCOCG = np.array([
    [0.25, 0.5, 0.25],
    [0.5, 0.0, -0.5],
    [-0.25, 0.5, -0.25],
])
YCOCG_TO_RGB = np.array([
    [1.0, 1.0, -1.0],
    [1.0, 0.0, 1.0],
    [1.0, -1.0, -1.0],
])

# Probe directions for splats nobody sees: the 26 unit vectors toward the
# faces, edges, and corners of a cube.
_PROBES = np.array([
    (i, j, k)
    for i in (-1.0, 0.0, 1.0) for j in (-1.0, 0.0, 1.0) for k in (-1.0, 0.0, 1.0)
    if (i, j, k) != (0.0, 0.0, 0.0)
])
_PROBES = _PROBES / np.linalg.norm(_PROBES, axis=1, keepdims=True)


class RidgeError(RuntimeError):
    """Normal-equations factorization failed even with jitter."""


@dataclass
class CompactionConfig:
    lambda_y: float               # luminance ridge strength
    parallel_threshold: float     # |cosine| above which a basis column is dropped
    zero_threshold: float         # |coef| below this would quantize to integer 0

    def __post_init__(self):
        if self.lambda_y < 0:
            raise ValueError("lambda_y must be >= 0")
        if not 0 < self.parallel_threshold <= 1:
            raise ValueError("parallel_threshold must be in (0, 1]")

    @property
    def lambdas(self):
        """Per-channel ridge strengths; chrominance three times the luminance."""
        return np.array([self.lambda_y, 3.0 * self.lambda_y, 3.0 * self.lambda_y])


@dataclass
class SplatSystem:
    """One splat's color constraints over the cameras that see it."""

    Y: np.ndarray            # (N, 16) basis rows, importance-weighted
    C: np.ndarray            # (N, 3) YCoCg colors, importance-weighted
    weights: np.ndarray      # (N,) the per-camera importances
    column_mask: np.ndarray  # (16,) bool, True = retained


def rgb_to_ycocg(c):
    return np.asarray(c, dtype=np.float64) @ RGB_TO_YCOCG.T


def ycocg_to_rgb(c):
    return np.asarray(c, dtype=np.float64) @ YCOCG_TO_RGB.T


def coeffs_rgb_to_ycocg(sh):
    """(…, 3, 16) RGB coefficient blocks to YCoCg (linear per coefficient)."""
    return np.einsum("ij,...jc->...ic", RGB_TO_YCOCG, sh)


def coeffs_ycocg_to_rgb(sh):
    return np.einsum("ij,...jc->...ic", YCOCG_TO_RGB, sh)


def build_weighted_system(splat_index, splats, cameras, camera_importance):
    """Assemble the weighted linear system for one splat.

    camera_importance: (S,) importance of this splat per camera. Cameras where
    it is zero contribute nothing and are excluded. Returns None when no
    camera sees the splat.
    """
    w = np.asarray(camera_importance, dtype=np.float64)
    seen = np.nonzero(w > 0.0)[0]
    if len(seen) == 0:
        return None
    eyes = np.stack([cameras[s].eye for s in seen])
    d = splats.positions[splat_index] - eyes
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    basis = sh_basis(d)                      # (N, 16)
    colors = basis @ splats.sh[splat_index].T  # (N, 3) raw RGB at each direction
    ww = w[seen][:, None]
    return SplatSystem(Y=basis * ww, C=rgb_to_ycocg(colors) * ww,
                       weights=w[seen], column_mask=np.ones(16, dtype=bool))


def sparsify_parallel_columns(Y, parallel_threshold):
    """Greedy scan in index order: drop a column whenever an earlier retained
    column is sufficiently parallel to it; zero columns drop unconditionally.
    The DC column is always retained."""
    gram = Y.T @ Y
    norms = np.sqrt(np.diag(gram))
    mask = np.zeros(Y.shape[1], dtype=bool)
    mask[0] = True
    for i in range(1, Y.shape[1]):
        if norms[i] == 0.0:
            continue
        cos = np.abs(gram[i, mask]) / (norms[i] * norms[mask])
        if not (cos > parallel_threshold).any():
            mask[i] = True
    return mask


def _solve_channel(Y, c, mask, lam):
    """Ridge solve on the retained columns of one channel; masked entries of
    the returned coefficient vector are exact zeros. The DC column is never
    regularized."""
    cols = np.nonzero(mask)[0]
    sub = Y[:, cols]
    A = sub.T @ sub
    reg = np.full(len(cols), lam)
    reg[cols == 0] = 0.0
    A[np.diag_indices_from(A)] += reg
    b = sub.T @ c
    try:
        sol = cho_solve(cho_factor(A), b)
    except LinAlgError:
        A[np.diag_indices_from(A)] += 1e-10
        try:
            sol = cho_solve(cho_factor(A), b)
        except LinAlgError as e:
            raise RidgeError(f"singular system ({len(cols)} columns)") from e
    out = np.zeros(Y.shape[1], dtype=np.float64)
    out[cols] = sol
    return out


def ridge_solve(system: SplatSystem, lambdas):
    """Closed-form ridge solution per channel: (Y^T Y + G^T G)^-1 Y^T C on the
    retained columns. Returns (16, 3) with masked rows exactly zero."""
    out = np.zeros((system.Y.shape[1], 3), dtype=np.float64)
    for ch in range(3):
        out[:, ch] = _solve_channel(system.Y, system.C[:, ch],
                                    system.column_mask, lambdas[ch])
    return out


def _fallback_dc(splats, splat_index):
    """DC-only alias for an unseen splat: its own mean color over fixed probes."""
    colors = sh_basis(_PROBES) @ splats.sh[splat_index].T  # (26, 3) RGB
    rgb = np.zeros((3, 16), dtype=np.float64)
    rgb[:, 0] = colors.mean(axis=0) / SH_DC
    return rgb, coeffs_rgb_to_ycocg(rgb)


def compact_splat(splat_index, splats, cameras, camera_importance,
                  config: CompactionConfig):
    """Recompute one splat's coefficients.

    Two passes: solve, force to zero every AC coefficient small enough to
    quantize to zero (by removing its column for that channel), then re-fit
    the survivors. Returns (rgb, ycocg) coefficient blocks, both (3, 16).
    """
    system = build_weighted_system(splat_index, splats, cameras, camera_importance)
    if system is None:
        return _fallback_dc(splats, splat_index)
    system.column_mask = sparsify_parallel_columns(system.Y, config.parallel_threshold)

    lambdas = config.lambdas
    ycocg = np.zeros((3, 16), dtype=np.float64)
    for ch in range(3):
        first = _solve_channel(system.Y, system.C[:, ch], system.column_mask,
                               lambdas[ch])
        mask = system.column_mask.copy()
        small = np.abs(first) < config.zero_threshold
        small[0] = False
        mask &= ~small
        ycocg[ch] = _solve_channel(system.Y, system.C[:, ch], mask, lambdas[ch])
    return coeffs_ycocg_to_rgb(ycocg), ycocg


def compact_scene(splats, cameras, camera_importance, config: CompactionConfig,
                  threads=1):
    """Replace every splat's coefficients independently.

    camera_importance: (S, N) per-camera importances. Returns (new splats,
    ycocg coefficients (N, 3, 16), report). Splats whose solve fails keep
    their original coefficients and are listed in the report.
    """
    n = len(splats)
    new_rgb = splats.sh.copy()
    new_ycocg = coeffs_rgb_to_ycocg(splats.sh)
    failed = []
    fallback = 0

    def one(k):
        return compact_splat(k, splats, cameras, camera_importance[:, k], config)

    def run_range(lo, hi, out):
        for k in range(lo, hi):
            try:
                out[k] = one(k)
            except RidgeError as e:
                out[k] = e

    results = [None] * n
    if threads <= 1 or n < 256:
        run_range(0, n, results)
    else:
        step = (n + threads - 1) // threads
        spans = [(i, min(i + step, n)) for i in range(0, n, step)]
        with ThreadPoolExecutor(max_workers=len(spans)) as ex:
            list(ex.map(lambda sp: run_range(sp[0], sp[1], results), spans))

    for k in range(n):
        r = results[k]
        if isinstance(r, RidgeError):
            failed.append(k)
            continue
        rgb, ycocg = r
        if not np.any(camera_importance[:, k] > 0):
            fallback += 1
        new_rgb[k] = rgb
        new_ycocg[k] = ycocg

    from .scene import Splats

    out = Splats(splats.positions.copy(), new_rgb, splats.opacities.copy(),
                 splats.scales.copy(), splats.rotations.copy())
    return out, new_ycocg, {"failed": failed, "fallback_dc_only": fallback}


def ac_sparsity(ycocg):
    """Fraction of exactly-zero AC entries in (N, 3, 16) coefficients."""
    ac = ycocg[:, :, 1:]
    return float(np.mean(ac == 0.0))


def mean_abs_nonzero_ac(ycocg):
    ac = ycocg[:, :, 1:]
    nz = ac[ac != 0.0]
    return float(np.mean(np.abs(nz))) if len(nz) else 0.0


def sweep(splats, cameras, targets, camera_importance, lambdas, alphas,
          zero_threshold, threads=1):
    """Regularization sweep harness.

    Returns rows of (lambda, alpha, ac_sparsity, mean |nonzero AC|, mse vs the
    targets), one per (lambda, alpha) pair.
    """
    rows = []
    for alpha in alphas:
        for lam in lambdas:
            cfg = CompactionConfig(lambda_y=lam, parallel_threshold=alpha,
                                   zero_threshold=zero_threshold)
            compacted, ycocg, _ = compact_scene(splats, cameras,
                                                camera_importance, cfg,
                                                threads=threads)
            mse = 0.0
            for s, cam in enumerate(cameras):
                mse += float(np.mean((render_image(compacted, cam) - targets[s]) ** 2))
            rows.append((lam, alpha, ac_sparsity(ycocg),
                         mean_abs_nonzero_ac(ycocg), mse / len(cameras)))
    return rows
