"""Instrumented CPU forward renderer.

One compositing pass produces, besides the image, everything the encoder
needs: per-pixel contribution lists (splat, alpha, transmittance, partial
color), per-splat importance, and the closed-form per-pixel color change of
removing any recorded splat — without re-rendering.

Conventions: cameras look down their local +z axis, pixel (0, 0) is the
top-left corner, and the screen-space Gaussian is sampled at pixel centers
(x + 0.5, y + 0.5). Images composite over a black background and are not
clamped to [0, 1]; clamping happens only on PNG export.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .sh import sh_basis

ALPHA_FLOOR = 1.0 / 255.0   # contributions below this are not recorded
ALPHA_CAP = 0.999           # keeps 1/(1-alpha) finite in the removal algebra
T_TERMINATE = 1e-4          # per-pixel early termination threshold
NEAR_CLIP = 0.01
COV_DILATION = 0.3          # px^2 low-pass added to the 2D covariance diagonal


@dataclass
class Projection:
    """Screen-space footprints of every splat for one camera."""

    mean2d: np.ndarray      # (N, 2) pixel coords
    cov2d: np.ndarray       # (N, 3) upper triangle (a, b, c) after dilation
    view_depth: np.ndarray  # (N,) camera-space z
    radius: np.ndarray      # (N,) 3-sigma screen extent
    valid: np.ndarray       # (N,) bool, False = culled


def quat_to_rotmat(q):
    """(N, 4) wxyz unit quaternions to (N, 3, 3) rotation matrices."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3), dtype=np.float64)
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def project_splats(splats, camera) -> Projection:
    """EWA-style projection of all splats into one camera.

    The perspective map is linearized at each splat center (Jacobian J), so the
    screen-space density stays Gaussian: cov2d = J W Sigma W^T J^T with W the
    world-to-camera rotation and Sigma = R diag(s^2) R^T.
    """
    n = len(splats)
    W_rot = camera.rotation
    t = (splats.positions - camera.eye) @ W_rot.T
    depth = t[:, 2]
    valid = depth > NEAR_CLIP

    safe_z = np.where(valid, depth, 1.0)
    inv_z = 1.0 / safe_z
    mx = camera.fx * t[:, 0] * inv_z + camera.cx
    my = camera.fy * t[:, 1] * inv_z + camera.cy
    mean2d = np.stack([mx, my], axis=1)

    Rq = quat_to_rotmat(splats.rotations)
    Sigma = np.einsum("nij,nj,nkj->nik", Rq, splats.scales ** 2, Rq)
    Sigma_view = np.einsum("ij,njk,lk->nil", W_rot, Sigma, W_rot)

    J = np.zeros((n, 2, 3), dtype=np.float64)
    J[:, 0, 0] = camera.fx * inv_z
    J[:, 0, 2] = -camera.fx * t[:, 0] * inv_z * inv_z
    J[:, 1, 1] = camera.fy * inv_z
    J[:, 1, 2] = -camera.fy * t[:, 1] * inv_z * inv_z
    cov = np.einsum("nij,njk,nlk->nil", J, Sigma_view, J)
    a = cov[:, 0, 0] + COV_DILATION
    b = cov[:, 0, 1]
    c = cov[:, 1, 1] + COV_DILATION
    cov2d = np.stack([a, b, c], axis=1)

    mid = 0.5 * (a + c)
    det = a * c - b * b
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = 3.0 * np.sqrt(lam_max)

    valid &= (mx >= -radius) & (mx <= camera.width + radius)
    valid &= (my >= -radius) & (my <= camera.height + radius)
    return Projection(mean2d, cov2d, depth, radius, valid)


def splat_colors(splats, camera):
    """Per-splat colors for one camera, clamped at zero for compositing.

    The view direction runs from the camera eye to the splat center.
    """
    d = splats.positions - camera.eye
    norm = np.linalg.norm(d, axis=1, keepdims=True)
    norm[norm == 0] = 1.0
    basis = sh_basis(d / norm)
    raw = np.einsum("nci,ni->nc", splats.sh, basis)
    return np.maximum(raw, 0.0)


@njit(cache=True, nogil=True)
def _composite(mean2d, cov_a, cov_b, cov_c, radius, opac, colors, height, width):
    """Front-to-back alpha compositing with contribution recording.

    Splats must already be depth-sorted. Records (splat, pixel, alpha, T,
    partial color before the contribution) for every composited sample.
    """
    image = np.zeros((height, width, 3), dtype=np.float64)
    trans = np.ones((height, width), dtype=np.float64)

    cap = 16384
    c_splat = np.empty(cap, dtype=np.int64)
    c_pix = np.empty(cap, dtype=np.int64)
    c_alpha = np.empty(cap, dtype=np.float64)
    c_t = np.empty(cap, dtype=np.float64)
    c_partial = np.empty((cap, 3), dtype=np.float64)
    n = 0

    for v in range(mean2d.shape[0]):
        mx = mean2d[v, 0]
        my = mean2d[v, 1]
        r = radius[v]
        x0 = int(np.floor(mx - r))
        x1 = int(np.ceil(mx + r))
        y0 = int(np.floor(my - r))
        y1 = int(np.ceil(my + r))
        if x0 < 0:
            x0 = 0
        if y0 < 0:
            y0 = 0
        if x1 > width - 1:
            x1 = width - 1
        if y1 > height - 1:
            y1 = height - 1
        if x0 > x1 or y0 > y1:
            continue
        det = cov_a[v] * cov_c[v] - cov_b[v] * cov_b[v]
        if det <= 0.0:
            continue
        ia = cov_c[v] / det
        ib = -cov_b[v] / det
        ic = cov_a[v] / det
        o = opac[v]
        r0 = colors[v, 0]
        g0 = colors[v, 1]
        b0 = colors[v, 2]
        for py in range(y0, y1 + 1):
            dy = (py + 0.5) - my
            for px in range(x0, x1 + 1):
                t_here = trans[py, px]
                if t_here < T_TERMINATE:
                    continue
                dx = (px + 0.5) - mx
                power = -0.5 * (ia * dx * dx + ic * dy * dy) - ib * dx * dy
                alpha = o * np.exp(power)
                if alpha > ALPHA_CAP:
                    alpha = ALPHA_CAP
                if alpha < ALPHA_FLOOR:
                    continue
                if n == cap:
                    cap *= 2
                    ns = np.empty(cap, dtype=np.int64)
                    ns[:n] = c_splat
                    c_splat = ns
                    npx = np.empty(cap, dtype=np.int64)
                    npx[:n] = c_pix
                    c_pix = npx
                    na = np.empty(cap, dtype=np.float64)
                    na[:n] = c_alpha
                    c_alpha = na
                    nt = np.empty(cap, dtype=np.float64)
                    nt[:n] = c_t
                    c_t = nt
                    npc = np.empty((cap, 3), dtype=np.float64)
                    npc[:n] = c_partial
                    c_partial = npc
                c_splat[n] = v
                c_pix[n] = py * width + px
                c_alpha[n] = alpha
                c_t[n] = t_here
                c_partial[n, 0] = image[py, px, 0]
                c_partial[n, 1] = image[py, px, 1]
                c_partial[n, 2] = image[py, px, 2]
                n += 1
                w = t_here * alpha
                image[py, px, 0] += w * r0
                image[py, px, 1] += w * g0
                image[py, px, 2] += w * b0
                trans[py, px] = t_here * (1.0 - alpha)
    return (image, trans, c_splat[:n].copy(), c_pix[:n].copy(),
            c_alpha[:n].copy(), c_t[:n].copy(), c_partial[:n].copy())


@dataclass
class RenderRecord:
    """One camera's composited image plus the contribution log."""

    image: np.ndarray          # (H, W, 3) unclamped
    transmittance: np.ndarray  # (H, W) final T per pixel
    splat_ids: np.ndarray      # (M,) original splat index per contribution
    pixels: np.ndarray         # (M,) flat pixel index (y * W + x)
    alphas: np.ndarray         # (M,)
    trans_at: np.ndarray       # (M,) T at compositing time
    partials: np.ndarray       # (M, 3) color accumulated before the contribution
    colors: np.ndarray         # (N, 3) per-splat compositing colors
    width: int
    height: int

    def pixel_record(self, x, y):
        """Ordered (splat_id, alpha, T) contributions of one pixel."""
        mask = self.pixels == y * self.width + x
        return list(zip(self.splat_ids[mask], self.alphas[mask], self.trans_at[mask]))

    def camera_importance(self, num_splats):
        """Fraction of this image originating from each splat."""
        w = self.trans_at * self.alphas
        acc = np.bincount(self.splat_ids, weights=w, minlength=num_splats)
        return acc / (self.width * self.height)

    def prune_deltas(self):
        """Per-contribution color change of removing that contribution's splat.

        Removal renormalizes the transmittance of everything behind the splat
        by 1/(1-alpha); folding that into the recorded partial colors gives
        PD = P_i - P_{i+1}/(1-a) + a * P_K / (1-a) per pixel, evaluated here in
        the equivalent single-expression form.
        """
        pk = self.image.reshape(-1, 3)[self.pixels]
        a = self.alphas[:, None]
        csplat = self.colors[self.splat_ids]
        return a / (1.0 - a) * (pk - self.partials - self.trans_at[:, None] * csplat)


def render_with_records(splats, camera) -> RenderRecord:
    proj = project_splats(splats, camera)
    ids = np.nonzero(proj.valid)[0]
    order = np.argsort(proj.view_depth[ids], kind="stable")
    ids = ids[order]

    colors = np.zeros((len(splats), 3), dtype=np.float64)
    if len(ids):
        colors[ids] = splat_colors(splats.subset(ids), camera)

    cov = proj.cov2d[ids]
    image, trans, c_splat, c_pix, c_alpha, c_t, c_partial = _composite(
        np.ascontiguousarray(proj.mean2d[ids]),
        np.ascontiguousarray(cov[:, 0]), np.ascontiguousarray(cov[:, 1]),
        np.ascontiguousarray(cov[:, 2]),
        np.ascontiguousarray(proj.radius[ids]),
        np.ascontiguousarray(splats.opacities[ids]),
        np.ascontiguousarray(colors[ids]),
        camera.height, camera.width)
    return RenderRecord(image, trans, ids[c_splat] if len(ids) else c_splat,
                        c_pix, c_alpha, c_t, c_partial, colors,
                        camera.width, camera.height)


def render_image(splats, camera) -> np.ndarray:
    return render_with_records(splats, camera).image


def prune_difference(record: RenderRecord, x, y, splat_id):
    """Literal partial-color form of the removal difference at one pixel.

    Returns the 3-vector color change caused by deleting splat_id; zero if the
    splat never contributed to this pixel.
    """
    mask = record.pixels == y * record.width + x
    sids = record.splat_ids[mask]
    hit = np.nonzero(sids == splat_id)[0]
    if len(hit) == 0:
        return np.zeros(3)
    i = int(hit[0])
    terms = (record.trans_at[mask, None] * record.alphas[mask, None]
             * record.colors[sids])
    partials = np.vstack([np.zeros(3), np.cumsum(terms, axis=0)])
    p_k = partials[-1]
    a = record.alphas[mask][i]
    return partials[i] - partials[i + 1] / (1.0 - a) + a * p_k / (1.0 - a)


@dataclass
class ForwardStats:
    """Aggregated products of one instrumented pass over all cameras."""

    importance: np.ndarray        # (N,) mean importance over cameras
    camera_importance: np.ndarray  # (S, N)
    delta_mse: np.ndarray | None  # (N,) or None when no targets given
    mse: float | None             # current MSE against the targets


def _map_cameras(fn, count, threads):
    if threads <= 1 or count <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=min(threads, count)) as ex:
        return list(ex.map(fn, range(count)))


def forward_stats(splats, cameras, targets=None, threads=1) -> ForwardStats:
    """Render every camera once; accumulate importance and, when reference
    targets are given, the exact removal effect of each splat on the MSE.

    Per-pixel, per-channel: dSE = PD^2 + 2 PD (c - c_t); per splat the values
    are averaged over cameras, pixels, and channels. Accumulation is float64
    per camera, cameras summed in index order, so results do not depend on the
    worker count.
    """
    n = len(splats)

    def one_camera(s):
        cam = cameras[s]
        rec = render_with_records(splats, cam)
        p = cam.pixel_count()
        imp = rec.camera_importance(n)
        if targets is None:
            return imp, None, None
        target = targets[s]
        pd = rec.prune_deltas()
        c_render = rec.image.reshape(-1, 3)[rec.pixels]
        c_t = target.reshape(-1, 3)[rec.pixels]
        dse = (pd * pd + 2.0 * pd * (c_render - c_t)).sum(axis=1)
        dmse = np.bincount(rec.splat_ids, weights=dse, minlength=n) / (p * 3.0)
        mse = float(np.mean((rec.image - target) ** 2))
        return imp, dmse, mse

    results = _map_cameras(one_camera, len(cameras), threads)

    cam_imp = np.zeros((len(cameras), n), dtype=np.float64)
    dmse_total = np.zeros(n, dtype=np.float64) if targets is not None else None
    mse_total = 0.0
    for s, (imp, dmse, mse) in enumerate(results):
        cam_imp[s] = imp
        if targets is not None:
            dmse_total += dmse
            mse_total += mse
    importance = cam_imp.mean(axis=0)
    if targets is None:
        return ForwardStats(importance, cam_imp, None, None)
    return ForwardStats(importance, cam_imp, dmse_total / len(cameras),
                        mse_total / len(cameras))


def compute_importance(splats, cameras, threads=1):
    """Per-splat importance I_k plus the per-camera breakdown."""
    stats = forward_stats(splats, cameras, targets=None, threads=threads)
    return stats.importance, stats.camera_importance


def compute_delta_mse(splats, cameras, targets, threads=1):
    """Exact MSE change of removing each splat, against fixed targets."""
    for s, cam in enumerate(cameras):
        if targets[s].shape != (cam.height, cam.width, 3):
            raise ValueError(
                f"target {s} has shape {targets[s].shape}, camera expects "
                f"{(cam.height, cam.width, 3)}")
    return forward_stats(splats, cameras, targets=targets, threads=threads)


def render_targets(splats, cameras, threads=1):
    """Reference renders of the uncompressed model (read-only)."""
    imgs = _map_cameras(lambda s: render_image(splats, cameras[s]),
                        len(cameras), threads)
    for img in imgs:
        img.flags.writeable = False
    return imgs
