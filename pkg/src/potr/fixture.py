"""Deterministic synthetic scene: splats on a jittered sphere shell observed
from a camera ring. Gives reproducible end-to-end numbers without model
downloads: smooth position-correlated base colors, decaying view-dependent
coefficients on part of the population, and enough shell overlap that removal
decisions are non-trivial.
"""

import numpy as np

from .scene import Camera, Splats
from .sh import SH_DC


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)):
    """World-to-camera rotation for a camera at eye looking at target."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    up = np.asarray(up, dtype=np.float64)
    if abs(np.dot(fwd, up)) > 0.999:
        up = np.array([1.0, 0.0, 0.0])
    right = np.cross(up, fwd)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd])


def camera_ring(count, radius=2.8, resolution=64, elevation=0.12):
    """Cameras on a ring in the x-z plane (y vertical), alternating slightly
    above and below the plane, all aimed at the origin."""
    cams = []
    for i in range(count):
        phi = 2.0 * np.pi * i / count
        h = elevation if i % 2 == 0 else -elevation
        eye = radius * np.array([np.cos(phi), h, np.sin(phi)])
        cams.append(Camera(
            eye=eye, rotation=look_at(eye),
            fx=1.05 * resolution, fy=1.05 * resolution,
            cx=resolution / 2.0, cy=resolution / 2.0,
            width=resolution, height=resolution))
    return cams


def shell_splats(count, seed, shell_radius=1.0, radial_jitter=0.035):
    rng = np.random.default_rng(seed)

    dirs = rng.standard_normal((count, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = shell_radius + radial_jitter * rng.standard_normal(count)
    positions = dirs * radii[:, None]

    base_scale = 0.02 * np.sqrt(10000.0 / count)
    scales = base_scale * rng.uniform(0.7, 1.4, (count, 3))

    quats = rng.standard_normal((count, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    quats[quats[:, 0] < 0] *= -1.0

    opac = rng.uniform(0.4, 0.95, count)

    theta = np.arctan2(positions[:, 2], positions[:, 0])
    z = positions[:, 1]
    colors = np.stack([
        0.5 + 0.35 * np.sin(2.0 * theta),
        0.5 + 0.35 * np.sin(3.0 * z + theta),
        0.5 + 0.30 * np.cos(2.5 * z),
    ], axis=1)

    sh = np.zeros((count, 3, 16))
    sh[:, :, 0] = colors / SH_DC

    # ~40% of splats carry view-dependent content, stronger in low bands.
    view_dep = rng.uniform(size=count) < 0.4
    band = np.repeat([1, 2, 3], [3, 5, 7]).astype(np.float64)
    amplitude = 0.10 / band
    ac = rng.standard_normal((count, 3, 15)) * amplitude
    sh[:, :, 1:] = np.where(view_dep[:, None, None], ac, 0.0)
    # small residual noise everywhere so AC streams are not trivially empty
    sh[:, :, 1:] += 0.004 * rng.standard_normal((count, 3, 15))

    return Splats(positions=positions, sh=sh, opacities=opac, scales=scales,
                  rotations=quats)


def make_fixture(num_splats=10000, num_cameras=8, seed=0, resolution=64):
    """The deterministic benchmark scene used by the experiment scripts."""
    splats = shell_splats(num_splats, seed)
    cameras = camera_ring(num_cameras, resolution=resolution)
    return splats, cameras


def random_scene(seed, num_splats=50, num_cameras=4, resolution=32):
    """Small randomized scene for oracle tests.

    Opacities and footprints are kept moderate so per-pixel transmittance never
    reaches the early-termination floor, which the closed-form removal algebra
    assumes.
    """
    rng = np.random.default_rng(seed)
    positions = rng.uniform(-0.8, 0.8, (num_splats, 3))
    scales = rng.uniform(0.04, 0.14, (num_splats, 3))
    quats = rng.standard_normal((num_splats, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    quats[quats[:, 0] < 0] *= -1.0
    opac = rng.uniform(0.1, 0.5, num_splats)
    sh = np.zeros((num_splats, 3, 16))
    sh[:, :, 0] = rng.uniform(0.2, 0.9, (num_splats, 3)) / SH_DC
    sh[:, :, 1:] = 0.15 * rng.standard_normal((num_splats, 3, 15))
    splats = Splats(positions=positions, sh=sh, opacities=opac, scales=scales,
                    rotations=quats)

    cameras = []
    for i in range(num_cameras):
        d = rng.standard_normal(3)
        d /= np.linalg.norm(d)
        eye = d * rng.uniform(3.0, 4.0)
        cameras.append(Camera(
            eye=eye, rotation=look_at(eye),
            fx=1.1 * resolution, fy=1.1 * resolution,
            cx=resolution / 2.0, cy=resolution / 2.0,
            width=resolution, height=resolution))
    return splats, cameras
