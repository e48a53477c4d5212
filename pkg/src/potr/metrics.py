"""Quality metrics: PSNR and SSIM over rendered views.

PSNR uses float renders clamped to [0, 1], MSE over all pixels and channels,
peak 1, capped at 99 dB for identical images. SSIM follows the standard
windowed formulation: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
K2 = 0.03, computed per channel on the border-cropped moment images and
averaged.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .rasterizer import render_image

PSNR_CAP = 99.0
_SSIM_SIGMA = 1.5
_SSIM_TRUNCATE = 3.5  # radius 5 -> 11-tap window
_K1 = 0.01
_K2 = 0.03


def psnr(img_a, img_b):
    a = np.clip(np.asarray(img_a, dtype=np.float64), 0.0, 1.0)
    b = np.clip(np.asarray(img_b, dtype=np.float64), 0.0, 1.0)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, -10.0 * np.log10(mse))


def _ssim_channel(a, b):
    c1 = _K1 ** 2
    c2 = _K2 ** 2
    blur = lambda x: gaussian_filter(x, _SSIM_SIGMA, truncate=_SSIM_TRUNCATE)
    mu_a = blur(a)
    mu_b = blur(b)
    var_a = blur(a * a) - mu_a * mu_a
    var_b = blur(b * b) - mu_b * mu_b
    cov = blur(a * b) - mu_a * mu_b
    s = (((2 * mu_a * mu_b + c1) * (2 * cov + c2))
         / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
    pad = int(_SSIM_TRUNCATE * _SSIM_SIGMA + 0.5)
    return float(np.mean(s[pad:-pad, pad:-pad]))


def ssim(img_a, img_b):
    a = np.clip(np.asarray(img_a, dtype=np.float64), 0.0, 1.0)
    b = np.clip(np.asarray(img_b, dtype=np.float64), 0.0, 1.0)
    return float(np.mean([_ssim_channel(a[..., ch], b[..., ch])
                          for ch in range(3)]))


@dataclass
class MetricsReport:
    psnr_per_camera: list
    ssim_per_camera: list
    mean_psnr: float
    mean_ssim: float
    splat_count: int | None = None
    model_size_bytes: int | None = None
    bytes_per_splat: float | None = None
    property_bytes: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "psnr_per_camera": self.psnr_per_camera,
            "ssim_per_camera": self.ssim_per_camera,
            "mean_psnr": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
            "splat_count": self.splat_count,
            "model_size_bytes": self.model_size_bytes,
            "bytes_per_splat": self.bytes_per_splat,
            "property_bytes": self.property_bytes,
        }


def compare_renders(renders_a, renders_b) -> MetricsReport:
    ps = [psnr(a, b) for a, b in zip(renders_a, renders_b)]
    ss = [ssim(a, b) for a, b in zip(renders_a, renders_b)]
    return MetricsReport(psnr_per_camera=ps, ssim_per_camera=ss,
                         mean_psnr=float(np.mean(ps)),
                         mean_ssim=float(np.mean(ss)))


def compute_metrics(splats_a, splats_b, cameras, threads=1) -> MetricsReport:
    """Render both models over the shared cameras and compare."""
    for cam_list in (cameras,):
        if not cam_list:
            raise ValueError("need at least one camera")
    renders_a = [render_image(splats_a, cam) for cam in cameras]
    renders_b = [render_image(splats_b, cam) for cam in cameras]
    report = compare_renders(renders_a, renders_b)
    report.splat_count = len(splats_b)
    return report
