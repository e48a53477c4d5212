"""Scene representation: splat arrays, cameras, and model/camera file ingestion.

Splat attributes are kept in activated space internally (opacity through the
logistic, scales exponentiated, quaternions unit with non-negative real part).
The PLY layout matches the de-facto splatting export: x,y,z, f_dc_0..2,
f_rest_0..44 (channel-major AC), opacity, scale_0..2, rot_0..3, all float32,
binary little-endian.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

_OPACITY_EPS = 1e-9  # keeps activated opacity inside the open interval (0, 1)


class SceneFormatError(ValueError):
    """Malformed model or camera file."""


class SceneDataError(ValueError):
    """Well-formed file carrying invalid values."""


@dataclass
class RawSplats:
    """Pre-activation splat attributes, exactly as stored in a PLY."""

    positions: np.ndarray   # (N, 3)
    sh: np.ndarray          # (N, 3, 16) RGB channels, coefficient 0 = DC
    opacities: np.ndarray   # (N,) logits
    log_scales: np.ndarray  # (N, 3)
    rotations: np.ndarray   # (N, 4) unnormalized wxyz

    def __len__(self):
        return self.positions.shape[0]


@dataclass
class Splats:
    """Activated splat attributes."""

    positions: np.ndarray  # (N, 3) world units
    sh: np.ndarray         # (N, 3, 16)
    opacities: np.ndarray  # (N,) in (0, 1)
    scales: np.ndarray     # (N, 3) per-axis stddev, > 0
    rotations: np.ndarray  # (N, 4) unit wxyz with w >= 0

    def __len__(self):
        return self.positions.shape[0]

    def subset(self, idx):
        return Splats(self.positions[idx], self.sh[idx], self.opacities[idx],
                      self.scales[idx], self.rotations[idx])

    def copy(self):
        return Splats(self.positions.copy(), self.sh.copy(), self.opacities.copy(),
                      self.scales.copy(), self.rotations.copy())


@dataclass
class Camera:
    eye: np.ndarray        # (3,)
    rotation: np.ndarray   # (3, 3) world-to-camera, rows orthonormal, det +1
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    image: np.ndarray | None = None  # (H, W, 3) floats in [0, 1]

    def pixel_count(self):
        return self.width * self.height


@dataclass
class Scene:
    splats: Splats
    cameras: list
    targets: list = field(default_factory=list)  # fixed reference renders, one per camera

    def freeze_targets(self, targets):
        """Install the reference renders; arrays are made read-only."""
        frozen = []
        for t in targets:
            t = np.ascontiguousarray(t, dtype=np.float64)
            t.flags.writeable = False
            frozen.append(t)
        self.targets = frozen


# ---------------------------------------------------------------------------
# Activation

def activate(raw: RawSplats) -> Splats:
    """Raw PLY values to the activated in-memory representation.

    Opacity goes through the logistic, scales through exp, quaternions are
    normalized with the real part forced non-negative (so the codec can drop
    it and recover w = sqrt(1 - x^2 - y^2 - z^2)).
    """
    for name in ("positions", "sh", "opacities", "log_scales", "rotations"):
        arr = getattr(raw, name)
        bad = ~np.isfinite(arr)
        if bad.any():
            i = int(np.argwhere(bad.reshape(len(raw), -1).any(axis=1))[0, 0])
            raise SceneDataError(f"splat {i}: non-finite value in {name}")

    opac = np.clip(expit(raw.opacities.astype(np.float64)), _OPACITY_EPS, 1.0 - _OPACITY_EPS)
    scales = np.exp(raw.log_scales.astype(np.float64))

    q = raw.rotations.astype(np.float64)
    norms = np.linalg.norm(q, axis=1)
    if (norms == 0).any():
        i = int(np.argwhere(norms == 0)[0, 0])
        raise SceneDataError(f"splat {i}: zero-norm quaternion")
    q = q / norms[:, None]
    q[q[:, 0] < 0] *= -1.0

    return Splats(
        positions=raw.positions.astype(np.float64),
        sh=raw.sh.astype(np.float64),
        opacities=opac,
        scales=scales,
        rotations=q,
    )


def deactivate(splats: Splats) -> RawSplats:
    """Inverse of activate, for PLY export."""
    opac = np.clip(splats.opacities, _OPACITY_EPS, 1.0 - _OPACITY_EPS)
    return RawSplats(
        positions=splats.positions.copy(),
        sh=splats.sh.copy(),
        opacities=logit(opac),
        log_scales=np.log(splats.scales),
        rotations=splats.rotations.copy(),
    )


# ---------------------------------------------------------------------------
# PLY input/output

_PLY_PROPS = (
    ["x", "y", "z"]
    + [f"f_dc_{i}" for i in range(3)]
    + [f"f_rest_{i}" for i in range(45)]
    + ["opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)


def parse_ply(data: bytes) -> RawSplats:
    """Parse a binary little-endian splat PLY into raw (pre-activation) arrays.

    Unknown extra properties are ignored; every property this codec needs must
    be present and float32.
    """
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise SceneFormatError("not a PLY file")
    header = data[:end].decode("ascii", errors="replace").splitlines()
    body = data[end + len(b"end_header\n"):]

    count = None
    props = []
    fmt_ok = False
    for line in header[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt_ok = parts[1] == "binary_little_endian"
        elif parts[0] == "element":
            if parts[1] == "vertex":
                count = int(parts[2])
            elif count is not None:
                break  # only the vertex element is read
        elif parts[0] == "property" and count is not None:
            if parts[1] not in ("float", "float32"):
                raise SceneFormatError(f"property {parts[2]} is not float32")
            props.append(parts[2])
    if not fmt_ok:
        raise SceneFormatError("PLY must be binary little-endian")
    if count is None:
        raise SceneFormatError("PLY has no vertex element")
    for name in _PLY_PROPS:
        if name not in props:
            raise SceneFormatError(f"missing property {name}")

    stride = 4 * len(props)
    if len(body) < count * stride:
        raise SceneFormatError(
            f"truncated PLY payload: need {count * stride} bytes, have {len(body)}")
    table = np.frombuffer(body[:count * stride], dtype="<f4").reshape(count, len(props))
    col = {name: table[:, i] for i, name in enumerate(props)}

    positions = np.stack([col["x"], col["y"], col["z"]], axis=1)
    sh = np.zeros((count, 3, 16), dtype=np.float32)
    for ch in range(3):
        sh[:, ch, 0] = col[f"f_dc_{ch}"]
        for j in range(15):
            sh[:, ch, 1 + j] = col[f"f_rest_{ch * 15 + j}"]
    opac = col["opacity"].copy()
    log_scales = np.stack([col[f"scale_{i}"] for i in range(3)], axis=1)
    rot = np.stack([col[f"rot_{i}"] for i in range(4)], axis=1)
    return RawSplats(positions, sh, opac, log_scales, rot)


def export_ply(raw: RawSplats) -> bytes:
    """Write raw splats in the standard layout (inverse of parse_ply)."""
    n = len(raw)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {p}" for p in _PLY_PROPS]
    header.append("end_header")

    table = np.empty((n, len(_PLY_PROPS)), dtype="<f4")
    table[:, 0:3] = raw.positions
    for ch in range(3):
        table[:, 3 + ch] = raw.sh[:, ch, 0]
        table[:, 6 + ch * 15:6 + (ch + 1) * 15] = raw.sh[:, ch, 1:]
    table[:, 51] = raw.opacities
    table[:, 52:55] = raw.log_scales
    table[:, 55:59] = raw.rotations
    return ("\n".join(header) + "\n").encode("ascii") + table.tobytes()


# ---------------------------------------------------------------------------
# Camera input

def parse_cameras(data: bytes, base_dir: str | None = None) -> list:
    """Parse a cameras JSON array and validate each pose.

    Each entry: eye (3 floats), rotation (9 floats, row-major world-to-camera),
    fx, fy, cx, cy, width, height, optional "image" path to an 8-bit PNG whose
    values are mapped to [0, 1] by division by 255.
    """
    try:
        entries = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise SceneFormatError(f"cameras file is not valid UTF-8 JSON: {e}") from e
    if not isinstance(entries, list):
        raise SceneFormatError("cameras JSON must be an array")

    cameras = []
    for i, ent in enumerate(entries):
        try:
            eye = np.asarray(ent["eye"], dtype=np.float64)
            rot = np.asarray(ent["rotation"], dtype=np.float64).reshape(3, 3)
            fx, fy = float(ent["fx"]), float(ent["fy"])
            cx, cy = float(ent["cx"]), float(ent["cy"])
            width, height = int(ent["width"]), int(ent["height"])
        except (KeyError, TypeError, ValueError) as e:
            raise SceneFormatError(f"camera {i}: {e}") from e
        if eye.shape != (3,):
            raise SceneFormatError(f"camera {i}: eye must have 3 components")
        if np.abs(rot @ rot.T - np.eye(3)).max() > 1e-4:
            raise SceneDataError(f"camera {i}: rotation is not orthonormal")
        if np.linalg.det(rot) < 0:
            raise SceneDataError(f"camera {i}: rotation has determinant -1 (reflection)")
        if fx <= 0 or fy <= 0:
            raise SceneDataError(f"camera {i}: focal lengths must be positive")
        if width < 1 or height < 1:
            raise SceneDataError(f"camera {i}: image dimensions must be >= 1")
        image = None
        if ent.get("image"):
            path = ent["image"]
            if base_dir is not None and not os.path.isabs(path):
                path = os.path.join(base_dir, path)
            image = load_png(path)
        cameras.append(Camera(eye, rot, fx, fy, cx, cy, width, height, image))
    return cameras


def load_cameras(path: str) -> list:
    with open(path, "rb") as f:
        return parse_cameras(f.read(), base_dir=os.path.dirname(os.path.abspath(path)))


def load_scene(model_path: str, cameras_path: str) -> Scene:
    with open(model_path, "rb") as f:
        raw = parse_ply(f.read())
    return Scene(activate(raw), load_cameras(cameras_path))


def save_ply(path: str, splats: Splats):
    data = export_ply(deactivate(splats))
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# PNG helpers (8-bit sRGB values scaled to [0, 1], no transfer-function change)

def load_png(path: str) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_png(path: str, image: np.ndarray):
    """Clamp to [0, 1], scale by 255, round half up."""
    from PIL import Image

    arr = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)
