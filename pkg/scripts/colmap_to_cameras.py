#!/usr/bin/env python3
"""Convert a COLMAP text model to the cameras.json this codec reads.

COLMAP stores world-to-camera poses as a quaternion qvec (QW QX QY QZ) and a
translation tvec with x_cam = R x_world + t. Our cameras carry the rotation R
row-major plus the eye position, which is eye = -R^T t.

Usage:
    python scripts/colmap_to_cameras.py <cameras.txt> <images.txt> <out.json>

Only PINHOLE and SIMPLE_PINHOLE intrinsics are supported.
"""

import json
import sys

import numpy as np


def qvec_to_rotmat(qvec):
    w, x, y, z = qvec
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def eye_from_pose(qvec, tvec):
    """Camera center in world coordinates: eye = -R^T t."""
    R = qvec_to_rotmat(np.asarray(qvec, dtype=np.float64))
    return R, -R.T @ np.asarray(tvec, dtype=np.float64)


def parse_cameras_txt(path):
    intrinsics = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            cam_id, model = int(parts[0]), parts[1]
            width, height = int(parts[2]), int(parts[3])
            params = [float(p) for p in parts[4:]]
            if model == "PINHOLE":
                fx, fy, cx, cy = params[:4]
            elif model == "SIMPLE_PINHOLE":
                fx, cx, cy = params[:3]
                fy = fx
            else:
                raise ValueError(f"unsupported camera model {model}")
            intrinsics[cam_id] = (fx, fy, cx, cy, width, height)
    return intrinsics


def parse_images_txt(path):
    poses = []
    with open(path) as f:
        lines = [l.strip() for l in f if l.strip() and not l.startswith("#")]
    # every image uses two lines; the second (2D points) is ignored
    for line in lines[::2]:
        parts = line.split()
        qvec = [float(p) for p in parts[1:5]]
        tvec = [float(p) for p in parts[5:8]]
        cam_id = int(parts[8])
        name = parts[9] if len(parts) > 9 else ""
        poses.append((qvec, tvec, cam_id, name))
    return poses


def convert(cameras_txt, images_txt):
    intrinsics = parse_cameras_txt(cameras_txt)
    entries = []
    for qvec, tvec, cam_id, _name in parse_images_txt(images_txt):
        R, eye = eye_from_pose(qvec, tvec)
        fx, fy, cx, cy, width, height = intrinsics[cam_id]
        entries.append({
            "eye": eye.tolist(),
            "rotation": R.reshape(-1).tolist(),
            "fx": fx, "fy": fy, "cx": cx, "cy": cy,
            "width": width, "height": height,
        })
    return entries


def main(argv):
    if len(argv) != 4:
        print(__doc__, file=sys.stderr)
        return 2
    entries = convert(argv[1], argv[2])
    with open(argv[3], "w") as f:
        json.dump(entries, f, indent=2)
    print(f"wrote {len(entries)} cameras to {argv[3]}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
