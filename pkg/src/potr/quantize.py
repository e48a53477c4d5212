"""Scalar quantizers and the camera-adaptive octree position coder.

Attributes are quantized with plain uniform round-to-nearest; positions are
snapped to the centers of octree leaves that subdivide until the leaf
half-diagonal drops below a per-splat tolerance max(gamma, beta * distance to
the nearest camera), so distant splats get proportionally coarser positions.
The root cube is stored in float32 in the container header, and both the
builder and the decoder derive every cell center from those rounded values
with identical arithmetic, making decoded centers bit-reproducible.
"""

from dataclasses import dataclass

import numpy as np

from .varint import uleb_decode, uleb_encode

SQRT3 = np.sqrt(3.0)
DEFAULT_MAX_DEPTH = 24


class OctreeError(ValueError):
    pass


@dataclass
class QuantParams:
    sf_sh: float
    sf_opacity: float
    sf_rotation: float
    sf_scale: float

    def __post_init__(self):
        for name in ("sf_sh", "sf_opacity", "sf_rotation", "sf_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


OPACITY_SHIFT = 0.25  # off-center reconstruction bias for opacity only


def quantize_uniform(x, sf):
    """x -> floor(0.5 + x * sf) as int64."""
    return np.floor(0.5 + np.asarray(x, dtype=np.float64) * sf).astype(np.int64)


def dequantize_uniform(q, sf, shift=0.0):
    return (np.asarray(q, dtype=np.float64) + shift) / sf


@dataclass
class OctreeNode:
    children: list | None = None    # [(octant, OctreeNode), ...] ascending octant
    splat_ids: np.ndarray | None = None  # leaf payload

    @property
    def is_leaf(self):
        return self.splat_ids is not None


@dataclass
class Octree:
    root: OctreeNode
    center: np.ndarray  # (3,) float64, exactly representable in float32
    half: float         # float64 value of a float32
    max_depth: int


def _child_center(center, half, octant):
    """Shared encoder/decoder descent step; bit-identical on both sides."""
    off = half * 0.5
    return np.array([
        center[0] + (off if octant & 4 else -off),
        center[1] + (off if octant & 2 else -off),
        center[2] + (off if octant & 1 else -off),
    ])


def _root_cube(positions):
    """Cube of maximal AABB extent at the AABB center, rounded to float32 with
    the half-extent rounded outward so every position stays inside."""
    lo = positions.min(axis=0)
    hi = positions.max(axis=0)
    center = np.float64(np.asarray((lo + hi) * 0.5, dtype=np.float32))
    half_needed = float(np.abs(positions - center).max()) if len(positions) else 0.0
    half = np.float32(half_needed)
    if np.float64(half) < half_needed:
        half = np.nextafter(half, np.float32(np.inf), dtype=np.float32)
    return center, float(np.float64(half))


def min_camera_distance(positions, camera_eyes):
    """Per-splat distance to the nearest camera eye."""
    eyes = np.asarray(camera_eyes, dtype=np.float64).reshape(-1, 3)
    d = np.linalg.norm(positions[:, None, :] - eyes[None, :, :], axis=2)
    return d.min(axis=1)


def build_octree(positions, camera_eyes, beta, gamma, max_depth=DEFAULT_MAX_DEPTH,
                 root_cube=None):
    """Subdivide until every leaf holds one splat whose cell half-diagonal is
    below its tolerance, or the depth limit is hit.

    root_cube, when given as (center, half), pins the cube instead of deriving
    it from the positions (used when re-encoding a decoded model so the tree
    reproduces exactly).
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[0] < 1:
        raise ValueError("need at least one position")
    if gamma <= 0 or beta < 0:
        raise ValueError("gamma must be > 0 and beta >= 0")

    if root_cube is None:
        center, half = _root_cube(positions)
    else:
        center = np.float64(np.asarray(root_cube[0], dtype=np.float32))
        half = float(np.float64(np.float32(root_cube[1])))

    if beta > 0 and len(camera_eyes):
        tol = np.maximum(gamma, beta * min_camera_distance(positions, camera_eyes))
    else:
        tol = np.full(len(positions), gamma)

    def build(idx, c, h, depth):
        if depth == max_depth:
            return OctreeNode(splat_ids=idx)
        if len(idx) == 1 and SQRT3 * h < tol[idx[0]]:
            return OctreeNode(splat_ids=idx)
        p = positions[idx]
        octant = (4 * (p[:, 0] >= c[0]).astype(np.int64)
                  + 2 * (p[:, 1] >= c[1]).astype(np.int64)
                  + (p[:, 2] >= c[2]).astype(np.int64))
        children = []
        for o in range(8):
            sub = idx[octant == o]
            if len(sub):
                children.append((o, build(sub, _child_center(c, h, o), h * 0.5,
                                          depth + 1)))
        return OctreeNode(children=children)

    root = build(np.arange(len(positions), dtype=np.int64), center, half, 0)
    return Octree(root=root, center=center, half=half, max_depth=max_depth)


def serialize_octree(tree: Octree):
    """Depth-first byte stream plus the splat order it implies.

    Internal nodes emit one occupancy byte (bit b set = octant b has a child,
    b = 4*(x>=cx) + 2*(y>=cy) + (z>=cz)); leaves emit 0x00 followed by a
    varint splat count. Children are visited in ascending octant order.
    """
    out = bytearray()
    order = []

    def visit(node):
        if node.is_leaf:
            out.append(0x00)
            out.extend(uleb_encode([len(node.splat_ids)]))
            order.append(node.splat_ids)
        else:
            occ = 0
            for o, _ in node.children:
                occ |= 1 << o
            out.append(occ)
            for _, child in node.children:
                visit(child)

    visit(tree.root)
    return bytes(out), np.concatenate(order).astype(np.int64)


@dataclass
class DecodedOctree:
    positions: np.ndarray   # (N, 3) leaf centers repeated per count, DFS order
    depths: np.ndarray      # (N,) leaf depth per decoded splat
    tree: Octree            # reconstructed structure (leaf ids = decode order)


def deserialize_octree(data: bytes, center, half, max_depth=DEFAULT_MAX_DEPTH):
    """Rebuild leaf-center positions (and the tree) from the DFS stream."""
    center = np.float64(np.asarray(center, dtype=np.float32))
    half = float(np.float64(np.float32(half)))
    buf = memoryview(data)
    pos = 0
    splat_cursor = 0
    positions = []
    depths = []

    def read(c, h, depth):
        nonlocal pos, splat_cursor
        if pos >= len(buf):
            raise OctreeError("truncated octree stream")
        byte = buf[pos]
        pos += 1
        if byte == 0x00:
            try:
                count, used = uleb_decode(buf[pos:], 1)
            except ValueError as e:
                raise OctreeError(f"truncated octree stream: {e}") from e
            pos += used
            count = int(count[0])
            if count < 1:
                raise OctreeError("leaf with zero splats")
            ids = np.arange(splat_cursor, splat_cursor + count, dtype=np.int64)
            splat_cursor += count
            positions.append(np.tile(c, (count, 1)))
            depths.append(np.full(count, depth, dtype=np.int64))
            return OctreeNode(splat_ids=ids)
        if depth >= max_depth:
            raise OctreeError(f"internal node below depth limit {max_depth}")
        children = []
        for o in range(8):
            if byte & (1 << o):
                children.append((o, read(_child_center(c, h, o), h * 0.5,
                                         depth + 1)))
        return OctreeNode(children=children)

    root = read(center, half, 0)
    if pos != len(buf):
        raise OctreeError(f"{len(buf) - pos} trailing bytes after octree")
    return DecodedOctree(
        positions=np.concatenate(positions),
        depths=np.concatenate(depths),
        tree=Octree(root=root, center=center, half=half, max_depth=max_depth),
    )
