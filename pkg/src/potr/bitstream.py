"""Container format: attribute streams in octree order, zstd-wrapped.

Layout: an uncompressed fixed-size header (magic "POTR", version, counts,
quantization scale factors, octree root cube, per-stream uncompressed lengths)
followed by one zstd frame holding the concatenated streams. Streams, in fixed
order: octree occupancy+counts; DC coefficients per channel (differential,
zigzag varint); 45 AC streams, coefficient-major (all splats' coefficient i for
channel Y, then Co, then Cg, before coefficient i+1); opacity (varint); scale
x/y/z (zigzag varint); rotation x/y/z (zigzag varint, real part dropped).
"""

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import zstd
from .quantize import (DEFAULT_MAX_DEPTH, OPACITY_SHIFT, QuantParams,
                       build_octree, dequantize_uniform, deserialize_octree,
                       quantize_uniform, serialize_octree)
from .varint import uleb_decode, uleb_encode, zigzag_decode, zigzag_encode

MAGIC = b"POTR"
VERSION = 1
NUM_STREAMS = 56
_HEADER_FMT = "<4sBI11fBB" + f"{NUM_STREAMS}I"
HEADER_SIZE = struct.calcsize(_HEADER_FMT)

STREAM_OCTREE = 0
STREAM_DC = (1, 2, 3)
STREAM_AC0 = 4                      # 45 streams: (coef - 2) * 3 + channel
STREAM_OPACITY = 49
STREAM_SCALE = (50, 51, 52)
STREAM_ROTATION = (53, 54, 55)

PROPERTY_STREAMS = {
    "position": [STREAM_OCTREE],
    "scale": list(STREAM_SCALE),
    "opacity": [STREAM_OPACITY],
    "rotation": list(STREAM_ROTATION),
    "dc_sh": list(STREAM_DC),
    "ac_sh": list(range(STREAM_AC0, STREAM_AC0 + 45)),
}

# Raw float32 sizes per splat before any coding, for compression-factor reports.
UNCOMPRESSED_BYTES_PER_SPLAT = {
    "position": 12, "scale": 12, "opacity": 4, "rotation": 16,
    "dc_sh": 12, "ac_sh": 180,
}


class ContainerError(ValueError):
    pass


class UnsupportedFormatError(ContainerError):
    pass


class IntegrityError(ContainerError):
    pass


@dataclass
class ContainerHeader:
    splat_count: int
    q: float
    params: QuantParams
    beta: float
    gamma: float
    root_center: np.ndarray
    root_half: float
    max_depth: int = DEFAULT_MAX_DEPTH
    zstd_level: int = 19
    stream_lengths: list = field(default_factory=lambda: [0] * NUM_STREAMS)

    def pack(self) -> bytes:
        return struct.pack(
            _HEADER_FMT, MAGIC, VERSION, self.splat_count, self.q,
            self.params.sf_sh, self.params.sf_opacity, self.params.sf_rotation,
            self.params.sf_scale, self.beta, self.gamma,
            float(self.root_center[0]), float(self.root_center[1]),
            float(self.root_center[2]), self.root_half,
            self.max_depth, self.zstd_level, *self.stream_lengths)

    @classmethod
    def unpack(cls, data: bytes):
        if len(data) < HEADER_SIZE:
            raise IntegrityError("file shorter than the container header")
        fields = struct.unpack_from(_HEADER_FMT, data)
        if fields[0] != MAGIC:
            raise UnsupportedFormatError("bad magic, not a POTR container")
        if fields[1] != VERSION:
            raise UnsupportedFormatError(f"unsupported container version {fields[1]}")
        (_, _, count, q, sf_sh, sf_op, sf_rot, sf_sc, beta, gamma,
         cx, cy, cz, half, max_depth, level) = fields[:16]
        return cls(
            splat_count=count, q=q,
            params=QuantParams(sf_sh, sf_op, sf_rot, sf_sc),
            beta=beta, gamma=gamma,
            root_center=np.array([cx, cy, cz], dtype=np.float64),
            root_half=float(half), max_depth=max_depth, zstd_level=level,
            stream_lengths=list(fields[16:]))


# ---------------------------------------------------------------------------
# Attribute streams

def _ensure_w_nonneg(rotations):
    q = rotations.copy()
    q[q[:, 0] < 0] *= -1.0
    return q


def encode_attribute_streams(splats, params: QuantParams, sh_ycocg=None):
    """Quantize and serialize every attribute of splats already permuted into
    octree DFS order. Returns the 55 non-octree streams.

    sh_ycocg, when given, holds the (N, 3, 16) coefficients to store; otherwise
    they are derived from the splats' RGB coefficients.
    """
    from .compaction import coeffs_rgb_to_ycocg

    if sh_ycocg is None:
        sh_ycocg = coeffs_rgb_to_ycocg(splats.sh)

    streams = [b""] * (NUM_STREAMS - 1)

    def put(index, data):
        streams[index - 1] = data

    dc = quantize_uniform(sh_ycocg[:, :, 0], params.sf_sh)
    for ch in range(3):
        v = dc[:, ch]
        delta = np.diff(v, prepend=np.int64(0))  # first value stored raw
        put(STREAM_DC[ch], uleb_encode(zigzag_encode(delta)))

    ac = quantize_uniform(sh_ycocg[:, :, 1:], params.sf_sh)  # (N, 3, 15)
    for coef in range(15):
        for ch in range(3):
            put(STREAM_AC0 + coef * 3 + ch,
                uleb_encode(zigzag_encode(ac[:, ch, coef])))

    put(STREAM_OPACITY,
        uleb_encode(quantize_uniform(splats.opacities, params.sf_opacity)
                    .astype(np.uint64)))

    log_scale = quantize_uniform(np.log(splats.scales), params.sf_scale)
    for axis in range(3):
        put(STREAM_SCALE[axis], uleb_encode(zigzag_encode(log_scale[:, axis])))

    rot = quantize_uniform(_ensure_w_nonneg(splats.rotations)[:, 1:],
                           params.sf_rotation)
    for axis in range(3):
        put(STREAM_ROTATION[axis], uleb_encode(zigzag_encode(rot[:, axis])))

    return streams


def _decode_exact(stream, count, what):
    values, used = uleb_decode(stream, count)
    if used != len(stream):
        raise IntegrityError(
            f"{what} stream has {len(stream) - used} trailing bytes")
    return values


def decode_attribute_streams(streams, header: ContainerHeader, positions):
    """Dequantize the attribute streams into a scene, positions supplied by the
    octree decode. streams is the full container stream list (the octree entry
    is not read here). Returns activated splats (RGB coefficients)."""
    from .compaction import coeffs_ycocg_to_rgb
    from .scene import Splats

    n = header.splat_count
    p = header.params

    ycocg = np.zeros((n, 3, 16), dtype=np.float64)
    for ch in range(3):
        delta = zigzag_decode(_decode_exact(streams[STREAM_DC[ch]], n, "DC"))
        ycocg[:, ch, 0] = dequantize_uniform(np.cumsum(delta), p.sf_sh)
    for coef in range(15):
        for ch in range(3):
            v = zigzag_decode(_decode_exact(
                streams[STREAM_AC0 + coef * 3 + ch], n, "AC"))
            ycocg[:, ch, coef + 1] = dequantize_uniform(v, p.sf_sh)

    opac_q = _decode_exact(streams[STREAM_OPACITY], n, "opacity")
    opacities = dequantize_uniform(opac_q.astype(np.int64), p.sf_opacity,
                                   shift=OPACITY_SHIFT)
    opacities = np.clip(opacities, 1e-9, 1.0 - 1e-9)

    log_scales = np.empty((n, 3), dtype=np.float64)
    for axis in range(3):
        v = zigzag_decode(_decode_exact(streams[STREAM_SCALE[axis]], n, "scale"))
        log_scales[:, axis] = dequantize_uniform(v, p.sf_scale)

    xyz = np.empty((n, 3), dtype=np.float64)
    for axis in range(3):
        v = zigzag_decode(_decode_exact(streams[STREAM_ROTATION[axis]], n,
                                        "rotation"))
        xyz[:, axis] = dequantize_uniform(v, p.sf_rotation)
    norm2 = (xyz ** 2).sum(axis=1)
    over = norm2 > 1.0
    if over.any():
        warnings.warn(f"{int(over.sum())} quaternions outside the unit ball, "
                      "clamped", RuntimeWarning)
        xyz[over] /= np.sqrt(norm2[over])[:, None]
        norm2[over] = 1.0
    w = np.sqrt(np.maximum(0.0, 1.0 - norm2))
    rotations = np.concatenate([w[:, None], xyz], axis=1)

    return Splats(
        positions=np.asarray(positions, dtype=np.float64).reshape(n, 3),
        sh=coeffs_ycocg_to_rgb(ycocg),
        opacities=opacities,
        scales=np.exp(log_scales),
        rotations=rotations,
    )


# ---------------------------------------------------------------------------
# Container assembly

def write_container(header: ContainerHeader, streams, zstd_level=None) -> bytes:
    """Uncompressed header followed by one zstd frame over all streams."""
    if zstd_level is not None:
        header.zstd_level = zstd_level
    header.stream_lengths = [len(s) for s in streams]
    payload = b"".join(streams)
    return header.pack() + zstd.compress(payload, header.zstd_level)


def read_container(data: bytes):
    header = ContainerHeader.unpack(data)
    expected = sum(header.stream_lengths)
    try:
        payload = zstd.decompress(bytes(data[HEADER_SIZE:]), expected)
    except zstd.ZstdError as e:
        raise IntegrityError(str(e)) from e
    streams = []
    pos = 0
    for length in header.stream_lengths:
        streams.append(payload[pos:pos + length])
        pos += length
    return header, streams


def encode_container(splats, params: QuantParams, q, beta, gamma,
                     zstd_level=19, max_depth=DEFAULT_MAX_DEPTH,
                     root_cube=None, sh_ycocg=None, camera_eyes=()):
    """Codec back end: octree the positions, quantize and serialize every
    attribute in DFS order, compress.

    Returns (container bytes, DFS order as original indices). root_cube pins
    the octree cube; pass the header values of a decoded container to re-encode
    it reproducibly.
    """
    n = len(splats)
    if n == 0:
        header = ContainerHeader(0, q, params, beta, gamma,
                                 np.zeros(3), 0.0, max_depth, zstd_level)
        return (write_container(header, [b""] * NUM_STREAMS, zstd_level),
                np.empty(0, dtype=np.int64))

    tree = build_octree(splats.positions, camera_eyes, beta, gamma,
                        max_depth=max_depth, root_cube=root_cube)
    octree_stream, order = serialize_octree(tree)
    header = ContainerHeader(n, q, params, beta, gamma, tree.center, tree.half,
                             max_depth, zstd_level)
    streams = [octree_stream] + encode_attribute_streams(
        splats.subset(order), params,
        sh_ycocg=None if sh_ycocg is None else sh_ycocg[order])
    return write_container(header, streams, zstd_level), order


def decode_container(data: bytes):
    """Inverse of encode_container: returns (splats in DFS order, header)."""
    from .scene import Splats

    header, streams = read_container(data)
    if header.splat_count == 0:
        empty = Splats(np.empty((0, 3)), np.empty((0, 3, 16)), np.empty(0),
                       np.empty((0, 3)), np.empty((0, 4)))
        return empty, header
    decoded = deserialize_octree(streams[STREAM_OCTREE], header.root_center,
                                 header.root_half, header.max_depth)
    if decoded.positions.shape[0] != header.splat_count:
        raise IntegrityError(
            f"octree stream decodes {decoded.positions.shape[0]} splats, "
            f"header says {header.splat_count}")
    splats = decode_attribute_streams(streams, header, decoded.positions)
    return splats, header


# ---------------------------------------------------------------------------
# Size attribution

def size_report(data: bytes):
    """Approximate per-property compressed sizes by ablating each property's
    streams and re-compressing at the container's level."""
    header, streams = read_container(data)
    payload_size = len(data) - HEADER_SIZE
    report = {}
    for prop, indices in PROPERTY_STREAMS.items():
        ablated = [s for i, s in enumerate(streams) if i not in indices]
        ablated_size = len(zstd.compress(b"".join(ablated), header.zstd_level))
        report[prop] = payload_size - ablated_size
    return {
        "payload_bytes": payload_size,
        "header_bytes": HEADER_SIZE,
        "splat_count": header.splat_count,
        "property_bytes": report,
    }
