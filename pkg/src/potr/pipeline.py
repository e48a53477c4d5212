"""End-to-end encode and decode orchestration.

Encode: render the reference targets from the uncompressed model, prune
against them, recompute lighting coefficients, then octree + quantize +
serialize + compress. Compaction can also run interleaved after a chosen
pruning iteration so the remaining iterations absorb its effect.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .bitstream import decode_container, encode_container
from .compaction import ac_sparsity, compact_scene
from .config import EncodeConfig
from .pruning import run_pruning
from .rasterizer import compute_importance, render_targets

UNCOMPRESSED_BYTES_PER_SPLAT = 236  # 12 pos + 12 scale + 4 opacity + 16 rot + 12 DC + 180 AC


@dataclass
class EncodeResult:
    container: bytes
    dfs_order: np.ndarray           # original index per serialized splat
    targets: list                   # the fixed reference renders
    report: dict = field(default_factory=dict)


def encode_pipeline(splats, cameras, config: EncodeConfig, threads=1,
                    report_sink=None) -> EncodeResult:
    timings = {}
    report = {
        "q": config.q,
        "splats_in": len(splats),
        "compaction_placement": ("after_pruning" if config.compact_at is None
                                 else f"interleaved_at_{config.compact_at}"),
    }

    t0 = time.perf_counter()
    targets = render_targets(splats, cameras, threads=threads)
    timings["render_targets"] = time.perf_counter() - t0

    prune_cfg = config.prune_config
    iter_reports = []
    sink = (lambda d: (iter_reports.append(d),
                       report_sink(d) if report_sink else None))

    t0 = time.perf_counter()
    if config.compact_at is None:
        pruned, kept, _ = run_pruning(splats, cameras, targets, prune_cfg,
                                      threads=threads, report_sink=sink)
        timings["pruning"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        _, cam_imp = compute_importance(pruned, cameras, threads=threads)
        compacted, ycocg, comp_report = compact_scene(
            pruned, cameras, cam_imp, config.compaction_config, threads=threads)
        timings["compaction"] = time.perf_counter() - t0
    else:
        pruned, kept, _ = run_pruning(splats, cameras, targets, prune_cfg,
                                      threads=threads, report_sink=sink,
                                      last_iteration=config.compact_at)
        timings["pruning"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        _, cam_imp = compute_importance(pruned, cameras, threads=threads)
        mid, ycocg, comp_report = compact_scene(
            pruned, cameras, cam_imp, config.compaction_config, threads=threads)
        timings["compaction"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        compacted, kept_rel, _ = run_pruning(
            mid, cameras, targets, prune_cfg, threads=threads,
            report_sink=sink, first_iteration=config.compact_at + 1)
        kept = kept[kept_rel]
        ycocg = ycocg[kept_rel]
        timings["pruning"] += time.perf_counter() - t0

    t0 = time.perf_counter()
    container, order = encode_container(
        compacted, config.quant_params, config.q, config.beta, config.gamma,
        zstd_level=config.zstd_level, max_depth=config.max_depth,
        sh_ycocg=ycocg, camera_eyes=[c.eye for c in cameras])
    timings["serialize_compress"] = time.perf_counter() - t0

    report.update({
        "splats_out": len(compacted),
        "pruning_iterations": iter_reports,
        "compaction_failures": len(comp_report["failed"]),
        "compaction_dc_fallbacks": comp_report["fallback_dc_only"],
        "ac_sparsity": ac_sparsity(ycocg),
        "container_bytes": len(container),
        "bytes_per_input_splat": len(container) / max(1, len(splats)),
        "compression_factor_vs_raw":
            UNCOMPRESSED_BYTES_PER_SPLAT * len(splats) / max(1, len(container)),
        "timings_sec": timings,
    })
    return EncodeResult(container=container, dfs_order=kept[order],
                        targets=targets, report=report)


def decode_pipeline(container: bytes):
    """Container bytes to activated splats (in serialization order)."""
    splats, header = decode_container(container)
    return splats, header
