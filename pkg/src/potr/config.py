"""Encoder configuration: every knob derives from one quality parameter q.

q in [0, 1], higher = finer. The derivations: lambda = 10^-q, parallel
threshold = sigmoid(3q), removal-effect threshold = 10^(-8.8-2q),
beta = 1.4e-4 q, gamma = 5*10^(-3-5q), SF_sh = 1+100q, SF_opacity = 1+200q,
SF_rotation = 1+400q, SF_scale = 1+4000q, 48 pruning iterations. Any field can
be overridden individually.
"""

from dataclasses import dataclass, fields

from scipy.special import expit

from .compaction import CompactionConfig
from .pruning import PruneConfig
from .quantize import DEFAULT_MAX_DEPTH, QuantParams


@dataclass
class EncodeConfig:
    q: float
    lambda_y: float
    parallel_threshold: float
    delta_mse_max: float
    beta: float
    gamma: float
    sf_sh: float
    sf_opacity: float
    sf_rotation: float
    sf_scale: float
    iterations: int = 48
    prune_a: float = 10.0
    zstd_level: int = 19
    max_depth: int = DEFAULT_MAX_DEPTH
    compact_at: int | None = None  # None = compact after pruning finishes

    @property
    def zero_threshold(self):
        """Largest coefficient magnitude that still quantizes to integer 0."""
        return 0.5 / self.sf_sh

    @property
    def quant_params(self):
        return QuantParams(self.sf_sh, self.sf_opacity, self.sf_rotation,
                           self.sf_scale)

    @property
    def prune_config(self):
        return PruneConfig(delta_mse_max=self.delta_mse_max, a=self.prune_a,
                           iterations=self.iterations)

    @property
    def compaction_config(self):
        return CompactionConfig(lambda_y=self.lambda_y,
                                parallel_threshold=self.parallel_threshold,
                                zero_threshold=self.zero_threshold)


def config_from_q(q, **overrides) -> EncodeConfig:
    """Evaluate the schedule at q and apply any per-field overrides."""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must be in [0, 1], got {q}")
    cfg = EncodeConfig(
        q=q,
        lambda_y=10.0 ** (-q),
        parallel_threshold=float(expit(3.0 * q)),
        delta_mse_max=10.0 ** (-8.8 - 2.0 * q),
        beta=1.4e-4 * q,
        gamma=5.0 * 10.0 ** (-3.0 - 5.0 * q),
        sf_sh=1.0 + 100.0 * q,
        sf_opacity=1.0 + 200.0 * q,
        sf_rotation=1.0 + 400.0 * q,
        sf_scale=1.0 + 4000.0 * q,
    )
    valid = {f.name for f in fields(EncodeConfig)}
    for key, value in overrides.items():
        if key not in valid:
            raise ValueError(f"unknown config field {key!r}")
        setattr(cfg, key, value)
    return cfg
