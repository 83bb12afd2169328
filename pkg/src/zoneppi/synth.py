"""Synthetic multi-zone yield datasets with controllable prediction quality.

Yields are zero-inflated and right-skewed (a point mass at zero plus a gamma
draw), with an optional linear trend in standardized latitude.  Predictions
are the yield plus Gaussian noise scaled so their squared within-zone
correlation with the yield targets ``target_r2``; at ``target_r2 = 0`` they
are drawn independently of the yields.  One feature coordinate equals the
prediction so a linear model on features can recover it; the rest are
independent noise.

Generation is a pure function of the config: every zone draws from its own
substream, so output is byte-identical across runs and zone count changes
leave earlier zones' fields untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import FieldRecord
from .util import substream


@dataclass
class SynthConfig:
    n_zones: int = 10
    fields_per_zone: int | tuple[int, int] = 40
    zero_inflation: float = 0.2
    yield_shape: float = 2.0
    yield_scale: float = 1.0
    target_r2: float = 0.2
    spatial_trend: float = 0.0
    n_regions: int = 2
    feature_dim: int = 3
    seed: int = 0

    def validate(self) -> None:
        if self.n_zones < 1:
            raise ValueError("n_zones must be >= 1")
        if not 0.0 <= self.zero_inflation < 1.0:
            raise ValueError("zero_inflation must be in [0, 1)")
        if not 0.0 <= self.target_r2 < 1.0:
            raise ValueError("target_r2 must be in [0, 1)")
        if self.yield_shape <= 0 or self.yield_scale <= 0:
            raise ValueError("yield shape and scale must be positive")
        if self.n_regions < 1:
            raise ValueError("n_regions must be >= 1")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        lo, hi = self._field_range()
        if lo < 1 or hi < lo:
            raise ValueError("fields_per_zone must be a positive int or (lo, hi)")

    def _field_range(self) -> tuple[int, int]:
        if isinstance(self.fields_per_zone, int):
            return self.fields_per_zone, self.fields_per_zone
        lo, hi = self.fields_per_zone
        return int(lo), int(hi)


def _zone_centers(n_zones: int) -> np.ndarray:
    """Zone centers on a square grid, one degree apart."""
    side = math.ceil(math.sqrt(n_zones))
    idx = np.arange(n_zones)
    return np.column_stack([8.0 + idx // side, 4.0 + idx % side]).astype(float)


def generate(config: SynthConfig) -> list[FieldRecord]:
    """Generate one synthetic dataset as a flat list of field records.

    All records are labeled; unlabeled fields arise downstream by blanking
    yields or by resampling in the evaluation harness.
    """
    config.validate()
    lo, hi = config._field_range()
    centers = _zone_centers(config.n_zones)

    counts = np.empty(config.n_zones, dtype=int)
    coords: list[np.ndarray] = []
    for z in range(config.n_zones):
        rng = substream(config.seed, "zone-geometry", z)
        counts[z] = int(rng.integers(lo, hi + 1)) if hi > lo else lo
        coords.append(centers[z] + rng.normal(0.0, 0.05, size=(counts[z], 2)))

    all_lat = np.concatenate([c[:, 0] for c in coords])
    lat_mean = float(all_lat.mean())
    lat_std = float(all_lat.std())

    records: list[FieldRecord] = []
    for z in range(config.n_zones):
        rng = substream(config.seed, "zone-values", z)
        m = counts[z]
        lat, lon = coords[z][:, 0], coords[z][:, 1]

        y = rng.gamma(config.yield_shape, config.yield_scale, size=m)
        if config.spatial_trend != 0.0 and lat_std > 0.0:
            y = y + config.spatial_trend * (lat - lat_mean) / lat_std
        y = np.maximum(y, 0.0)
        if config.zero_inflation > 0.0:
            y = np.where(rng.random(m) < config.zero_inflation, 0.0, y)

        var_y = float(y.var(ddof=1)) if m >= 2 else 0.0
        if config.target_r2 == 0.0:
            pred = y.mean() + rng.normal(0.0, math.sqrt(max(var_y, 1e-12)), size=m)
        else:
            noise_sd = math.sqrt(var_y * (1.0 - config.target_r2) / config.target_r2)
            pred = y + rng.normal(0.0, noise_sd, size=m)

        feats = rng.normal(0.0, 1.0, size=(m, config.feature_dim))
        feats[:, 0] = pred

        region = f"region_{z % config.n_regions:03d}"
        zone_id = f"zone_{z:04d}"
        for i in range(m):
            records.append(
                FieldRecord(
                    field_id=f"{zone_id}_f{i:04d}",
                    zone_id=zone_id,
                    admin1=region,
                    latitude=float(lat[i]),
                    longitude=float(lon[i]),
                    yield_=float(y[i]),
                    prediction=float(pred[i]),
                    features=tuple(float(v) for v in feats[i]),
                )
            )
    return records
