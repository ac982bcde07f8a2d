"""Deterministic synthetic scenes: cities, radio maps, noise, UE reports.

The generator stands in for an external propagation simulator: a
log-distance pathloss law plus per-meter attenuation for the portion of
the straight transmitter-to-cell segment that crosses building interiors.
That keeps the fields deterministic, obstruction-aware, and cheap
(O(cells x line length)), which is all downstream localization needs.

``perturb_radio_map`` emulates the error of a learned map estimator:
spatially correlated (smoothed) noise of a target RMSE, which is exactly
the regime where pointwise map error can exceed a level-set width even
though the global RMSE is small.

All functions are pure in (inputs, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.ndimage import gaussian_filter

from .gridmap import (
    Cell,
    CityMap,
    DbScale,
    GridSpec,
    MeasurementReport,
    RadioMap,
    require_same_spec,
)

__all__ = [
    "PropagationParams",
    "NoiseParams",
    "CityGenParams",
    "generate_city",
    "generate_radio_map",
    "perturb_radio_map",
    "sample_report",
]

# samples per cell of traversed line length when measuring in-building crossings
_SUPERSAMPLE_PER_CELL = 4
# cells processed per vectorized chunk; bounds peak memory of the traversal
_TRAVERSAL_CHUNK = 4096


@dataclass(frozen=True)
class PropagationParams:
    """Log-distance propagation with per-meter wall attenuation.

    Attributes:
        pl0_db: pathloss at 1 m in dB.
        exponent: path-loss exponent.
        wall_db_per_m: extra attenuation per meter of in-building crossing.
        db_scale: dB to normalized-unit mapping for the output map.
    """

    pl0_db: float = -40.0
    exponent: float = 2.5
    wall_db_per_m: float = 2.0
    db_scale: DbScale = DbScale()

    def __post_init__(self):
        if not self.exponent > 0:
            raise ValueError(f"path-loss exponent must be positive, got {self.exponent}")
        if self.wall_db_per_m < 0:
            raise ValueError(f"wall attenuation must be >= 0, got {self.wall_db_per_m}")


@dataclass(frozen=True)
class NoiseParams:
    """Correlated map-noise parameters emulating estimator error.

    Attributes:
        target_rmse: RMSE of the added noise in normalized units.
        smoothness: correlation length of the noise in cells.
        seed: RNG seed.
    """

    target_rmse: float = 0.01
    smoothness: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.target_rmse < 0:
            raise ValueError(f"target_rmse must be >= 0, got {self.target_rmse}")
        if self.smoothness < 1:
            raise ValueError(f"smoothness must be >= 1 cell, got {self.smoothness}")


@dataclass(frozen=True)
class CityGenParams:
    """Random rectangular-building city parameters.

    Attributes:
        n_buildings: number of axis-aligned rectangles (may overlap).
        min_side / max_side: building side range in cells.
        seed: RNG seed.
        margin: cells kept free along the grid border.
    """

    n_buildings: int
    min_side: int
    max_side: int
    seed: int = 0
    margin: int = 1

    def __post_init__(self):
        if self.n_buildings < 0:
            raise ValueError(f"n_buildings must be >= 0, got {self.n_buildings}")
        if not 1 <= self.min_side <= self.max_side:
            raise ValueError(
                f"need 1 <= min_side <= max_side, got {self.min_side}..{self.max_side}"
            )
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")


def generate_city(spec: GridSpec, params: CityGenParams) -> CityMap:
    """Generate a deterministic random city of rectangular buildings.

    Buildings are placed uniformly inside the margin frame and may
    overlap.  Raises ValueError if a building of max_side cannot fit or
    if no free cell remains.
    """
    h, w = spec.shape
    if params.n_buildings > 0:
        if params.max_side > h - 2 * params.margin or params.max_side > w - 2 * params.margin:
            raise ValueError(
                f"buildings up to {params.max_side} cells do not fit a "
                f"{h}x{w} grid with margin {params.margin}"
            )
    rng = np.random.default_rng(params.seed)
    occupied = np.zeros(spec.shape, dtype=bool)
    for _ in range(params.n_buildings):
        bh = int(rng.integers(params.min_side, params.max_side + 1))
        bw = int(rng.integers(params.min_side, params.max_side + 1))
        r0 = int(rng.integers(params.margin, h - params.margin - bh + 1))
        c0 = int(rng.integers(params.margin, w - params.margin - bw + 1))
        occupied[r0:r0 + bh, c0:c0 + bw] = True
    if occupied.all():
        raise ValueError("generated city has no free cell; reduce buildings or add margin")
    return CityMap(spec, occupied)


def _wall_lengths(city: CityMap, bs: Cell) -> np.ndarray:
    """In-building length (meters) of the segment from the bs center to
    every cell center, by supersampled line traversal.

    Each segment is sampled at midpoints of >= _SUPERSAMPLE_PER_CELL
    subintervals per cell of length; the occupied fraction of samples
    times the segment length gives the crossing length.
    """
    spec = city.spec
    h, w = spec.shape
    cs = spec.cell_size
    by, bx = spec.cell_center_m(bs)

    rows, cols = np.indices((h, w))
    cy = (rows + 0.5).ravel() * cs
    cx = (cols + 0.5).ravel() * cs
    dy = cy - by
    dx = cx - bx
    dist = np.hypot(dy, dx)
    n_samples = np.maximum(1, np.ceil(_SUPERSAMPLE_PER_CELL * dist / cs)).astype(np.int64)

    occ_flat = city.occupied.ravel()
    frac = np.empty(h * w, dtype=np.float64)
    for start in range(0, h * w, _TRAVERSAL_CHUNK):
        stop = min(start + _TRAVERSAL_CHUNK, h * w)
        n = n_samples[start:stop]
        total = int(n.sum())
        cell_rel = np.repeat(np.arange(stop - start, dtype=np.int32), n)
        offsets = np.concatenate(([0], np.cumsum(n)[:-1]))
        j = np.arange(total, dtype=np.int64) - np.repeat(offsets, n)
        t = (j + 0.5) / n[cell_rel]
        py = by + t * dy[start:stop][cell_rel]
        px = bx + t * dx[start:stop][cell_rel]
        ri = np.clip((py / cs).astype(np.int64), 0, h - 1)
        ci = np.clip((px / cs).astype(np.int64), 0, w - 1)
        hits = occ_flat[ri * w + ci]
        frac[start:stop] = np.bincount(cell_rel, weights=hits, minlength=stop - start) / n
    return (frac * dist).reshape(h, w)


def generate_radio_map(city: CityMap, bs: Cell, params: PropagationParams) -> RadioMap:
    """Deterministic synthetic radio map for one transmitter.

    Pathloss at a cell z at center distance d meters is
    ``pl0_db - 10*exponent*log10(max(d, 1)) - wall_db_per_m * w(z)``
    with w(z) the in-building length of the straight bs-to-z segment;
    the dB field is affine-normalized and clamped into [0, 1].
    """
    spec = city.spec
    if not spec.contains(bs):
        raise ValueError(f"bs {bs} outside {spec.height}x{spec.width} grid")
    if city.occupied[bs.row, bs.col]:
        raise ValueError(f"bs {bs} is inside a building")

    rows, cols = np.indices(spec.shape)
    by, bx = spec.cell_center_m(bs)
    dy = (rows + 0.5) * spec.cell_size - by
    dx = (cols + 0.5) * spec.cell_size - bx
    dist = np.hypot(dy, dx)

    pl_db = params.pl0_db - 10.0 * params.exponent * np.log10(np.maximum(dist, 1.0))
    if params.wall_db_per_m > 0:
        pl_db = pl_db - params.wall_db_per_m * _wall_lengths(city, bs)
    return RadioMap(spec, bs, params.db_scale.normalize(pl_db))


def perturb_radio_map(radio_map: RadioMap, params: NoiseParams) -> RadioMap:
    """Add smoothed zero-mean noise to a radio map, emulating estimator error.

    White noise is blurred with a Gaussian of sigma ``smoothness`` cells
    and rescaled so its RMS over the grid equals ``target_rmse`` exactly,
    then the sum is clamped to [0, 1].  The bs field is preserved;
    target_rmse 0 returns the input unchanged.
    """
    if params.target_rmse == 0:
        return radio_map
    rng = np.random.default_rng(params.seed)
    noise = gaussian_filter(rng.standard_normal(radio_map.spec.shape), sigma=params.smoothness)
    rms = math.sqrt(float(np.mean(noise * noise)))
    if rms == 0.0:
        return radio_map
    noise *= params.target_rmse / rms
    values = np.clip(radio_map.values + noise, 0.0, 1.0)
    return RadioMap(radio_map.spec, radio_map.bs, values)


def sample_report(truth_maps: Mapping[str, RadioMap], ue: Cell,
                  report_noise_sd: float = 0.0, seed: int = 0,
                  domain: CityMap | None = None) -> MeasurementReport:
    """Sample the UE's measurement report from ground-truth maps.

    Each entry is the truth-map value at the UE cell plus i.i.d. Gaussian
    noise of sd ``report_noise_sd``, clamped to [0, 1]; entry order follows
    the mapping order.  If ``domain`` is given the UE must be a free cell.
    """
    if not truth_maps:
        raise ValueError("need at least one truth map")
    maps = list(truth_maps.items())
    spec = require_same_spec(*(m for _, m in maps))
    if domain is not None:
        require_same_spec(domain, spec)
        if not domain.is_free(ue):
            raise ValueError(f"ue {ue} is inside a building")
    if not spec.contains(ue):
        raise ValueError(f"ue {ue} outside {spec.height}x{spec.width} grid")
    gs = np.array([m.values[ue.row, ue.col] for _, m in maps], dtype=np.float64)
    if report_noise_sd > 0:
        rng = np.random.default_rng(seed)
        gs = np.clip(gs + rng.normal(0.0, report_noise_sd, size=gs.size), 0.0, 1.0)
    return MeasurementReport(tuple((bs_id, float(g)) for (bs_id, _), g in zip(maps, gs)))
