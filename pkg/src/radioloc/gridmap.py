"""Grid data model and file I/O for city maps and radio maps.

Everything downstream (synthetic generation, localization, tuning,
experiments) works on the types defined here.  Conventions:

- Grids are row-major with row 0 at the top, matching 8-bit grayscale
  image formats, so externally produced map assets load without flips.
- Radio map values are normalized pathloss in [0, 1]: 1.0 is the
  strongest received signal, 0.0 is at or below the noise cutoff.
  dB enters only at the report boundary through ``DbScale``.
- Cell (row, col) has its center at ((row + 0.5), (col + 0.5)) * cell_size
  in meters.
- All types are immutable after construction and safe to share across
  workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "GridError",
    "SpecMismatchError",
    "PgmFormatError",
    "PgmTruncatedError",
    "DimensionMismatchError",
    "GridSpec",
    "Cell",
    "CityMap",
    "RadioMap",
    "DbScale",
    "MeasurementReport",
    "Station",
    "Scenario",
    "pathloss_from_powers",
    "require_same_spec",
    "read_pgm",
    "write_pgm",
    "load_grid",
    "save_grid",
    "save_csv",
    "load_scenario",
    "save_scenario",
]


class GridError(Exception):
    """Base class for grid data and grid-file errors."""


class SpecMismatchError(GridError):
    """Grids that must share one GridSpec do not."""


class PgmFormatError(GridError):
    """PGM header is malformed or the format is unsupported."""


class PgmTruncatedError(GridError):
    """PGM pixel payload is shorter than the header promises."""


class DimensionMismatchError(GridError):
    """Grid dimensions are invalid or differ from the expected GridSpec."""


@dataclass(frozen=True)
class Cell:
    """A grid cell index. Row 0 is the top row."""

    row: int
    col: int


@dataclass(frozen=True)
class GridSpec:
    """Shape and metric resolution of a scenario's grids.

    Attributes:
        height: number of rows (>= 1).
        width: number of columns (>= 1).
        cell_size: meters per cell side (> 0, default 1.0).
    """

    height: int
    width: int
    cell_size: float = 1.0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.height}x{self.width}")
        if not self.cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def n_cells(self) -> int:
        return self.height * self.width

    def contains(self, cell: Cell) -> bool:
        return 0 <= cell.row < self.height and 0 <= cell.col < self.width

    def cell_center_m(self, cell: Cell) -> tuple[float, float]:
        """Center of a cell in meters, as (y, x) = (row-axis, col-axis)."""
        return ((cell.row + 0.5) * self.cell_size, (cell.col + 0.5) * self.cell_size)


def require_same_spec(*objs) -> GridSpec:
    """Check that all arguments share one GridSpec and return it.

    Accepts anything with a ``.spec`` attribute, or bare GridSpec values.
    Raises SpecMismatchError on the first disagreement.
    """
    if not objs:
        raise ValueError("require_same_spec needs at least one argument")
    specs = [o if isinstance(o, GridSpec) else o.spec for o in objs]
    first = specs[0]
    for s in specs[1:]:
        if s != first:
            raise SpecMismatchError(f"grid specs differ: {first} vs {s}")
    return first


@dataclass(frozen=True)
class DbScale:
    """Affine mapping between pathloss in dB and normalized [0, 1] values.

    Attributes:
        max_db: pathloss mapped to normalized 1.0 (strongest signal).
        min_db: cutoff pathloss mapped to normalized 0.0.
    """

    max_db: float = 0.0
    min_db: float = -147.0

    def __post_init__(self):
        if not self.max_db > self.min_db:
            raise ValueError(f"max_db ({self.max_db}) must exceed min_db ({self.min_db})")

    @property
    def span_db(self) -> float:
        return self.max_db - self.min_db

    def normalize(self, pl_db):
        """Normalize pathloss dB value(s) into [0, 1], clamping outside the range."""
        x = (np.asarray(pl_db, dtype=np.float64) - self.min_db) / self.span_db
        out = np.clip(x, 0.0, 1.0)
        return float(out) if np.isscalar(pl_db) else out

    def denormalize(self, value):
        """Inverse of normalize on the unclamped range [min_db, max_db]."""
        x = np.asarray(value, dtype=np.float64) * self.span_db + self.min_db
        return float(x) if np.isscalar(value) else x


def pathloss_from_powers(p_rx_dbm: float, p_tx_dbm: float, scale: DbScale) -> float:
    """Normalized pathloss from received and transmit power in dBm.

    Pathloss in dB is the received minus the transmitted power (small-scale
    fading assumed averaged out); the result is affine-normalized and
    clamped via ``scale``.
    """
    return scale.normalize(p_rx_dbm - p_tx_dbm)


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CityMap:
    """Binary occupancy grid: True marks building-interior cells.

    Invariant: at least one free (non-occupied) cell exists.
    """

    spec: GridSpec
    occupied: np.ndarray

    def __post_init__(self):
        occ = np.array(self.occupied, dtype=bool)
        if occ.shape != self.spec.shape:
            raise ValueError(f"occupancy shape {occ.shape} != spec shape {self.spec.shape}")
        if occ.all():
            raise ValueError("city map has no free cell")
        object.__setattr__(self, "occupied", _readonly(occ))
        object.__setattr__(self, "_free", _readonly(~occ))

    @property
    def free(self) -> np.ndarray:
        """Boolean grid of free (non-building) cells."""
        return self._free

    def is_free(self, cell: Cell) -> bool:
        return bool(self._free[cell.row, cell.col])

    def free_cells(self) -> np.ndarray:
        """(n, 2) array of [row, col] indices of free cells, row-major order."""
        return np.argwhere(self._free)


@dataclass(frozen=True)
class RadioMap:
    """Per-station scalar field of normalized pathloss over the grid.

    Attributes:
        spec: grid geometry.
        bs: transmitter cell, must lie inside the grid.
        values: float array in [0, 1], shape spec.shape.
    """

    spec: GridSpec
    bs: Cell
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.shape != self.spec.shape:
            raise ValueError(f"values shape {vals.shape} != spec shape {self.spec.shape}")
        if not self.spec.contains(self.bs):
            raise ValueError(f"bs {self.bs} outside {self.spec.height}x{self.spec.width} grid")
        if vals.size and (vals.min() < 0.0 or vals.max() > 1.0):
            raise ValueError("radio map values must lie in [0, 1]")
        object.__setattr__(self, "values", _readonly(vals))

    def at(self, cell: Cell) -> float:
        return float(self.values[cell.row, cell.col])


@dataclass(frozen=True)
class MeasurementReport:
    """Reported normalized pathloss per base station.

    Attributes:
        entries: tuple of (bs_id, g) pairs; ids distinct, g in [0, 1].
    """

    entries: tuple

    def __post_init__(self):
        norm = tuple((str(bs_id), float(g)) for bs_id, g in self.entries)
        if len(norm) < 1:
            raise ValueError("report needs at least one entry")
        ids = [e[0] for e in norm]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate bs ids in report: {ids}")
        for bs_id, g in norm:
            if not 0.0 <= g <= 1.0:
                raise ValueError(f"reported pathloss for {bs_id} outside [0, 1]: {g}")
        object.__setattr__(self, "entries", norm)

    @property
    def k(self) -> int:
        """Number of reporting base stations."""
        return len(self.entries)

    @property
    def bs_ids(self) -> tuple:
        return tuple(e[0] for e in self.entries)

    def subset(self, bs_ids) -> "MeasurementReport":
        """Report restricted to the given ids, in the given order."""
        by_id = dict(self.entries)
        return MeasurementReport(tuple((i, by_id[i]) for i in bs_ids))


# ---------------------------------------------------------------------------
# PGM (binary P5) read/write
# ---------------------------------------------------------------------------

def write_pgm(path, pixels: np.ndarray) -> None:
    """Write a 2D uint8 array as binary PGM (P5, maxval 255)."""
    arr = np.ascontiguousarray(pixels, dtype=np.uint8)
    if arr.ndim != 2:
        raise ValueError(f"PGM writer needs a 2D array, got shape {arr.shape}")
    h, w = arr.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + arr.tobytes())


def _parse_pgm_header(data: bytes, path) -> tuple[int, int, int, int]:
    """Return (width, height, maxval, payload_offset). Raises PgmFormatError."""
    if data[:2] != b"P5":
        raise PgmFormatError(f"{path}: not a binary PGM (missing P5 magic)")
    pos = 2
    fields = []
    while len(fields) < 3:
        # skip whitespace and '#' comment lines between header fields
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            nl = data.find(b"\n", pos)
            if nl == -1:
                raise PgmFormatError(f"{path}: unterminated comment in header")
            pos = nl + 1
            continue
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if pos == start:
            raise PgmFormatError(f"{path}: expected integer in PGM header")
        fields.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise PgmFormatError(f"{path}: missing whitespace after maxval")
    pos += 1  # exactly one whitespace byte separates header from payload
    width, height, maxval = fields
    if maxval != 255:
        raise PgmFormatError(f"{path}: only maxval 255 supported, got {maxval}")
    return width, height, maxval, pos


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM file into a 2D uint8 array.

    Raises:
        PgmFormatError: malformed or unsupported header.
        DimensionMismatchError: nonpositive dimensions.
        PgmTruncatedError: payload shorter than width*height bytes.
    """
    data = Path(path).read_bytes()
    width, height, _, offset = _parse_pgm_header(data, path)
    if width < 1 or height < 1:
        raise DimensionMismatchError(f"{path}: invalid dimensions {width}x{height}")
    need = width * height
    payload = data[offset:offset + need]
    if len(payload) < need:
        raise PgmTruncatedError(
            f"{path}: payload has {len(payload)} bytes, header promises {need}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width)


def load_grid(path, kind: str, *, expected_spec: GridSpec | None = None,
              cell_size: float = 1.0, bs: Cell | None = None):
    """Load a PGM grid file as a CityMap or RadioMap.

    Pixel p maps to value p/255 for radio maps; p >= 128 means occupied for
    city maps.  If ``expected_spec`` is given, the file dimensions must
    match it and its cell_size is used.

    For radio maps the transmitter cell is not stored in the PGM; pass
    ``bs`` explicitly (the scenario manifest does), otherwise the cell with
    the strongest value is used.
    """
    pixels = read_pgm(path)
    h, w = pixels.shape
    if expected_spec is not None:
        if (h, w) != expected_spec.shape:
            raise DimensionMismatchError(
                f"{path}: grid is {h}x{w}, expected {expected_spec.height}x{expected_spec.width}"
            )
        spec = expected_spec
    else:
        spec = GridSpec(h, w, cell_size)
    if kind == "city":
        return CityMap(spec, pixels >= 128)
    if kind == "radio":
        values = pixels.astype(np.float64) / 255.0
        if bs is None:
            r, c = np.unravel_index(int(np.argmax(values)), values.shape)
            bs = Cell(int(r), int(c))
        return RadioMap(spec, bs, values)
    raise ValueError(f"unknown grid kind {kind!r} (expected 'city' or 'radio')")


def save_grid(grid, path) -> None:
    """Save a CityMap or RadioMap as binary PGM.

    Radio map values are quantized to 8 bits; a save/load round trip
    reproduces values to within 1/255 (city maps round-trip exactly).
    """
    if isinstance(grid, CityMap):
        write_pgm(path, np.where(grid.occupied, 255, 0).astype(np.uint8))
    elif isinstance(grid, RadioMap):
        write_pgm(path, np.rint(grid.values * 255.0).astype(np.uint8))
    else:
        raise TypeError(f"cannot save {type(grid).__name__} as a grid file")


def save_csv(path, values: np.ndarray) -> None:
    """Export a 2D array as CSV with header ``row,col,value``."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValueError(f"CSV export needs a 2D array, got shape {arr.shape}")
    is_float = np.issubdtype(arr.dtype, np.floating)
    with open(path, "w", newline="") as fh:
        fh.write("row,col,value\n")
        for r in range(arr.shape[0]):
            for c in range(arr.shape[1]):
                v = arr[r, c]
                fh.write(f"{r},{c},{float(v)!r}\n" if is_float else f"{r},{c},{int(v)}\n")


# ---------------------------------------------------------------------------
# Scenario manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Station:
    """One base station: identity, cell, ground-truth map, optional estimate."""

    id: str
    cell: Cell
    truth: RadioMap
    est: RadioMap | None = None


@dataclass(frozen=True)
class Scenario:
    """A complete localization scene: city, stations with maps, dB scale."""

    scenario_id: str
    spec: GridSpec
    city: CityMap
    stations: tuple
    db_scale: DbScale

    def station_ids(self) -> tuple:
        return tuple(s.id for s in self.stations)

    def truth_maps(self) -> dict:
        return {s.id: s.truth for s in self.stations}

    def est_maps(self) -> dict:
        """Estimated maps keyed by station id, falling back to truth."""
        return {s.id: (s.est if s.est is not None else s.truth) for s in self.stations}


def load_scenario(manifest_path) -> Scenario:
    """Load a scenario from a JSON manifest.

    Manifest keys: ``grid`` {height,width,cell_size}, ``city`` (PGM path),
    ``stations`` (array of {id,row,col,truth_map,est_map}), ``db_scale``
    {max_db,min_db}.  Map paths are relative to the manifest directory;
    ``est_map`` may be null or absent.
    """
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise GridError(f"{manifest_path}: invalid manifest JSON: {exc}") from exc
    try:
        g = doc["grid"]
        spec = GridSpec(int(g["height"]), int(g["width"]), float(g.get("cell_size", 1.0)))
        scale = DbScale(float(doc["db_scale"]["max_db"]), float(doc["db_scale"]["min_db"]))
        city_rel = doc["city"]
        station_docs = doc["stations"]
    except (KeyError, TypeError) as exc:
        raise GridError(f"{manifest_path}: missing manifest key: {exc}") from exc
    base = manifest_path.parent
    city = load_grid(base / city_rel, "city", expected_spec=spec)
    stations = []
    for sd in station_docs:
        cell = Cell(int(sd["row"]), int(sd["col"]))
        truth = load_grid(base / sd["truth_map"], "radio", expected_spec=spec, bs=cell)
        est = None
        if sd.get("est_map"):
            est = load_grid(base / sd["est_map"], "radio", expected_spec=spec, bs=cell)
        stations.append(Station(str(sd["id"]), cell, truth, est))
    return Scenario(manifest_path.parent.name, spec, city, tuple(stations), scale)


def save_scenario(scenario: Scenario, out_dir, manifest_name: str = "manifest.json") -> Path:
    """Write a scenario's grids as PGM files plus a JSON manifest.

    Returns the manifest path.  Layout: ``city.pgm``, ``<id>_truth.pgm``
    and ``<id>_est.pgm`` per station, all beside the manifest.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_grid(scenario.city, out_dir / "city.pgm")
    station_docs = []
    for st in scenario.stations:
        truth_name = f"{st.id}_truth.pgm"
        save_grid(st.truth, out_dir / truth_name)
        est_name = None
        if st.est is not None:
            est_name = f"{st.id}_est.pgm"
            save_grid(st.est, out_dir / est_name)
        station_docs.append({
            "id": st.id,
            "row": st.cell.row,
            "col": st.cell.col,
            "truth_map": truth_name,
            "est_map": est_name,
        })
    doc = {
        "grid": {
            "height": scenario.spec.height,
            "width": scenario.spec.width,
            "cell_size": scenario.spec.cell_size,
        },
        "city": "city.pgm",
        "stations": station_docs,
        "db_scale": {"max_db": scenario.db_scale.max_db, "min_db": scenario.db_scale.min_db},
    }
    manifest_path = out_dir / manifest_name
    manifest_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return manifest_path
