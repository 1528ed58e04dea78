"""Multiscale raster containers, block aggregation, observation noise and grid text I/O.

Grid file layout (UTF-8)::

    rows cols cell_size n_layers
    name_1 name_2 ... [landcover]
    <rows*cols lines of space separated values, row-major>

Land cover is stored as integer codes 0=baresoil, 1=corn, 2=cotton and, when
present, is always the last column.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DomainError, ParseError, ShapeError

BARESOIL, CORN, COTTON = 0, 1, 2
LANDCOVER_NAMES = ("baresoil", "corn", "cotton")
N_LANDCOVER = len(LANDCOVER_NAMES)

# valid physical ranges, checked by FineGrid.validate
LAYER_RANGES = {
    "LAI": (0.0, np.inf),
    "PPT": (0.0, np.inf),
    "SM": (0.0, 0.6),
    "TB": (50.0, 350.0),
}


@dataclass
class FineGrid:
    """A stack of co-registered real-valued layers plus an optional land-cover raster."""

    rows: int
    cols: int
    cell_size: float = 1.0
    fields: dict = field(default_factory=dict)
    landcover: np.ndarray | None = None

    def __post_init__(self):
        if self.rows < 0 or self.cols < 0:
            raise ShapeError(f"negative grid shape {self.rows}x{self.cols}")
        shape = (self.rows, self.cols)
        fields = {}
        for name, values in self.fields.items():
            arr = np.asarray(values, dtype=float)
            if arr.shape != shape:
                raise ShapeError(f"layer {name!r} has shape {arr.shape}, grid is {shape}")
            fields[name] = arr
        self.fields = fields
        if self.landcover is not None:
            lc = np.asarray(self.landcover)
            if lc.shape != shape:
                raise ShapeError(f"landcover has shape {lc.shape}, grid is {shape}")
            if lc.size and (lc.min() < 0 or lc.max() >= N_LANDCOVER):
                raise DomainError("landcover codes must be in {0, 1, 2}")
            self.landcover = lc.astype(np.int64)

    @property
    def shape(self):
        return (self.rows, self.cols)

    def __getitem__(self, name):
        try:
            return self.fields[name]
        except KeyError:
            raise DomainError(f"layer {name!r} not present (have {sorted(self.fields)})") from None

    def __contains__(self, name):
        return name in self.fields

    def require(self, *names):
        missing = [n for n in names if n not in self.fields]
        if missing:
            raise DomainError(f"missing layer(s) {missing}")

    def with_layers(self, **layers):
        """Copy of the grid with layers added or overwritten."""
        fields = dict(self.fields)
        fields.update(layers)
        return replace(self, fields=fields)

    def validate(self):
        """Raise DomainError if any present layer violates its physical range."""
        for name, (lo, hi) in LAYER_RANGES.items():
            if name in self.fields:
                arr = self.fields[name]
                if not np.all(np.isfinite(arr)) or arr.min(initial=lo) < lo or arr.max(initial=hi) > hi:
                    raise DomainError(f"layer {name} outside [{lo}, {hi}]")
        return self

    def equals(self, other):
        if self.shape != other.shape or self.cell_size != other.cell_size:
            return False
        if list(self.fields) != list(other.fields):
            return False
        if any(not np.array_equal(self.fields[k], other.fields[k]) for k in self.fields):
            return False
        if (self.landcover is None) != (other.landcover is None):
            return False
        return self.landcover is None or np.array_equal(self.landcover, other.landcover)


@dataclass
class CoarseGrid(FineGrid):
    """Grid obtained by block-aggregating a finer grid by ``scale_factor``."""

    scale_factor: int = 1


@dataclass
class NoiseSpec:
    sd_lst: float = 5.0
    sd_ppt: float = 1.0
    sd_lai: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if min(self.sd_lst, self.sd_ppt, self.sd_lai) < 0:
            raise DomainError("noise standard deviations must be >= 0")


def block_mean(values, scale_factor):
    """Mean over non-overlapping ``scale_factor`` x ``scale_factor`` blocks."""
    r, c = values.shape
    s = scale_factor
    return values.reshape(r // s, s, c // s, s).mean(axis=(1, 3))


def block_mode(labels, scale_factor, n_labels=N_LANDCOVER):
    """Most frequent label per block; ties go to the lowest label code."""
    r, c = labels.shape
    s = scale_factor
    blocks = labels.reshape(r // s, s, c // s, s)
    counts = np.stack([(blocks == k).sum(axis=(1, 3)) for k in range(n_labels)], axis=-1)
    return np.argmax(counts, axis=-1)


def aggregate(fine, scale_factor, layers=None):
    """Block-average ``fine`` to a grid ``scale_factor`` times coarser.

    Parameters
    ----------
    fine : FineGrid
        Source grid (may itself be a CoarseGrid; scale factors compose).
    scale_factor : int
        Integer ratio of coarse to fine cell size; must divide both dimensions.
    layers : iterable of str, optional
        Layers to aggregate. Defaults to every layer.

    Returns
    -------
    CoarseGrid
    """
    s = int(scale_factor)
    if s != scale_factor or s < 1:
        raise DomainError(f"scale_factor must be a positive integer, got {scale_factor!r}")
    if fine.rows == 0 or fine.cols == 0:
        raise DomainError("cannot aggregate an empty grid")
    if fine.rows % s or fine.cols % s:
        raise ShapeError(f"scale_factor {s} does not divide grid shape {fine.shape}")
    names = list(fine.fields) if layers is None else list(layers)
    fine.require(*names)
    fields = {name: block_mean(fine.fields[name], s) for name in names}
    landcover = None if fine.landcover is None else block_mode(fine.landcover, s)
    base = getattr(fine, "scale_factor", 1)
    return CoarseGrid(
        rows=fine.rows // s,
        cols=fine.cols // s,
        cell_size=fine.cell_size * s,
        fields=fields,
        landcover=landcover,
        scale_factor=base * s,
    )


def upsample(coarse_values, scale_factor):
    """Nearest-block expansion of a coarse array back onto the fine lattice."""
    s = int(scale_factor)
    return np.repeat(np.repeat(coarse_values, s, axis=0), s, axis=1)


def add_observation_noise(grid, spec):
    """Return a copy of ``grid`` with Gaussian noise on LST, PPT and LAI.

    Draws happen in the fixed order LST, PPT, LAI from a generator seeded with
    ``spec.seed``. PPT and LAI are clamped at zero afterwards.
    """
    grid.require("LST", "PPT", "LAI")
    rng = np.random.default_rng(spec.seed)
    shape = grid.shape
    lst = grid["LST"] + spec.sd_lst * rng.standard_normal(shape)
    ppt = np.maximum(grid["PPT"] + spec.sd_ppt * rng.standard_normal(shape), 0.0)
    lai = np.maximum(grid["LAI"] + spec.sd_lai * rng.standard_normal(shape), 0.0)
    return grid.with_layers(LST=lst, PPT=ppt, LAI=lai)


# --------------------------------------------------------------------------- I/O


def write_grid(grid, path):
    path = Path(path)
    names = list(grid.fields)
    has_lc = grid.landcover is not None
    header_names = names + (["landcover"] if has_lc else [])
    for name in header_names:
        if not name or any(ch.isspace() for ch in name):
            raise DomainError(f"layer name {name!r} cannot contain whitespace")
    columns = [grid.fields[n].ravel() for n in names]
    lc = grid.landcover.ravel() if has_lc else None
    lines = [f"{grid.rows} {grid.cols} {float(grid.cell_size)!r} {len(header_names)}", " ".join(header_names)]
    for i in range(grid.rows * grid.cols):
        vals = [repr(float(col[i])) for col in columns]
        if has_lc:
            vals.append(str(int(lc[i])))
        lines.append(" ".join(vals))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_grid(path):
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise ParseError("missing header", line=1)
    head = lines[0].split()
    if len(head) != 4:
        raise ParseError(f"header needs 'rows cols cell_size n_layers', got {lines[0]!r}", line=1)
    try:
        rows, cols, n_layers = int(head[0]), int(head[1]), int(head[3])
        cell_size = float(head[2])
    except ValueError as exc:
        raise ParseError(f"bad header value: {exc}", line=1) from None
    if rows < 0 or cols < 0 or n_layers < 0:
        raise ParseError("negative header value", line=1)
    if len(lines) < 2:
        raise ParseError("missing layer-name line", line=2)
    names = lines[1].split()
    if len(names) != n_layers:
        raise ParseError(f"header declares {n_layers} layers but {len(names)} names given", line=2)
    if "landcover" in names[:-1]:
        raise ParseError("landcover must be the last layer", line=2)
    body = lines[2:]
    # tolerate trailing blank lines only
    while body and not body[-1].strip():
        body.pop()
    n = rows * cols
    data = np.empty((n, n_layers), dtype=float)
    for i, raw in enumerate(body):
        lineno = i + 3
        if i >= n:
            raise ParseError(f"more data rows than the declared {rows}x{cols}={n}", line=lineno)
        parts = raw.split()
        if len(parts) != n_layers:
            raise ParseError(f"expected {n_layers} values, found {len(parts)}", line=lineno)
        try:
            data[i] = [float(p) for p in parts]
        except ValueError as exc:
            raise ParseError(f"bad value: {exc}", line=lineno) from None
    if len(body) != n:
        raise ParseError(f"expected {n} data rows, found {len(body)}", line=len(lines) + 1)
    fields = {}
    landcover = None
    for j, name in enumerate(names):
        col = data[:, j].reshape(rows, cols)
        if name == "landcover":
            if not np.all(col == np.round(col)):
                raise ParseError("non-integer landcover code")
            landcover = col.astype(np.int64)
        else:
            fields[name] = col
    return FineGrid(rows=rows, cols=cols, cell_size=cell_size, fields=fields, landcover=landcover)
