"""Raster grid type, ESRI-style ASCII grid I/O, and D8 flow-network derivation.

All spatial inputs (DEM, flow direction, basin mask, baseline parameter
fields) travel through one dependency-free ASCII format:

    ncols <int>
    nrows <int>
    xllcorner <float>
    yllcorner <float>
    cellsize <float>
    NODATA_value <float>
    <nrows data lines of ncols numbers, top row first>

Header keys are case-insensitive and ``#``-prefixed lines are ignored.
Values are printed at 6 significant digits, which makes load/write a
round-trip identity on conforming files.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_NODATA = -9999.0

# D8 direction codes, power-of-two convention: row axis points south.
#   32 64 128
#   16  .   1
#    8  4   2
D8_CODES = (1, 2, 4, 8, 16, 32, 64, 128)
D8_OFFSETS = {
    1: (0, 1),     # E
    2: (1, 1),     # SE
    4: (1, 0),     # S
    8: (1, -1),    # SW
    16: (0, -1),   # W
    32: (-1, -1),  # NW
    64: (-1, 0),   # N
    128: (-1, 1),  # NE
}


class GridFormatError(ValueError):
    """Malformed ASCII grid file; message carries the offending line number."""


class TopologyError(ValueError):
    """Flow-direction field has a cycle or an invalid code."""


@dataclass
class Grid:
    """A rectangular raster with geotransform metadata.

    ``values`` has shape (n_rows, n_cols) with row 0 the northernmost row.
    Cells equal to ``nodata`` (exact comparison) are excluded from every
    reduction; the sentinel is never produced by simulation.
    """

    n_rows: int
    n_cols: int
    cell_size_m: float
    x_origin: float
    y_origin: float
    nodata: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.n_rows < 1 or self.n_cols < 1:
            raise ValueError("grid must have at least one row and one column")
        if self.cell_size_m <= 0:
            raise ValueError("cellsize must be positive")
        if self.values.shape != (self.n_rows, self.n_cols):
            raise ValueError(
                f"values shape {self.values.shape} does not match "
                f"({self.n_rows}, {self.n_cols})"
            )

    def nodata_mask(self) -> np.ndarray:
        return self.values == self.nodata

    def in_bounds(self, row: int, col: int) -> bool:
        return 0 <= row < self.n_rows and 0 <= col < self.n_cols

    def like(self, values: np.ndarray, nodata: float | None = None) -> "Grid":
        """A new grid sharing this grid's georeference."""
        return Grid(
            n_rows=self.n_rows,
            n_cols=self.n_cols,
            cell_size_m=self.cell_size_m,
            x_origin=self.x_origin,
            y_origin=self.y_origin,
            nodata=self.nodata if nodata is None else nodata,
            values=values,
        )

    def same_shape(self, other: "Grid") -> bool:
        return self.n_rows == other.n_rows and self.n_cols == other.n_cols


@dataclass
class BasinMask:
    """Binary membership grid plus the outlet cell it drains to."""

    grid: Grid
    outlet_row: int
    outlet_col: int

    def __post_init__(self):
        if not self.grid.in_bounds(self.outlet_row, self.outlet_col):
            raise ValueError("outlet outside grid")
        if self.grid.values[self.outlet_row, self.outlet_col] != 1:
            raise ValueError("outlet cell is not inside the mask")

    @property
    def area_km2(self) -> float:
        n = int(np.count_nonzero(self.grid.values == 1))
        return n * self.grid.cell_size_m ** 2 / 1e6

    def member(self) -> np.ndarray:
        return self.grid.values == 1


_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


def _fmt(x: float) -> str:
    """Numeric formatting pinned to 6 significant digits."""
    return "%.6g" % x


def load_ascii_grid(path: str | Path) -> Grid:
    """Parse an ASCII grid file; errors are reported with their line number."""
    path = Path(path)
    lines = path.read_text().splitlines()
    # (line_number, text) with comments and blank lines dropped
    content = [
        (i + 1, ln) for i, ln in enumerate(lines)
        if ln.strip() and not ln.lstrip().startswith("#")
    ]
    if len(content) < len(_HEADER_KEYS):
        raise GridFormatError(f"{path}: truncated header (line {len(lines)})")

    header = {}
    for (lineno, text), want in zip(content[: len(_HEADER_KEYS)], _HEADER_KEYS):
        parts = text.split()
        if len(parts) != 2:
            raise GridFormatError(f"{path}: malformed header at line {lineno}: {text!r}")
        key = parts[0].lower()
        if key != want:
            raise GridFormatError(
                f"{path}: expected header key {want!r} at line {lineno}, got {parts[0]!r}"
            )
        try:
            header[want] = float(parts[1])
        except ValueError:
            raise GridFormatError(
                f"{path}: non-numeric header value at line {lineno}: {parts[1]!r}"
            ) from None

    n_cols = int(header["ncols"])
    n_rows = int(header["nrows"])
    if n_cols != header["ncols"] or n_rows != header["nrows"]:
        raise GridFormatError(f"{path}: ncols/nrows must be integers")

    data_lines = content[len(_HEADER_KEYS):]
    if len(data_lines) != n_rows:
        raise GridFormatError(
            f"{path}: expected {n_rows} data rows, found {len(data_lines)}"
        )
    values = np.empty((n_rows, n_cols), dtype=np.float64)
    for r, (lineno, text) in enumerate(data_lines):
        tokens = text.split()
        if len(tokens) != n_cols:
            raise GridFormatError(
                f"{path}: row of {len(tokens)} values at line {lineno}, expected {n_cols}"
            )
        for c, tok in enumerate(tokens):
            try:
                values[r, c] = float(tok)
            except ValueError:
                raise GridFormatError(
                    f"{path}: non-numeric token {tok!r} at line {lineno}"
                ) from None

    return Grid(
        n_rows=n_rows,
        n_cols=n_cols,
        cell_size_m=header["cellsize"],
        x_origin=header["xllcorner"],
        y_origin=header["yllcorner"],
        nodata=header["nodata_value"],
        values=values,
    )


def write_ascii_grid(grid: Grid, path: str | Path) -> None:
    path = Path(path)
    out = [
        f"ncols {grid.n_cols}",
        f"nrows {grid.n_rows}",
        f"xllcorner {_fmt(grid.x_origin)}",
        f"yllcorner {_fmt(grid.y_origin)}",
        f"cellsize {_fmt(grid.cell_size_m)}",
        f"NODATA_value {_fmt(grid.nodata)}",
    ]
    for r in range(grid.n_rows):
        out.append(" ".join(_fmt(v) for v in grid.values[r]))
    path.write_text("\n".join(out) + "\n")


def _downstream_index(fd: Grid) -> np.ndarray:
    """Flat downstream index per cell: -1 = drains off-domain, -2 = nodata cell.

    A cell pointing off-grid or into a nodata cell drains off-domain; its
    discharge leaves the domain and is booked against the boundary ledger.
    """
    nr, nc = fd.n_rows, fd.n_cols
    ds = np.full(nr * nc, -2, dtype=np.int64)
    vals = fd.values
    for r in range(nr):
        for c in range(nc):
            v = vals[r, c]
            if v == fd.nodata:
                continue
            code = int(v)
            if code != v or code not in D8_OFFSETS:
                raise TopologyError(
                    f"invalid flow-direction code {v!r} at cell ({r}, {c})"
                )
            dr, dc = D8_OFFSETS[code]
            r2, c2 = r + dr, c + dc
            if not fd.in_bounds(r2, c2) or vals[r2, c2] == fd.nodata:
                ds[r * nc + c] = -1
            else:
                ds[r * nc + c] = r2 * nc + c2
    return ds


def _find_cycle_cell(ds: np.ndarray, start: int, n_cols: int) -> tuple[int, int]:
    """Walk downstream until a cell repeats; return that cell's (row, col)."""
    seen = set()
    cur = start
    while cur >= 0:
        if cur in seen:
            return divmod(cur, n_cols)
        seen.add(cur)
        cur = ds[cur]
    return divmod(start, n_cols)


def flow_accumulation(fd: Grid) -> Grid:
    """Count of cells (including itself) draining through each cell.

    Raises TopologyError naming a cell on the cycle if the direction field
    is not acyclic.
    """
    nr, nc = fd.n_rows, fd.n_cols
    ds = _downstream_index(fd)
    valid = ds != -2
    indeg = np.zeros(nr * nc, dtype=np.int64)
    for i in np.nonzero(valid)[0]:
        j = ds[i]
        if j >= 0:
            indeg[j] += 1
    acc = np.where(valid, 1, 0).astype(np.float64)
    queue = deque(int(i) for i in np.nonzero(valid & (indeg == 0))[0])
    processed = 0
    while queue:
        i = queue.popleft()
        processed += 1
        j = ds[i]
        if j >= 0:
            acc[j] += acc[i]
            indeg[j] -= 1
            if indeg[j] == 0:
                queue.append(j)
    n_valid = int(np.count_nonzero(valid))
    if processed != n_valid:
        stuck = int(np.nonzero(valid & (indeg > 0))[0][0])
        r, c = _find_cycle_cell(ds, stuck, nc)
        raise TopologyError(f"flow-direction cycle through cell ({r}, {c})")
    out = np.where(valid, acc, fd.nodata)
    return fd.like(out.reshape(nr, nc))


def derive_channel_mask(acc: Grid, th: int) -> Grid:
    """Cells whose accumulated drainage reaches the channel-initiation threshold."""
    if th < 1:
        raise ValueError("channel-initiation threshold must be >= 1")
    valid = ~acc.nodata_mask()
    channel = np.where(valid & (acc.values >= th), 1.0, 0.0)
    channel[~valid] = acc.nodata
    return acc.like(channel)


def delineate_basin(fd: Grid, outlet_row: int, outlet_col: int) -> BasinMask:
    """Exactly the cells whose D8 path reaches the outlet."""
    if not fd.in_bounds(outlet_row, outlet_col):
        raise ValueError(f"outlet ({outlet_row}, {outlet_col}) outside grid")
    if fd.values[outlet_row, outlet_col] == fd.nodata:
        raise ValueError(f"outlet ({outlet_row}, {outlet_col}) is a nodata cell")
    nr, nc = fd.n_rows, fd.n_cols
    ds = _downstream_index(fd)
    upstream: dict[int, list[int]] = {}
    for i in range(nr * nc):
        j = ds[i]
        if j >= 0:
            upstream.setdefault(j, []).append(i)
    member = np.zeros(nr * nc, dtype=np.float64)
    start = outlet_row * nc + outlet_col
    member[start] = 1.0
    queue = deque([start])
    while queue:
        j = queue.popleft()
        for i in upstream.get(j, ()):
            if member[i] == 0.0:
                member[i] = 1.0
                queue.append(i)
    grid = fd.like(member.reshape(nr, nc), nodata=DEFAULT_NODATA)
    return BasinMask(grid=grid, outlet_row=outlet_row, outlet_col=outlet_col)


def topological_order(fd: Grid, mask: BasinMask) -> list[tuple[int, int]]:
    """Masked cells ordered so every cell follows all cells draining into it.

    The outlet is last: every other masked cell has a path to it, so it
    cannot be emitted while any upstream cell remains.
    """
    if not fd.same_shape(mask.grid):
        raise ValueError("flow-direction and mask shapes differ")
    nr, nc = fd.n_rows, fd.n_cols
    ds = _downstream_index(fd)
    member = mask.member().reshape(-1)
    indeg = np.zeros(nr * nc, dtype=np.int64)
    for i in np.nonzero(member)[0]:
        j = ds[i]
        if j >= 0 and member[j]:
            indeg[j] += 1
    queue = deque(int(i) for i in np.nonzero(member & (indeg == 0))[0])
    order: list[tuple[int, int]] = []
    while queue:
        i = queue.popleft()
        order.append(divmod(i, nc))
        j = ds[i]
        if j >= 0 and member[j]:
            indeg[j] -= 1
            if indeg[j] == 0:
                queue.append(j)
    n_member = int(np.count_nonzero(member))
    if len(order) != n_member:
        stuck = int(np.nonzero(member & (indeg > 0))[0][0])
        r, c = _find_cycle_cell(ds, stuck, nc)
        raise TopologyError(f"flow-direction cycle through cell ({r}, {c})")
    return order
