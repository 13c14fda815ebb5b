"""Reading and writing colored point clouds in PLY 1.0 format.

Only the vertex element is interpreted. ASCII and binary little-endian bodies
are supported; big-endian files are rejected.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MalformedHeader, MissingProperty, TruncatedBody, UnsupportedFormat

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

_COLOR_ALIASES = (("red", "green", "blue"), ("r", "g", "b"))


@dataclass(frozen=True, eq=False)
class PointCloud:
    """N colored points. ``positions`` is (N, 3) float64, ``colors`` (N, 3) uint8."""

    positions: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64)
        col = np.asarray(self.colors)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must be (N, 3), got {pos.shape}")
        if col.shape != pos.shape:
            raise ValueError(f"colors shape {col.shape} does not match positions {pos.shape}")
        if len(pos) < 1:
            raise ValueError("a point cloud needs at least one point")
        if not np.isfinite(pos).all():
            raise ValueError("positions contain NaN or Inf")
        if np.issubdtype(col.dtype, np.integer) and (col.min() < 0 or col.max() > 255):
            raise ValueError("colors must lie in [0, 255]")
        col = np.array(col, dtype=np.uint8)
        pos.flags.writeable = False
        col.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "colors", col)

    def __len__(self):
        return len(self.positions)

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        return np.array_equal(self.positions, other.positions) and np.array_equal(
            self.colors, other.colors
        )

    __hash__ = None


@dataclass
class _Element:
    name: str
    count: int
    props: list  # (name, dtype) or (name, ("list", count_dtype, item_dtype))


def _parse_header(data: bytes):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise MalformedHeader("missing 'ply' magic or 'end_header'")
    nl = data.find(b"\n", end)
    body_start = len(data) if nl < 0 else nl + 1
    lines = data[:end].decode("ascii", errors="replace").splitlines()
    if lines[0].strip() != "ply":
        raise MalformedHeader("first line must be 'ply'")

    fmt = None
    elements = []
    for raw in lines[1:]:
        tok = raw.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) != 3:
                raise MalformedHeader(f"bad format line: {raw!r}")
            fmt = tok[1]
            if fmt == "binary_big_endian":
                raise UnsupportedFormat("binary_big_endian PLY is not supported")
            if fmt not in ("ascii", "binary_little_endian"):
                raise MalformedHeader(f"unknown PLY format {fmt!r}")
            if tok[2] != "1.0":
                raise UnsupportedFormat(f"PLY version {tok[2]} is not supported")
        elif tok[0] == "element":
            if len(tok) != 3:
                raise MalformedHeader(f"bad element line: {raw!r}")
            try:
                count = int(tok[2])
            except ValueError:
                raise MalformedHeader(f"bad element count: {raw!r}") from None
            if count < 0:
                raise MalformedHeader(f"negative element count: {raw!r}")
            elements.append(_Element(tok[1], count, []))
        elif tok[0] == "property":
            if not elements:
                raise MalformedHeader("property declared before any element")
            if tok[1] == "list":
                if len(tok) != 5 or tok[2] not in _PLY_TYPES or tok[3] not in _PLY_TYPES:
                    raise MalformedHeader(f"bad list property: {raw!r}")
                elements[-1].props.append((tok[4], ("list", _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]])))
            else:
                if len(tok) != 3 or tok[1] not in _PLY_TYPES:
                    raise MalformedHeader(f"bad property line: {raw!r}")
                elements[-1].props.append((tok[2], _PLY_TYPES[tok[1]]))
        else:
            raise MalformedHeader(f"unexpected header line: {raw!r}")
    if fmt is None:
        raise MalformedHeader("missing 'format' line")
    return fmt, elements, body_start


def _vertex_columns(vertex: _Element):
    names = [p[0] for p in vertex.props]
    if not all(axis in names for axis in "xyz"):
        raise MissingProperty("vertex element lacks x, y, z")
    for aliases in _COLOR_ALIASES:
        if all(c in names for c in aliases):
            return ("x", "y", "z"), aliases
    raise MissingProperty("vertex element lacks red/green/blue (or r/g/b)")


def _colors_to_u8(cols):
    if np.issubdtype(cols.dtype, np.integer):
        return np.clip(cols, 0, 255).astype(np.uint8)
    return np.clip(np.rint(cols), 0, 255).astype(np.uint8)


def parse_ply(data: bytes) -> PointCloud:
    """Parse PLY bytes into a :class:`PointCloud`.

    Unknown vertex properties are skipped. Raises ``MalformedHeader``,
    ``UnsupportedFormat``, ``MissingProperty`` or ``TruncatedBody``.
    """
    fmt, elements, body_start = _parse_header(data)
    vidx = next((i for i, e in enumerate(elements) if e.name == "vertex"), None)
    if vidx is None:
        raise MissingProperty("no vertex element declared")
    vertex = elements[vidx]
    xyz, rgb = _vertex_columns(vertex)
    if any(isinstance(t, tuple) for _, t in vertex.props):
        raise UnsupportedFormat("list properties on the vertex element are not supported")
    body = data[body_start:]

    if fmt == "ascii":
        lines = body.decode("ascii", errors="replace").splitlines()
        lines = [ln for ln in lines if ln.strip()]
        # one line per element instance, in declaration order
        skip = sum(e.count for e in elements[:vidx])
        rows = lines[skip : skip + vertex.count]
        if len(rows) < vertex.count:
            raise TruncatedBody(f"expected {vertex.count} vertices, found {len(rows)}")
        nprop = len(vertex.props)
        try:
            table = np.array(" ".join(rows).split(), dtype=np.float64)
        except ValueError:
            raise TruncatedBody("non-numeric vertex data") from None
        if table.size != nprop * vertex.count:
            raise TruncatedBody("vertex rows do not match the declared property count")
        table = table.reshape(vertex.count, nprop)
        names = [p[0] for p in vertex.props]
        pos = table[:, [names.index(a) for a in xyz]]
        cols = table[:, [names.index(c) for c in rgb]]
        return PointCloud(pos, _colors_to_u8(cols))

    offset = 0
    for e in elements[:vidx]:
        if any(isinstance(t, tuple) for _, t in e.props):
            raise UnsupportedFormat(f"list properties in element {e.name!r} before vertex")
        offset += e.count * np.dtype([(n, "<" + t) for n, t in e.props]).itemsize
    dtype = np.dtype([(n, "<" + t) for n, t in vertex.props])
    need = offset + vertex.count * dtype.itemsize
    if len(body) < need:
        raise TruncatedBody(f"binary body holds {len(body)} bytes, need {need}")
    rec = np.frombuffer(body, dtype=dtype, count=vertex.count, offset=offset)
    pos = np.stack([rec[a].astype(np.float64) for a in xyz], axis=1)
    cols = np.stack([rec[c] for c in rgb], axis=1)
    return PointCloud(pos, _colors_to_u8(cols))


def write_ply(pc: PointCloud, encoding: str = "binary_little_endian") -> bytes:
    """Serialize ``pc`` with double-precision coordinates and uchar colors."""
    if encoding not in ("ascii", "binary_little_endian"):
        raise UnsupportedFormat(f"cannot write encoding {encoding!r}")
    header = (
        "ply\n"
        f"format {encoding} 1.0\n"
        f"element vertex {len(pc)}\n"
        "property double x\nproperty double y\nproperty double z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    ).encode("ascii")
    if encoding == "ascii":
        # repr round-trips doubles exactly
        lines = [
            f"{x!r} {y!r} {z!r} {r} {g} {b}"
            for (x, y, z), (r, g, b) in zip(pc.positions.tolist(), pc.colors.tolist())
        ]
        return header + ("\n".join(lines) + "\n").encode("ascii")
    rec = np.empty(len(pc), dtype=[("x", "<f8"), ("y", "<f8"), ("z", "<f8"),
                                   ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    for i, a in enumerate("xyz"):
        rec[a] = pc.positions[:, i]
    for i, c in enumerate(("red", "green", "blue")):
        rec[c] = pc.colors[:, i]
    return header + rec.tobytes()


def read_ply(path) -> PointCloud:
    return parse_ply(Path(path).read_bytes())


def save_ply(pc: PointCloud, path, encoding: str = "binary_little_endian") -> None:
    Path(path).write_bytes(write_ply(pc, encoding))


def normalize_to_unit_cube(pc: PointCloud) -> PointCloud:
    """Center the bounding box at the origin and scale its longest edge to 1.

    A single uniform scale is used so the shape is not distorted. Clouds whose
    bounding box has zero extent collapse to the origin with scale 1.
    """
    lo = pc.positions.min(axis=0)
    hi = pc.positions.max(axis=0)
    center = (lo + hi) / 2.0
    extent = float((hi - lo).max())
    scale = 1.0 / extent if extent > 0 else 1.0
    return PointCloud((pc.positions - center) * scale, pc.colors)
