"""Point cloud, raster and config file I/O.

Formats are deliberately minimal and bit-specified: ASCII XYZ text,
binary little-endian PLY (vertex x/y/z subset), P5 PGM for raster debug
output, and `key = value` config files.
"""

from __future__ import annotations

import dataclasses
import math
from pathlib import Path

import numpy as np

from .config import CanopyHeightMode, PlotConfig
from .errors import (BadValue, EmptyCloud, MalformedLine, UnknownKey,
                     UnsupportedPly)
from .geometry import PointCloud

# --- XYZ text ----------------------------------------------------------------


def read_xyz(path) -> PointCloud:
    """Read one point per line (>= 3 whitespace-separated floats).

    Lines starting with '#' and blank lines are skipped; extra columns
    beyond x y z are ignored.
    """
    rows = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) < 3:
                raise MalformedLine(line_no, line.rstrip("\n"))
            try:
                x, y, z = float(parts[0]), float(parts[1]), float(parts[2])
            except ValueError as exc:
                raise MalformedLine(line_no, line.rstrip("\n")) from exc
            if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
                raise MalformedLine(line_no, line.rstrip("\n"))
            rows.append((x, y, z))
    if not rows:
        raise EmptyCloud(f"no points in {path}")
    return PointCloud(np.array(rows, dtype=np.float64))


def write_xyz(path, cloud: PointCloud) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for x, y, z in cloud.points:
            handle.write(f"{x:.6f} {y:.6f} {z:.6f}\n")


# --- binary little-endian PLY ---------------------------------------------

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


def read_ply(path) -> PointCloud:
    """Read the vertex element of a binary little-endian PLY file.

    x, y, z must be float32 or float64 properties; other scalar
    properties are skipped by size. List properties, ASCII files and
    big-endian files are rejected.
    """
    with open(path, "rb") as handle:
        if handle.readline().strip() != b"ply":
            raise UnsupportedPly(f"{path}: missing 'ply' magic")
        elements = []  # (name, count, [(prop_name, np_type)], has_list)
        fmt_seen = False
        while True:
            raw = handle.readline()
            if not raw:
                raise UnsupportedPly(f"{path}: truncated header")
            line = raw.decode("ascii", errors="replace").strip()
            if line == "end_header":
                break
            parts = line.split()
            if not parts or parts[0] in ("comment", "obj_info"):
                continue
            if parts[0] == "format":
                if parts[1] != "binary_little_endian":
                    raise UnsupportedPly(f"{path}: format {parts[1]} not supported")
                fmt_seen = True
            elif parts[0] == "element":
                elements.append([parts[1], int(parts[2]), [], False])
            elif parts[0] == "property":
                if not elements:
                    raise UnsupportedPly(f"{path}: property before element")
                if parts[1] == "list":
                    elements[-1][3] = True
                    continue
                if parts[1] not in _PLY_TYPES:
                    raise UnsupportedPly(f"{path}: property type {parts[1]}")
                elements[-1][2].append((parts[-1], _PLY_TYPES[parts[1]]))
        if not fmt_seen:
            raise UnsupportedPly(f"{path}: missing format line")

        for name, count, props, has_list in elements:
            if name != "vertex":
                if has_list:
                    raise UnsupportedPly(
                        f"{path}: cannot skip list-typed element {name!r}")
                row = sum(np.dtype("<" + t).itemsize for _, t in props)
                handle.seek(count * row, 1)
                continue
            if has_list:
                raise UnsupportedPly(f"{path}: list property on vertex")
            names = [p for p, _ in props]
            if not {"x", "y", "z"} <= set(names):
                raise UnsupportedPly(f"{path}: vertex lacks x/y/z")
            types = dict(props)
            for axis in ("x", "y", "z"):
                if types[axis] not in ("f4", "f8"):
                    raise UnsupportedPly(
                        f"{path}: {axis} must be float32/float64")
            if count == 0:
                raise EmptyCloud(f"no vertices in {path}")
            dtype = np.dtype([(p, "<" + t) for p, t in props])
            data = np.fromfile(handle, dtype=dtype, count=count)
            if len(data) != count:
                raise UnsupportedPly(f"{path}: truncated vertex data")
            pts = np.column_stack([data["x"], data["y"], data["z"]])
            return PointCloud(pts.astype(np.float64))
        raise UnsupportedPly(f"{path}: no vertex element")


def write_ply(path, cloud: PointCloud) -> None:
    """Write points as float64 x/y/z, binary little-endian."""
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {len(cloud)}\n"
        "property float64 x\n"
        "property float64 y\n"
        "property float64 z\n"
        "end_header\n"
    )
    data = np.ascontiguousarray(cloud.points, dtype="<f8")
    with open(path, "wb") as handle:
        handle.write(header.encode("ascii"))
        handle.write(data.tobytes())


def read_point_cloud(path) -> PointCloud:
    """Dispatch on extension: .ply is binary PLY, anything else XYZ text."""
    if Path(path).suffix.lower() == ".ply":
        return read_ply(path)
    return read_xyz(path)


# --- PGM raster dump ---------------------------------------------------------


def write_pgm(path, image) -> None:
    """Write a binary image as P5 PGM: canopy black (0), background white.

    Rows are emitted north-up (largest y first) so the file previews the
    way the plot is drawn on a map.
    """
    payload = np.where(image.bits != 0, 0, 255).astype(np.uint8)
    with open(path, "wb") as handle:
        handle.write(f"P5\n{image.width} {image.height}\n255\n".encode("ascii"))
        handle.write(payload[::-1, :].tobytes())


# --- config ------------------------------------------------------------------

_CONFIG_PARSERS = {}
for _field in dataclasses.fields(PlotConfig):
    if _field.name == "canopy_height_mode":
        _CONFIG_PARSERS[_field.name] = CanopyHeightMode.parse
    elif isinstance(_field.default, int):
        _CONFIG_PARSERS[_field.name] = int
    else:
        _CONFIG_PARSERS[_field.name] = float


def load_config(path) -> PlotConfig:
    """Parse `key = value` lines; unset keys keep the published defaults."""
    overrides = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, 1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise BadValue(f"line {line_no}: expected 'key = value'")
            key, value = (part.strip() for part in stripped.split("=", 1))
            if key not in _CONFIG_PARSERS:
                raise UnknownKey(f"line {line_no}: unknown key {key!r}")
            try:
                overrides[key] = _CONFIG_PARSERS[key](value)
            except BadValue:
                raise
            except ValueError as exc:
                raise BadValue(
                    f"line {line_no}: bad value for {key}: {value!r}") from exc
    return PlotConfig(**overrides)
