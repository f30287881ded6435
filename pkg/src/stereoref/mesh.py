"""Triangle meshes and PLY/STL file handling.

Vertices are model-frame mm.  Optional per-vertex colors are RGB in
[0, 1]; a vertex may instead carry the sentinel color (-1, -1, -1)
meaning "no sample" (see :func:`stereoref.render.project_texture`).

PLY files (ASCII or binary little-endian) are expected to declare the
``vertex`` element before ``face``; vertex properties ``x``, ``y``, ``z``
(float or double) with optional ``red``, ``green``, ``blue`` (uchar
0..255, or float 0..1), faces as a ``vertex_indices`` list.  Polygons
with more than three vertices are fan-triangulated.  STL (binary or
ASCII) is read as an uncolored triangle soup.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["TriangleMesh", "UNSEEN_COLOR", "load_mesh", "load_ply", "load_stl", "save_ply"]

UNSEEN_COLOR = np.array([-1.0, -1.0, -1.0])

_DEGENERATE_AREA = 1e-12  # mm^2


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray  # (N, 3) float64, mm
    triangles: np.ndarray  # (M, 3) int64 vertex indices
    colors: np.ndarray | None = None  # (N, 3) float64 in [0, 1] or sentinel rows

    def __post_init__(self) -> None:
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3).copy()
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3).copy()
        if not np.all(np.isfinite(v)):
            raise ValueError("mesh vertices must be finite")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        if t.size:
            e1 = v[t[:, 1]] - v[t[:, 0]]
            e2 = v[t[:, 2]] - v[t[:, 0]]
            areas = 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)
            bad = np.nonzero(areas < _DEGENERATE_AREA)[0]
            if bad.size:
                raise ValueError(f"degenerate zero-area triangle at index {bad[0]}")
        c = self.colors
        if c is not None:
            c = np.asarray(c, dtype=float).reshape(-1, 3).copy()
            if len(c) != len(v):
                raise ValueError("need one color per vertex")
            sentinel = np.all(c == UNSEEN_COLOR, axis=1)
            if np.any((~sentinel) & ((c < 0.0) | (c > 1.0)).any(axis=1)):
                raise ValueError("vertex colors must lie in [0, 1]")
            c.setflags(write=False)
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "colors", c)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)


def load_mesh(path) -> TriangleMesh:
    """Load a mesh by extension: .ply (ASCII or binary) or .stl."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".ply":
        return load_ply(path)
    if suffix == ".stl":
        return load_stl(path)
    raise ValueError(f"unsupported mesh format {suffix!r} for {path}")


_PLY_TYPES = {
    "char": ("b", 1), "int8": ("b", 1),
    "uchar": ("B", 1), "uint8": ("B", 1),
    "short": ("h", 2), "int16": ("h", 2),
    "ushort": ("H", 2), "uint16": ("H", 2),
    "int": ("i", 4), "int32": ("i", 4),
    "uint": ("I", 4), "uint32": ("I", 4),
    "float": ("f", 4), "float32": ("f", 4),
    "double": ("d", 8), "float64": ("d", 8),
}


def load_ply(path) -> TriangleMesh:
    path = Path(path)
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise ValueError(f"{path}: not a PLY file")
    end = data.find(b"\n", end) + 1
    header = data[:end].decode("ascii", errors="replace")
    body = data[end:]

    fmt = None
    elements: list[tuple[str, int, list]] = []
    for line in header.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property" and elements:
            if parts[1] == "list":
                # ("list", count_type, index_type, name)
                elements[-1][2].append(("list", parts[2], parts[3], parts[4]))
            else:
                # ("scalar", name, type)
                elements[-1][2].append(("scalar", parts[2], parts[1]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise ValueError(f"{path}: unsupported PLY format {fmt!r}")

    vertices: list = []
    colors: list = []
    faces: list = []
    has_color = False
    color_scale = 1.0

    def _vertex_meta(props):
        nonlocal has_color, color_scale
        names = [p[1] for p in props if p[0] == "scalar"]
        types = {p[1]: p[2] for p in props if p[0] == "scalar"}
        if {"red", "green", "blue"} <= set(names):
            has_color = True
            # integer-typed colors are stored as 0..255
            if types["red"] not in ("float", "float32", "double", "float64"):
                color_scale = 255.0
        return names

    if fmt == "ascii":
        tokens = body.decode("ascii").split("\n")
        tokens = [t.split() for t in tokens if t.strip()]
        row = 0
        for name, count, props in elements:
            scalar_names = _vertex_meta(props) if name == "vertex" else None
            for _ in range(count):
                vals = tokens[row]
                row += 1
                if name == "vertex":
                    rec = dict(zip(scalar_names, (float(x) for x in vals)))
                    vertices.append([rec["x"], rec["y"], rec["z"]])
                    if has_color:
                        colors.append([rec["red"], rec["green"], rec["blue"]])
                elif name == "face":
                    n = int(vals[0])
                    faces.append([int(x) for x in vals[1 : 1 + n]])
    else:
        offset = 0
        for name, count, props in elements:
            if name == "vertex":
                fmt_codes = "".join(_PLY_TYPES[p[2]][0] for p in props if p[0] == "scalar")
                names = _vertex_meta(props)
                size = struct.calcsize("<" + fmt_codes)
                for _ in range(count):
                    vals = struct.unpack_from("<" + fmt_codes, body, offset)
                    offset += size
                    rec = dict(zip(names, vals))
                    vertices.append([rec["x"], rec["y"], rec["z"]])
                    if has_color:
                        colors.append([rec["red"], rec["green"], rec["blue"]])
            elif name == "face":
                for _ in range(count):
                    list_prop = props[0]
                    cnt_code, cnt_size = _PLY_TYPES[list_prop[1]]
                    idx_code, idx_size = _PLY_TYPES[list_prop[2]]
                    (n,) = struct.unpack_from("<" + cnt_code, body, offset)
                    offset += cnt_size
                    idx = struct.unpack_from("<" + str(n) + idx_code, body, offset)
                    offset += n * idx_size
                    faces.append(list(idx))
            else:
                # skip unknown fixed-size elements
                fmt_codes = "".join(_PLY_TYPES[p[2]][0] for p in props if p[0] == "scalar")
                offset += struct.calcsize("<" + fmt_codes) * count

    tris = []
    for face in faces:
        for k in range(1, len(face) - 1):  # fan-triangulate polygons
            tris.append([face[0], face[k], face[k + 1]])
    color_arr = None
    if has_color and colors:
        color_arr = np.asarray(colors, dtype=float) / color_scale
    return TriangleMesh(
        np.asarray(vertices, dtype=float).reshape(-1, 3),
        np.asarray(tris, dtype=np.int64).reshape(-1, 3),
        color_arr,
    )


def load_stl(path) -> TriangleMesh:
    """Read binary or ASCII STL as a triangle soup (no colors)."""
    path = Path(path)
    with open(path, "rb") as fh:
        data = fh.read()
    is_ascii = data.lstrip().startswith(b"solid")
    if is_ascii:
        # heuristics: a binary file may still start with "solid"
        try:
            text = data.decode("ascii")
        except UnicodeDecodeError:
            is_ascii = False
    if is_ascii and "facet" in text:
        verts = []
        for line in text.splitlines():
            parts = line.split()
            if parts[:1] == ["vertex"]:
                verts.append([float(x) for x in parts[1:4]])
        v = np.asarray(verts, dtype=float).reshape(-1, 3)
    else:
        if len(data) < 84:
            raise ValueError(f"{path}: truncated STL")
        (count,) = struct.unpack_from("<I", data, 80)
        if len(data) < 84 + count * 50:
            raise ValueError(f"{path}: STL length does not match triangle count")
        raw = np.frombuffer(data, dtype=np.uint8, count=count * 50, offset=84)
        raw = raw.reshape(count, 50)
        floats = raw[:, :48].copy().view("<f4").reshape(count, 4, 3)
        v = floats[:, 1:4, :].reshape(-1, 3).astype(float)
    tris = np.arange(len(v), dtype=np.int64).reshape(-1, 3)
    return TriangleMesh(v, tris)


def save_ply(path, mesh: TriangleMesh, binary: bool = False) -> None:
    """Write a mesh as PLY; colors (when present) are stored as uchar."""
    path = Path(path)
    has_color = mesh.colors is not None
    header = ["ply"]
    header.append("format binary_little_endian 1.0" if binary else "format ascii 1.0")
    header.append(f"element vertex {mesh.n_vertices}")
    header += ["property float x", "property float y", "property float z"]
    if has_color:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append(f"element face {mesh.n_triangles}")
    header.append("property list uchar int vertex_indices")
    header.append("end_header")

    if has_color:
        c255 = np.rint(np.clip(mesh.colors, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            for i, v in enumerate(mesh.vertices):
                fh.write(struct.pack("<3f", *v))
                if has_color:
                    fh.write(struct.pack("<3B", *c255[i]))
            for t in mesh.triangles:
                fh.write(struct.pack("<B3i", 3, *t))
        else:
            lines = []
            for i, v in enumerate(mesh.vertices):
                line = f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g}"
                if has_color:
                    line += f" {c255[i][0]} {c255[i][1]} {c255[i][2]}"
                lines.append(line)
            for t in mesh.triangles:
                lines.append(f"3 {t[0]} {t[1]} {t[2]}")
            fh.write(("\n".join(lines) + "\n").encode("ascii"))
