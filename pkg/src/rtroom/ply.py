"""PLY reader/writer for point clouds and triangle meshes.

Supported subset: ASCII and binary_little_endian 1.0; vertex properties
x,y,z (+ optional nx,ny,nz) as float32, optional per-vertex float "quality"
and uchar red/green/blue; faces as uchar count + int32 vertex indices.
This is the interchange format between every pipeline stage.
"""

from __future__ import annotations

import io
from contextlib import contextmanager

import numpy as np

from .geometry import GeometryError, PointCloud, TriMesh


@contextmanager
def _binary_source(src):
    """Accept a path, bytes, or a binary file object."""
    if isinstance(src, (bytes, bytearray)):
        yield io.BytesIO(src)
    elif hasattr(src, "read"):
        yield src
    else:
        with open(src, "rb") as f:
            yield f


@contextmanager
def _binary_sink(dst):
    if hasattr(dst, "write"):
        yield dst
    else:
        with open(dst, "wb") as f:
            yield f

_PLY_TYPES = {
    "float": ("f4", 4), "float32": ("f4", 4),
    "double": ("f8", 8), "float64": ("f8", 8),
    "uchar": ("u1", 1), "uint8": ("u1", 1),
    "char": ("i1", 1), "int8": ("i1", 1),
    "short": ("i2", 2), "int16": ("i2", 2),
    "ushort": ("u2", 2), "uint16": ("u2", 2),
    "int": ("i4", 4), "int32": ("i4", 4),
    "uint": ("u4", 4), "uint32": ("u4", 4),
}


class PlyError(ValueError):
    pass


def _write_header(f, n_vertices, n_faces, with_normals, extra_props, binary):
    fmt = "binary_little_endian" if binary else "ascii"
    lines = ["ply", f"format {fmt} 1.0", f"element vertex {n_vertices}"]
    lines += ["property float x", "property float y", "property float z"]
    if with_normals:
        lines += ["property float nx", "property float ny", "property float nz"]
    for name, kind in extra_props:
        lines.append(f"property {kind} {name}")
    if n_faces is not None:
        lines.append(f"element face {n_faces}")
        lines.append("property list uchar int vertex_indices")
    lines.append("end_header")
    f.write(("\n".join(lines) + "\n").encode("ascii"))


def save_cloud(path, cloud: PointCloud, binary: bool = True) -> None:
    with_normals = cloud.normals is not None
    with _binary_sink(path) as f:
        _write_header(f, len(cloud), None, with_normals, [], binary)
        cols = [cloud.points.astype("<f4")]
        if with_normals:
            cols.append(cloud.normals.astype("<f4"))
        data = np.hstack(cols)
        if binary:
            f.write(data.tobytes())
        else:
            np.savetxt(f, data, fmt="%.8g")


def save_mesh(path, mesh: TriMesh, binary: bool = True,
              vertex_quality=None, vertex_colors=None) -> None:
    """Write a mesh; optional per-vertex float quality and uchar RGB columns."""
    extra = []
    if vertex_quality is not None:
        extra.append(("quality", "float"))
    if vertex_colors is not None:
        extra += [("red", "uchar"), ("green", "uchar"), ("blue", "uchar")]
    with _binary_sink(path) as f:
        _write_header(f, mesh.n_vertices, mesh.n_triangles, False, extra, binary)
        pos = mesh.vertices.astype("<f4")
        if binary:
            rec = [("xyz", "<f4", (3,))]
            if vertex_quality is not None:
                rec.append(("quality", "<f4"))
            if vertex_colors is not None:
                rec.append(("rgb", "u1", (3,)))
            verts = np.zeros(mesh.n_vertices, dtype=np.dtype(rec))
            verts["xyz"] = pos
            if vertex_quality is not None:
                verts["quality"] = np.asarray(vertex_quality, dtype="<f4")
            if vertex_colors is not None:
                verts["rgb"] = np.asarray(vertex_colors, dtype="u1")
            f.write(verts.tobytes())
            faces = np.zeros(mesh.n_triangles,
                             dtype=np.dtype([("n", "u1"), ("idx", "<i4", (3,))]))
            faces["n"] = 3
            faces["idx"] = mesh.triangles
            f.write(faces.tobytes())
        else:
            for i in range(mesh.n_vertices):
                row = "%.8g %.8g %.8g" % tuple(pos[i])
                if vertex_quality is not None:
                    row += " %.6g" % float(vertex_quality[i])
                if vertex_colors is not None:
                    row += " %d %d %d" % tuple(int(c) for c in vertex_colors[i])
                f.write((row + "\n").encode("ascii"))
            for tri in mesh.triangles:
                f.write((f"3 {tri[0]} {tri[1]} {tri[2]}\n").encode("ascii"))


def _parse_header(f):
    if f.readline().strip() != b"ply":
        raise PlyError("not a PLY file")
    fmt = None
    elements = []  # (name, count, [(prop_name, type) or ('list', count_t, item_t, name)])
    while True:
        line = f.readline()
        if not line:
            raise PlyError("unterminated header")
        tok = line.decode("ascii", "replace").strip().split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if tok[1] == "list":
                elements[-1][2].append(("list", tok[2], tok[3], tok[4]))
            else:
                elements[-1][2].append((tok[2], tok[1]))
        elif tok[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian"):
        raise PlyError(f"unsupported PLY format: {fmt}")
    return fmt, elements


def _read_elements(f, fmt, elements):
    out = {}
    if fmt == "ascii":
        text = f.read().decode("ascii", "replace").split("\n")
        cursor = 0
        for name, count, props in elements:
            rows = []
            for _ in range(count):
                while cursor < len(text) and not text[cursor].strip():
                    cursor += 1
                rows.append(text[cursor].split())
                cursor += 1
            out[name] = (props, rows)
        return out
    for name, count, props in elements:
        if any(p[0] == "list" for p in props):
            rows = []
            for _ in range(count):
                if len(props) != 1:
                    raise PlyError("mixed list/scalar face properties unsupported")
                _, count_t, item_t, _ = props[0]
                (ct, csz), (it, isz) = _PLY_TYPES[count_t], _PLY_TYPES[item_t]
                n = int(np.frombuffer(f.read(csz), dtype="<" + ct)[0])
                rows.append(np.frombuffer(f.read(isz * n), dtype="<" + it))
            out[name] = (props, rows)
        else:
            dt = np.dtype([(p[0], "<" + _PLY_TYPES[p[1]][0]) for p in props])
            out[name] = (props, np.frombuffer(f.read(dt.itemsize * count), dtype=dt, count=count))
    return out


def _vertex_columns(props, rows, fmt):
    names = [p[0] for p in props]
    if fmt == "ascii":
        arr = np.asarray(rows, dtype=np.float64)
        return {n: arr[:, i] for i, n in enumerate(names)} if len(arr) else {n: np.zeros(0) for n in names}
    return {n: rows[n].astype(np.float64) for n in names}


def load_cloud(path) -> PointCloud:
    with _binary_source(path) as f:
        fmt, elements = _parse_header(f)
        data = _read_elements(f, fmt, elements)
    if "vertex" not in data:
        raise PlyError("no vertex element")
    props, rows = data["vertex"]
    cols = _vertex_columns(props, rows, fmt)
    pts = np.column_stack([cols["x"], cols["y"], cols["z"]])
    normals = None
    if all(k in cols for k in ("nx", "ny", "nz")):
        normals = np.column_stack([cols["nx"], cols["ny"], cols["nz"]])
        # float32 round-trip denormalizes; renormalize nonzero rows
        ln = np.linalg.norm(normals, axis=1)
        ok = ln > 0
        normals[ok] /= ln[ok, None]
        normals[~ok] = (0.0, 0.0, 1.0)
    return PointCloud(pts, normals)


def _mesh_from_elements(data, fmt):
    if "vertex" not in data or "face" not in data:
        raise PlyError("mesh PLY needs vertex and face elements")
    props, rows = data["vertex"]
    cols = _vertex_columns(props, rows, fmt)
    pts = np.column_stack([cols["x"], cols["y"], cols["z"]])
    _, frows = data["face"]
    if fmt == "ascii":
        tris = []
        for r in frows:
            n = int(r[0])
            if n != 3:
                raise PlyError("only triangle faces supported")
            tris.append([int(r[1]), int(r[2]), int(r[3])])
        tri = np.asarray(tris, dtype=np.int64).reshape(-1, 3)
    else:
        for r in frows:
            if len(r) != 3:
                raise PlyError("only triangle faces supported")
        tri = np.asarray(frows, dtype=np.int64).reshape(-1, 3) if len(frows) \
            else np.zeros((0, 3), dtype=np.int64)
    try:
        return TriMesh(pts, tri), cols
    except GeometryError as e:
        raise PlyError(f"invalid mesh: {e}") from e


def load_mesh(path) -> TriMesh:
    with _binary_source(path) as f:
        fmt, elements = _parse_header(f)
        data = _read_elements(f, fmt, elements)
    return _mesh_from_elements(data, fmt)[0]


def load_mesh_quality(path):
    """Load a quality-map PLY: returns (TriMesh, quality array or None)."""
    with _binary_source(path) as f:
        fmt, elements = _parse_header(f)
        data = _read_elements(f, fmt, elements)
    mesh, cols = _mesh_from_elements(data, fmt)
    return mesh, cols.get("quality")
