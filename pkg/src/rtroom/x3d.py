"""X3D 3.3 subset export/import.

Only Scene/Transform/Shape/IndexedFaceSet/Coordinate nodes are emitted;
Transform carries each posed component's rotation (axis-angle) and
translation, coordIndex triples end with -1. Import bakes the transform
stack into world-space vertices, so export -> import is the identity on
geometry up to the chosen numeric precision.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from io import StringIO

import numpy as np

from .geometry import RigidTransform, TriMesh

DEFAULT_PRECISION = 6   # significant digits; the untextured-size figures assume this


def _fmt(values, precision):
    return " ".join(f"{v:.{precision}g}" for v in np.asarray(values).ravel())


def _axis_angle(rot: np.ndarray):
    """Rotation matrix -> (axis, angle) via quaternion extraction."""
    m = rot
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        w = 0.25 * s
        x = (m[2, 1] - m[1, 2]) / s
        y = (m[0, 2] - m[2, 0]) / s
        z = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        w = (m[2, 1] - m[1, 2]) / s
        x = 0.25 * s
        y = (m[0, 1] + m[1, 0]) / s
        z = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] >= m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        w = (m[0, 2] - m[2, 0]) / s
        x = (m[0, 1] + m[1, 0]) / s
        y = 0.25 * s
        z = (m[1, 2] + m[2, 1]) / s
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        w = (m[1, 0] - m[0, 1]) / s
        x = (m[0, 2] + m[2, 0]) / s
        y = (m[1, 2] + m[2, 1]) / s
        z = 0.25 * s
    norm = np.sqrt(x * x + y * y + z * z)
    if norm < 1e-12:
        return (0.0, 0.0, 1.0), 0.0
    angle = 2.0 * np.arctan2(norm, w)
    return (x / norm, y / norm, z / norm), float(angle)


def _shape_xml(out, mesh: TriMesh, precision: int, indent: str):
    # one face / one point per line: diffable output, and the size figures
    # for untextured patient exports assume this layout
    pad = indent + "    "
    idx = ("\n" + pad).join(f"{t[0]} {t[1]} {t[2]} -1" for t in mesh.triangles)
    pts = (",\n" + pad).join(
        f"{v[0]:.{precision}g} {v[1]:.{precision}g} {v[2]:.{precision}g}"
        for v in mesh.vertices)
    out.write(f'{indent}<Shape>\n')
    out.write(f'{indent}  <IndexedFaceSet coordIndex="{idx}">\n')
    out.write(f'{indent}    <Coordinate point="{pts}"/>\n')
    out.write(f'{indent}  </IndexedFaceSet>\n')
    out.write(f'{indent}</Shape>\n')


def export_x3d(obj, precision: int = DEFAULT_PRECISION) -> str:
    """Serialize a TriMesh, a PosedScene, or [(name, mesh, transform)]."""
    items = _as_items(obj)
    out = StringIO()
    out.write('<?xml version="1.0" encoding="UTF-8"?>\n')
    out.write('<X3D profile="Interchange" version="3.3">\n')
    out.write('  <Scene>\n')
    for name, mesh, transform in items:
        if transform is None:
            transform = RigidTransform.identity()
        axis, angle = _axis_angle(transform.rotation)
        attrs = f'DEF="{name}" translation="{_fmt(transform.translation, 9)}" ' \
                f'rotation="{_fmt(axis, 9)} {angle:.9g}"'
        out.write(f'    <Transform {attrs}>\n')
        _shape_xml(out, mesh, precision, '      ')
        out.write('    </Transform>\n')
    out.write('  </Scene>\n')
    out.write('</X3D>\n')
    return out.getvalue()


def _as_items(obj):
    if isinstance(obj, TriMesh):
        return [("mesh", obj, None)]
    if hasattr(obj, "components"):   # PosedScene
        return [(c.name, c.mesh, c.world) for c in obj.components]
    return [(name, mesh, tf) for name, mesh, tf in obj]


def import_x3d(text: str):
    """Parse the exported subset back into [(name, world-space TriMesh)]."""
    root = ET.fromstring(text)
    scene = root.find("Scene")
    if scene is None:
        raise ValueError("no Scene node")
    out = []
    _walk(scene, np.eye(4), out, "mesh")
    return out


def _walk(node, matrix, out, name):
    tag = node.tag.split("}")[-1]
    if tag == "Transform":
        name = node.get("DEF", name)
        m = np.eye(4)
        t = node.get("translation")
        if t:
            m[:3, 3] = [float(v) for v in t.split()]
        r = node.get("rotation")
        if r:
            ax, ay, az, angle = (float(v) for v in r.split())
            m[:3, :3] = _rotation_from_axis_angle((ax, ay, az), angle)
        s = node.get("scale")
        if s:
            m[:3, :3] = m[:3, :3] @ np.diag([float(v) for v in s.split()])
        matrix = matrix @ m
    elif tag == "Shape":
        ifs = node.find("IndexedFaceSet")
        if ifs is not None:
            coord = ifs.find("Coordinate")
            pts = np.array([float(v) for v in coord.get("point").replace(",", " ").split()])
            pts = pts.reshape(-1, 3)
            idx = [int(v) for v in ifs.get("coordIndex").split()]
            tris = []
            face = []
            for v in idx:
                if v == -1:
                    if len(face) != 3:
                        raise ValueError("only triangle faces are supported")
                    tris.append(face)
                    face = []
                else:
                    face.append(v)
            if face:
                if len(face) != 3:
                    raise ValueError("only triangle faces are supported")
                tris.append(face)
            world = pts @ matrix[:3, :3].T + matrix[:3, 3]
            out.append((name, TriMesh(world, np.asarray(tris, dtype=np.int64))))
    for child in node:
        _walk(child, matrix, out, name)


def _rotation_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        return np.eye(3)
    x, y, z = axis / n
    c, s = np.cos(angle), np.sin(angle)
    t = 1 - c
    return np.array([
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ])
