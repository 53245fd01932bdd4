"""rtroom: radiotherapy treatment-room simulation.

Patient surface scanning (synthetic depth cameras), B-rep reconstruction
and decimation, treatment machine kinematics, collision/clearance checks,
and the accuracy-assessment harness.
"""

__version__ = "0.1.0"

from .geometry import (Aabb, GeometryError, PointCloud, RigidTransform,
                       TriMesh, mesh_bounds, point_triangle_distance,
                       transform_points)

__all__ = [
    "Aabb", "GeometryError", "PointCloud", "RigidTransform", "TriMesh",
    "mesh_bounds", "point_triangle_distance", "transform_points",
]
