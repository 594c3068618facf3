"""Binary STL writer."""

from __future__ import annotations

import numpy as np

from ..mesher import TriMesh

HEADER = b"mechforge".ljust(80, b"\0")

_RECORD = np.dtype([("normal", "<f4", (3,)), ("verts", "<f4", (3, 3)), ("attr", "<u2")])


def write_stl(mesh: TriMesh) -> bytes:
    """84 + 50·n bytes: header, little-endian count, then normal + three vertices per facet."""
    tris = np.asarray(mesh.triangles, dtype=np.int64).reshape(-1, 3)
    records = np.zeros(len(tris), dtype=_RECORD)
    if len(tris):
        records["normal"] = mesh.normals
        records["verts"] = np.asarray(mesh.vertices, dtype=np.float64)[tris]
    return HEADER + np.uint32(len(tris)).astype("<u4").tobytes() + records.tobytes()
