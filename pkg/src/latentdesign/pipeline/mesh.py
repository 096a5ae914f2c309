"""Surface mesh of a thresholded voxel design as a Wavefront OBJ."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class EmptyDesign(ValueError):
    pass


# For a face normal along +axis, the in-plane axes (u, v) satisfy u x v = +axis,
# so corners listed (0,0) (1,0) (1,1) (0,1) in (u, v) wind counter-clockwise
# seen from outside.
_PLANE = {0: (1, 2), 1: (2, 0), 2: (0, 1)}
_QUAD = np.array([[0, 0], [1, 0], [1, 1], [0, 1]])


def exposed_faces(occupied: np.ndarray):
    """Yield (axis, sign, voxel ijk array) for voxel faces bordering void or the grid boundary."""
    padded = np.pad(occupied, 1, constant_values=False)
    core = (slice(1, -1),) * 3
    for axis in range(3):
        for sign in (1, -1):
            neighbour = np.roll(padded, -sign, axis=axis)[core]
            yield axis, sign, np.argwhere(occupied & ~neighbour)


def surface_quads(density, threshold: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """(vertices (V, 3) integer grid corners, quads (F, 4) zero-based vertex ids)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    occ = np.asarray(density) >= threshold
    if not occ.any():
        raise EmptyDesign(f"no voxel reaches threshold {threshold}")
    corners = []
    for axis, sign, ijk in exposed_faces(occ):
        u, v = _PLANE[axis]
        quad = _QUAD if sign > 0 else _QUAD[::-1]
        c = np.repeat(ijk[:, None, :], 4, axis=1)
        c[:, :, axis] += 1 if sign > 0 else 0
        c[:, :, u] += quad[:, 0]
        c[:, :, v] += quad[:, 1]
        corners.append(c)
    corners = np.concatenate(corners)
    verts, inverse = np.unique(corners.reshape(-1, 3), axis=0, return_inverse=True)
    return verts, inverse.reshape(-1, 4)


def export_mesh(density, threshold: float, path) -> tuple[int, int]:
    """Write the exposed-face OBJ to ``path``; returns (vertex count, quad count)."""
    verts, quads = surface_quads(density, threshold)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"v {x} {y} {z}" for x, y, z in verts.tolist()]
    lines += [f"f {a} {b} {c} {d}" for a, b, c, d in (quads + 1).tolist()]
    path.write_text("\n".join(lines) + "\n")
    return len(verts), len(quads)
