"""Trilinear 8-node hexahedron on the unit cube."""

from __future__ import annotations

import numpy as np

# Local node coordinates, counter-clockwise on z=0 then z=1.
HEX8_NODES = np.array(
    [
        [0, 0, 0],
        [1, 0, 0],
        [1, 1, 0],
        [0, 1, 0],
        [0, 0, 1],
        [1, 0, 1],
        [1, 1, 1],
        [0, 1, 1],
    ],
    dtype=np.int64,
)


def isotropic_constitutive(youngs: float, poisson: float) -> np.ndarray:
    """6x6 Voigt stiffness, engineering shear strains (xx, yy, zz, xy, yz, zx)."""
    lam = youngs * poisson / ((1 + poisson) * (1 - 2 * poisson))
    mu = youngs / (2 * (1 + poisson))
    D = np.zeros((6, 6))
    D[:3, :3] = lam
    D[np.arange(3), np.arange(3)] += 2 * mu
    D[np.arange(3, 6), np.arange(3, 6)] = mu
    return D


def shape_gradients(xi: float, eta: float, zeta: float) -> np.ndarray:
    """dN/dx for the unit cube at a reference point in [-1, 1]^3, shape (8, 3)."""
    s = 2.0 * HEX8_NODES - 1.0
    dN = np.empty((8, 3))
    dN[:, 0] = 0.125 * s[:, 0] * (1 + s[:, 1] * eta) * (1 + s[:, 2] * zeta)
    dN[:, 1] = 0.125 * s[:, 1] * (1 + s[:, 0] * xi) * (1 + s[:, 2] * zeta)
    dN[:, 2] = 0.125 * s[:, 2] * (1 + s[:, 0] * xi) * (1 + s[:, 1] * eta)
    # x = (xi + 1) / 2 on the unit cube, so d/dx = 2 d/dxi
    return 2.0 * dN


def strain_displacement(dN: np.ndarray) -> np.ndarray:
    """6x24 B matrix from shape-function gradients."""
    B = np.zeros((6, 24))
    for a in range(8):
        bx, by, bz = dN[a]
        c = 3 * a
        B[0, c] = bx
        B[1, c + 1] = by
        B[2, c + 2] = bz
        B[3, c], B[3, c + 1] = by, bx
        B[4, c + 1], B[4, c + 2] = bz, by
        B[5, c], B[5, c + 2] = bz, bx
    return B


def element_stiffness(material=None, poisson: float | None = None) -> np.ndarray:
    """Unit-Young's-modulus stiffness of the unit-cube hexahedron.

    Integrated with 2x2x2 Gauss quadrature. DOFs are ordered node-major,
    (ux, uy, uz) per node, nodes as in ``HEX8_NODES``. Accepts either an
    ``ElasticParams`` or an explicit Poisson ratio.
    """
    if poisson is None:
        poisson = 0.3 if material is None else material.poisson
    D = isotropic_constitutive(1.0, poisson)
    g = 1.0 / np.sqrt(3.0)
    det_j = 0.125
    K = np.zeros((24, 24))
    for xi in (-g, g):
        for eta in (-g, g):
            for zeta in (-g, g):
                B = strain_displacement(shape_gradients(xi, eta, zeta))
                K += B.T @ D @ B * det_j
    return 0.5 * (K + K.T)
