"""File formats: CDLB voxel coefficients, triplet matrices, VTK, CSV."""

from __future__ import annotations

import csv
import struct

import numpy as np

MAGIC = b"CDLB"


def write_voxels(path, array):
    """Write a (nx,ny,nz) float array as a CDLB voxel file.

    Layout: 4-byte magic, three little-endian uint32 extents, then the data
    as little-endian float64 in x-fastest order.
    """
    array = np.asarray(array, dtype=float)
    if array.ndim != 3:
        raise ValueError("voxel data must be a 3-d array")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", *array.shape))
        fh.write(array.ravel(order="F").astype("<f8").tobytes())


def read_voxels(path):
    """Read a CDLB voxel file back into a (nx,ny,nz) array."""
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16 or head[:4] != MAGIC:
            raise ValueError(f"{path}: not a CDLB voxel file")
        nx, ny, nz = struct.unpack("<III", head[4:16])
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != nx * ny * nz:
        raise ValueError(f"{path}: payload has {data.size} values, "
                         f"expected {nx * ny * nz}")
    return data.reshape((nx, ny, nz), order="F").copy()


def write_triplets(path, matrix, symmetric=True):
    """Dump a sparse matrix as text triplets (0-based row col value)."""
    coo = matrix.tocoo()
    tag = "symmetric" if symmetric else "general"
    with open(path, "w") as fh:
        fh.write(f"%%MatrixMarket-compatible {tag}\n")
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v:.17g}\n")


def write_vtk(path, domain, fields):
    """Legacy-ASCII VTK structured-points snapshot of nodal fields.

    ``fields`` maps names to ScalarField/VectorField instances on ``domain``.
    """
    ns = domain.node_shape
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\ncurllab field export\nASCII\n")
        fh.write("DATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {ns[0]} {ns[1]} {ns[2]}\n")
        fh.write(f"ORIGIN {domain.origin[0]:g} {domain.origin[1]:g} "
                 f"{domain.origin[2]:g}\n")
        h = domain.spacing
        fh.write(f"SPACING {h:g} {h:g} {h:g}\n")
        fh.write(f"POINT_DATA {domain.num_nodes}\n")
        for name, field in fields.items():
            vals = field.values
            if vals.ndim == 3:
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                for v in vals.ravel(order="F"):
                    fh.write(f"{v:.9g}\n")
            else:
                fh.write(f"VECTORS {name} double\n")
                flat = vals.reshape(-1, 3)[_forder_ids(ns)]
                for v in flat:
                    fh.write(f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")


def _forder_ids(node_shape):
    ids = np.arange(int(np.prod(node_shape))).reshape(node_shape)
    return ids.ravel(order="F")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
