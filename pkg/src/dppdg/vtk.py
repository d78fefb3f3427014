"""Legacy ASCII VTK output for triangle meshes."""
from __future__ import annotations

import numpy as np

VTK_TRIANGLE = 5


def _write_array(fh, name, values, n):
    values = np.asarray(values, dtype=float)
    if values.shape[0] != n:
        raise ValueError(f"{name}: expected {n} entries, got {values.shape[0]}")
    if values.ndim == 1:
        fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
        np.savetxt(fh, values, fmt="%.17g")
    elif values.ndim == 2 and values.shape[1] in (2, 3):
        if values.shape[1] == 2:
            values = np.column_stack([values, np.zeros(n)])
        fh.write(f"VECTORS {name} double\n")
        np.savetxt(fh, values, fmt="%.17g")
    else:
        raise ValueError(f"{name}: unsupported shape {values.shape}")


def write_vtk(path, mesh, point_data=None, cell_data=None, title="dppdg"):
    """Write an UNSTRUCTURED_GRID file; 1-D arrays become SCALARS, (n, 2|3) VECTORS."""
    nv, ne = len(mesh.vertices), len(mesh.elements)
    with open(path, "w") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {nv} double\n")
        np.savetxt(fh, np.column_stack([mesh.vertices, np.zeros(nv)]), fmt="%.17g")
        fh.write(f"CELLS {ne} {4 * ne}\n")
        np.savetxt(fh, np.column_stack([np.full(ne, 3), mesh.elements]), fmt="%d")
        fh.write(f"CELL_TYPES {ne}\n")
        np.savetxt(fh, np.full(ne, VTK_TRIANGLE), fmt="%d")
        if point_data:
            fh.write(f"POINT_DATA {nv}\n")
            for name, values in point_data.items():
                _write_array(fh, name, values, nv)
        if cell_data:
            fh.write(f"CELL_DATA {ne}\n")
            for name, values in cell_data.items():
                _write_array(fh, name, values, ne)
