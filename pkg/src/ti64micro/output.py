"""Snapshot and probe writers: legacy-ASCII structured-grid files and CSV.

Reals are written with repr (shortest round-trip decimal) so golden files
are stable across runs.
"""

import numpy as np

__all__ = ["write_vtk_snapshot", "write_probe_csv", "write_csv"]


def _point_data(f, name, values):
    f.write(f"SCALARS {name} double 1\n")
    f.write("LOOKUP_TABLE default\n")
    for v in values:
        f.write(f"{float(v)!r}\n")


def write_vtk_snapshot(path, field, fields, label="snapshot"):
    """Legacy-ASCII VTK STRUCTURED_POINTS volume of the coupled state.

    Point data: temperature, consolidated fraction, and the three phase
    fractions, over the full voxel grid (inactive voxels carry their
    placeholder values; the `state` array is included to mask them).
    """
    nz, ny, nx = field.shape
    h = field.h
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(f"{label}\n")
        f.write("ASCII\n")
        f.write("DATASET STRUCTURED_POINTS\n")
        f.write(f"DIMENSIONS {nx} {ny} {nz}\n")
        f.write(f"ORIGIN 0.0 0.0 0.0\n")
        f.write(f"SPACING {h!r} {h!r} {h!r}\n")
        f.write(f"POINT_DATA {nx * ny * nz}\n")
        _point_data(f, "temperature", field.temperature_old.ravel())
        _point_data(f, "consolidated_fraction", field.r_c.ravel())
        _point_data(f, "x_alpha_s", fields.x_alpha_s)
        _point_data(f, "x_alpha_m", fields.x_alpha_m)
        _point_data(f, "x_beta", fields.x_beta)
        _point_data(f, "state", field.state.ravel())


def write_csv(path, header, rows):
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(repr(float(v)) if isinstance(v, (float, np.floating))
                             else str(v) for v in row) + "\n")


def write_probe_csv(path, rows):
    """Probe history: t, T, x_alpha_s, x_alpha_m, x_beta."""
    write_csv(path, ["t", "T", "x_alpha_s", "x_alpha_m", "x_beta"], rows)
