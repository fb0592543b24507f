"""Regular voxel grids of conductivity values and their file formats."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import ParseError


@dataclass(frozen=True)
class VoxelGrid:
    """Values on an ``nx x ny x nz`` node grid spanning ``origin`` to
    ``origin + extent`` (metres), first index along x."""

    values: np.ndarray
    origin: np.ndarray
    extent: np.ndarray

    def __post_init__(self):
        for name in ("values", "origin", "extent"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def for_box(cls, domain, values) -> "VoxelGrid":
        return cls(values, np.zeros(3), domain.dims)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def spacing(self) -> np.ndarray:
        return self.extent / (np.array(self.shape) - 1)

    def axes(self) -> list[np.ndarray]:
        return [self.origin[a] + np.linspace(0.0, self.extent[a], self.shape[a]) for a in range(3)]

    def points(self) -> np.ndarray:
        X, Y, Z = np.meshgrid(*self.axes(), indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def resample(self, n: int | tuple) -> "VoxelGrid":
        """Trilinear interpolation onto a finer (or coarser) grid with the
        same extents."""
        shape = (n, n, n) if np.isscalar(n) else tuple(n)
        interp = RegularGridInterpolator(self.axes(), self.values)
        new_axes = [self.origin[a] + np.linspace(0.0, self.extent[a], shape[a]) for a in range(3)]
        X, Y, Z = np.meshgrid(*new_axes, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
        return VoxelGrid(interp(pts).reshape(shape), self.origin, self.extent)

    def save_vtk(self, path, name: str = "conductivity") -> None:
        """Legacy ASCII VTK structured points (x varies fastest)."""
        nx, ny, nz = self.shape
        with open(path, "w") as fh:
            fh.write("# vtk DataFile Version 3.0\ncgo_eit voxel grid\nASCII\n")
            fh.write("DATASET STRUCTURED_POINTS\n")
            fh.write(f"DIMENSIONS {nx} {ny} {nz}\n")
            fh.write("ORIGIN {:.17g} {:.17g} {:.17g}\n".format(*self.origin))
            fh.write("SPACING {:.17g} {:.17g} {:.17g}\n".format(*self.spacing))
            fh.write(f"POINT_DATA {nx * ny * nz}\n")
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            np.savetxt(fh, self.values.ravel(order="F"), fmt="%.17g")

    @classmethod
    def load_vtk(cls, path) -> "VoxelGrid":
        with open(path) as fh:
            lines = fh.read().splitlines()
        try:
            hdr = {ln.split()[0]: ln.split()[1:] for ln in lines[3:10] if ln.strip()}
            dims = tuple(int(v) for v in hdr["DIMENSIONS"])
            origin = np.array([float(v) for v in hdr["ORIGIN"]])
            spacing = np.array([float(v) for v in hdr["SPACING"]])
            start = next(i for i, ln in enumerate(lines) if ln.startswith("LOOKUP_TABLE")) + 1
            data = np.array([float(v) for v in lines[start:start + int(np.prod(dims))]])
        except (KeyError, ValueError, StopIteration) as exc:
            raise ParseError(f"not a structured-points VTK file: {path}") from exc
        values = data.reshape(dims, order="F")
        return cls(values, origin, spacing * (np.array(dims) - 1))

    def save_csv(self, path) -> None:
        pts = self.points()
        np.savetxt(path, np.column_stack([pts, self.values.ravel()]), delimiter=",",
                   fmt="%.17g", header="x,y,z,value", comments="")

    @classmethod
    def load_csv(cls, path) -> "VoxelGrid":
        """Inverse of :meth:`save_csv`; the grid shape is read off the
        distinct coordinates."""
        try:
            a = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        except (OSError, ValueError) as exc:
            raise ParseError(f"cannot parse voxel CSV {path}: {exc}") from exc
        if a.shape[1] != 4:
            raise ParseError(f"voxel CSV {path} needs four columns x,y,z,value")
        axes = [np.unique(a[:, k]) for k in range(3)]
        shape = tuple(len(ax) for ax in axes)
        if int(np.prod(shape)) != len(a):
            raise ParseError(f"voxel CSV {path} does not fill a regular grid")
        idx = [np.searchsorted(axes[k], a[:, k]) for k in range(3)]
        values = np.empty(shape)
        values[idx[0], idx[1], idx[2]] = a[:, 3]
        origin = np.array([ax[0] for ax in axes])
        extent = np.array([ax[-1] - ax[0] for ax in axes])
        return cls(values, origin, extent)
