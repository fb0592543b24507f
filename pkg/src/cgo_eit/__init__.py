"""3D CGO-based EIT reconstruction on box tanks."""

__version__ = "0.1.0"
