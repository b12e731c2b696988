"""Weight-adjusted discontinuous Galerkin tools for the 2D acoustic wave
equation on curvilinear meshes."""

__version__ = "0.1.0"
