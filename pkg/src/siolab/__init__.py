"""Even singular-integral potentials on a Cantor-type set of co-dimension two.

Modules
-------
sphere_kernel
    Even kernels on the sphere, the induced homogeneous kernel, sphere rules.
cantor_geometry
    Construction schedule, cube packing and the lazily expanded hierarchy.
fractal_measure
    Level measures, mass queries, sampling and density scans.
potential_engine
    Ball integrals, direct and treecode potentials, truncated and annular integrals.
lab_cli
    Batch experiments with JSON/CSV reports (``lab`` entry point).
"""

__version__ = "0.1.0"
