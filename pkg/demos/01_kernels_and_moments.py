"""Kernels, their second moments, and what the moments do to ball integrals.

Run: python demos/01_kernels_and_moments.py
"""

import math

import numpy as np

from siolab.potential_engine import ball_lebesgue_integral, reflectionless_closed_form
from siolab.sphere_kernel import kernel_from_label, moment_battery, moment_matrix, sphere_quadrature

for label in ("example", "monomial:1,2", "diff:1,2"):
    k = kernel_from_label(label, 3)
    q = sphere_quadrature(3, 1e-10, moment_battery(k))
    M = moment_matrix(k, q)
    print(f"{label:14s} nodes={len(q):6d}  max|M_ij| = {M.max_abs():.3e}")

# For an even mean-zero kernel the integral over a ball containing x is the
# quadratic form of the moment matrix, whatever the radius.
k = kernel_from_label("monomial:1,2", 3)
M = moment_matrix(k, sphere_quadrature(3, 1e-10, moment_battery(k)))
x = np.array([0.5, 0.5, 0.0])
for R in (1.0, 2.0, 5.0):
    print(f"R = {R}: integral = {ball_lebesgue_integral(k, np.zeros(3), R, x):.10f}")
print(f"x^T M x        = {reflectionless_closed_form(M, x):.10f}   (2 pi / 15 = {2 * math.pi / 15:.10f})")

# The example kernel has vanishing moments, so its ball integrals vanish.
k = kernel_from_label("example", 3)
print("example kernel, same point:", ball_lebesgue_integral(k, np.zeros(3), 1.0, x))
