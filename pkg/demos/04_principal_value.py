"""Annular integrals around sampled points do not shrink with the scale.

If the truncated integrals converged as the truncation went to zero, the
integral over each annulus {r < |z - y| <= 2r} would tend to zero.  Here
their typical size stays put across levels for both kernels.

Run: python demos/04_principal_value.py
"""

from siolab.lab_cli import cmd_pv, config_from_dict

for label in ("monomial:1,2", "example"):
    rep = cmd_pv(config_from_dict({"kernel": {"label": label}}))
    med = rep.summary["medians"]
    print(f"{label:14s} good position {rep.summary['z_rel']}, medians by level {med}, "
          f"ratio {rep.summary['median_ratio']:.3f}")
