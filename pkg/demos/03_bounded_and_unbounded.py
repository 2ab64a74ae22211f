"""Potentials of the level measures: bounded for vanishing moments, growing otherwise.

Run: python demos/03_bounded_and_unbounded.py
"""

from siolab.lab_cli import cmd_bounded, cmd_unbounded, config_from_dict

rep = cmd_bounded(config_from_dict({"kernel": {"label": "example"}}))
for m, row in rep.summary["per_depth"].items():
    print(f"example kernel, depth {m}: sup |potential| = {row['sup_abs']:.5f} (+- {row['error_at_sup']:.1e})")

rep = cmd_unbounded(config_from_dict({"kernel": {"label": "monomial:1,2"}}))
print(f"monomial kernel: c0 = {rep.summary['c0']:.4f}, branch {rep.summary['branch']}")
for row in rep.tables["increments"][1:]:
    print(f"  level {row[0] + 1} increment {row[3]:.4f} (+- {row[4]:.1e}), cumulative {row[5]:.4f}")
