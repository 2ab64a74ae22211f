"""The nested ball construction and the measure it carries.

Run: python demos/02_cantor_measure.py
"""

from siolab.cantor_geometry import default_schedule, validate_schedule, verify_geometry
from siolab.fractal_measure import LevelMeasure, density_dip, exact_total_mass, growth_scan, sample_leaves

s = default_schedule()
print("radii         ", s.radii)
print("children/node ", s.child_counts[1:])
print("dilations     ", [round(v, 4) for v in s.deltas[1:-1]])
print("schedule ok   ", validate_schedule(s).ok)

rep = verify_geometry(s, n_samples=2000, seed=0)
for lv in rep.levels:
    print(f"level {lv.level}: groups={lv.groups_checked:5d} margin={lv.min_margin:.3e} "
          f"gap={lv.min_gap:.3e} quarter side={lv.quarter_side:.3e} ok={lv.ok}")

for m in (1, 2, 3):
    mu = LevelMeasure(s, m)
    g = growth_scan(mu, 3000, m)
    print(f"depth {m}: total mass {exact_total_mass(mu)}, growth constant {g.constant:.4f}")

# Between node scales the mass ratio dips well below its node-scale value.
mu = LevelMeasure(s, 3)
paths, pts = sample_leaves(mu, 1, 1)
for rec in density_dip(mu, tuple(paths[0]), pts[0]):
    print(f"level {rec.level}: node ratio {rec.node_ratio:.3f}, dip {rec.dip_ratio:.4f} at r = {rec.dip_scale:.2e}")
