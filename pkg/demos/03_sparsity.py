"""How the two single-modality solvers react to a thinning database.

Keeping every N-th database image lengthens the baselines between the
query and its retrieved images. Triangulated structure gets coarser,
which hurts P3P directly; E5+1 only needs the database poses.
"""

from adaptloc.bench import Cell, Method, run_sweep
from adaptloc.scene import CorruptionModel, SceneSpec, SparsityConfig, generate_scene

spec = SceneSpec(seed=1)
base = generate_scene(spec)
accurate = CorruptionModel(pixel_sigma=1.0, outlier_ratio=0.2)
cells = [Cell(f"N{n}", accurate, SparsityConfig(n)) for n in (1, 5, 10, 20)]
report = run_sweep(spec, cells, [Method("P3P"), Method("E5p1")], thresholds=((0.05, 2.0), (0.5, 5.0)),
                   queries=range(0, 200, 10), base=base)

print(f"{'db':<6}{'method':<8}{'5cm,2deg':>10}{'50cm,5deg':>11}")
for row in report.rows:
    print(f"{row.cell_id:<6}{row.method:<8}" + "".join(f"{100 * r:>10.0f}%" for r in row.recalls))
