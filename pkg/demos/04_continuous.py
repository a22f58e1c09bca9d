"""Growing the database with localized queries.

With a sparse database every query is far from its nearest reference.
In continuous mode each successfully localized query joins the
database under its estimated pose, so later queries can retrieve a
closer, already registered neighbour.
"""

from adaptloc.bench import run_continuous
from adaptloc.estimators import EstimatorConfig
from adaptloc.scene import CorruptionModel, SceneSpec, SparsityConfig

spec = SceneSpec(seed=2)
corruption = CorruptionModel(pixel_sigma=1.0, outlier_ratio=0.2)
queries = range(0, 200, 4)
thresholds = ((0.25, 2.0), (0.5, 5.0))

for mode in ("Static", "Continuous"):
    report, state = run_continuous(spec, EstimatorConfig(), mode, 2, corruption, SparsityConfig(20),
                                   thresholds=thresholds, queries=queries)
    row = report.rows[0]
    recalls = ", ".join(f"{100 * r:.0f}% at {t:g} m / {d:g} deg" for r, (t, d) in zip(row.recalls, thresholds))
    print(f"{mode:<11} {recalls}; database size at the end: {len(state.views)}")
