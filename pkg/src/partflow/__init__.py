"""Path-based multi-commodity flow allocation: exact LPs, first-order
solvers and source-partitioned multi-agent policies."""

__version__ = "0.1.0"

from .topology import Topology, load_topology, save_topology, case_study_topology  # noqa: E402
from .paths import PathCatalog, build_catalog, yen_ksp  # noqa: E402
from .demand import DemandSeries, generate_series, predict  # noqa: E402
from .objectives import Allocation, evaluate, expected_objective  # noqa: E402

__all__ = [
    "Allocation", "DemandSeries", "PathCatalog", "Topology", "build_catalog",
    "case_study_topology", "evaluate", "expected_objective", "generate_series",
    "load_topology", "predict", "save_topology", "yen_ksp",
]
