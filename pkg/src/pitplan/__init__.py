"""pitplan: decision support engine for open-pit mine scheduling under
geological uncertainty."""

__version__ = "0.1.0"

from .blockmodel import (  # noqa: F401
    Block,
    Economics,
    GeoFeatures,
    Instance,
    OperatingMode,
    UNMINED,
    generate_synthetic,
    load_instance,
    save_instance,
)
from .evaluate import Schedule, check_feasible, objective, stage2_value  # noqa: F401
from .hybrid import HybridConfig, epsilon_schedule, greedy_initialize, hybrid_optimize  # noqa: F401
from .colgen import DwConfig, run_dw  # noqa: F401
from .saa import branch_and_bound_exact, compare_runs, risk_metrics, run_saa  # noqa: F401
from .scenarios import ScenarioSet, filter_valid, sample_lognormal  # noqa: F401
from .uncertainty import empirical_variogram, morans_i, uncertainty_factors  # noqa: F401
