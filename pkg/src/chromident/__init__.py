"""Chromatography isotherm identification toolkit.

Simulates a chromatography column as a 1-D nonlinear conservation law
(first-order upwind marching in space) and recovers the parameters of an
adsorption isotherm by least-squares fitting of outlet chromatograms with
a restart CMA-ES optimizer.
"""

from .isotherms import (
    R_GAS,
    BiLangmuir,
    Langmuir,
    LatticeSingle,
    ModelTemplate,
    ModifiedLangmuir,
    evaluate,
    jacobian,
    pack,
    param_count,
    param_names,
    unpack,
)
from .transport import (
    Chromatogram,
    ColumnConfig,
    DegenerateModelError,
    GridConfig,
    InjectionProfile,
    InstabilityDetected,
    calibrate_grid,
    flux,
    simulate,
    spectral_radius_flux_jacobian,
)
from .cmaes import (
    CmaParams,
    CmaState,
    InitConfig,
    RestartConfig,
    RunReport,
    default_params,
    optimize_with_restarts,
)
from .identification import (
    BenchmarkReport,
    BenchmarkScenario,
    Experiment,
    FitnessOutcome,
    IdentificationProblem,
    IdentifyReport,
    IdentifySettings,
    InitializationFailure,
    ParamSpec,
    benchmark,
    discrete_cost,
    fitness,
    identify,
    initialize_run,
    scale_to_unit,
    synthetic_problem,
    unscale,
)

__version__ = "0.1.0"
