"""Graph-coupled Poisson outage model with conformal prediction intervals."""

from .conformal import (
    METHODS,
    IntervalSeries,
    ResidualHistory,
    build_qrf_training_set,
    graph_cp_step,
    poisson_interval,
    read_interval_series,
    run_conformal,
    vanilla_cp,
)
from .evaluate import (
    MethodReport,
    NodeMetrics,
    WinnerTable,
    coverage_metrics,
    violin_export,
    winner_table,
)
from .model import (
    INTENSITY_FLOOR,
    FitConfig,
    FitResult,
    IntensityField,
    ModelParams,
    ParamPacker,
    ResponseWeights,
    cumulative_weather,
    excitation,
    fit,
    init_params,
    intensity,
    intensity_field,
    likelihood_gradient,
    load_params,
    log_likelihood,
    predict,
    save_params,
    weather_response,
)
from .panel import (
    DataSplit,
    PanelDataset,
    ServiceGraph,
    load_graph,
    load_panel,
    split,
    write_graph,
    write_panel,
)
from .pipeline import PipelineResult, run_pipeline
from .qrf import FittedForest, ForestConfig, fit_forest, pinball_loss
from .synth import (
    GraphSpec,
    NoiseSpec,
    ScenarioConfig,
    StormPulse,
    WeatherSpec,
    branching_matrix,
    excitation_mass,
    iid_mean_function,
    simulate,
    simulate_iid,
    spectral_radius,
)

__version__ = "0.1.0"
