"""Monte Carlo engine for a mean-field asset market with endogenous prices.

Simulates dividend-share models, computes the representative agents'
growth-optimal portfolio weights (closed form or nested Monte Carlo), evolves
small-agent wealth against the resulting prices, and runs statistical checks
of the no-outperformance and survival/extinction properties.
"""

__version__ = "0.1.0"

from .analysis import (
    ItoConsistencyReport,
    SllnReport,
    SupermartingaleReport,
    SurvivalReport,
    SurvivalThresholds,
    classify_survival,
    ito_consistency,
    slln_diagnostic,
    test_supermartingale,
)
from .config import ExperimentConfig, apply_env_overrides
from .dividends import (
    AssumptionReport,
    ConstantSigma,
    DividendPaths,
    LinearDriftRSpec,
    MartingaleRSpec,
    WrightFisherPairSigma,
    WrightFisherSpec,
    check_assumptions,
    simulate,
    simulate_linear_drift_r,
    simulate_martingale_r,
    simulate_wright_fisher,
)
from .dynamics import (
    MarketParams,
    RatioDiagnostics,
    compute_G,
    compute_L,
    compute_Z,
    evolve_small_agent,
    g_closed_form_two_asset,
    prices,
    representative_wealth,
    simulate_market,
    stochastic_exponential,
)
from .errors import (
    AdmissibilityError,
    AssumptionError,
    ConfigError,
    InvalidStrategyError,
    InvariantError,
    MfmError,
    ShapeError,
    StatisticalPowerError,
    UnsupportedModelError,
)
from .paths import (
    FLOOR_EPS,
    BrownianPath,
    PathSeries,
    RngSpec,
    TimeGrid,
    kahan_cumsum,
    make_grid,
    realized_covariation,
    sample_brownian,
    stream_generator,
)
from .strategies import (
    ConstantStrategy,
    ConstantWeight,
    ExpDecayWeight,
    MuEstimate,
    NestedMCStrategy,
    OptimalClosedForm,
    PerturbedStrategy,
    Strategy,
    StrategyPaths,
    estimate_mu_nested_mc,
    evaluate_along,
    optimal_mu_linear_drift,
    optimal_mu_martingale,
    validate_simplex,
)
