"""Bayesian inference and forecasting for stochastic-volatility panels
with Poisson jumps, where jump intensities are either stock-specific or
driven by a shared latent factor process."""

from .estimators import ForecastResult, SvjEstimator
from .forecast import (AisEnsemble, ForecastError, ais_extend, ais_forecast,
                       ais_init, bayes_factor_series, particle_filter,
                       write_bayes_factor_csv)
from .mcmc import (ChainError, CheckpointError, GewekeReport, McmcConfig,
                   PosteriorDraws, effective_sample_size, geweke_compare,
                   load_checkpoint, resume_chain, run_chain)
from .model import (FactorParams, IntensityPrior, PriorSpec, ReturnsPanel,
                    StockParams, elicit_intensity_prior)
from .simulate import (business_day_calendar, deltas_from_dates,
                       empirical_jump_detector, simulate_panel,
                       write_panel_csv)

__version__ = "0.1.0"

__all__ = [
    "AisEnsemble",
    "ChainError",
    "CheckpointError",
    "FactorParams",
    "ForecastError",
    "ForecastResult",
    "GewekeReport",
    "IntensityPrior",
    "McmcConfig",
    "PosteriorDraws",
    "PriorSpec",
    "ReturnsPanel",
    "StockParams",
    "SvjEstimator",
    "ais_extend",
    "ais_forecast",
    "ais_init",
    "bayes_factor_series",
    "business_day_calendar",
    "deltas_from_dates",
    "effective_sample_size",
    "elicit_intensity_prior",
    "empirical_jump_detector",
    "geweke_compare",
    "load_checkpoint",
    "particle_filter",
    "resume_chain",
    "run_chain",
    "simulate_panel",
    "write_panel_csv",
    "__version__",
]
