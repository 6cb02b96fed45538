"""Covariate-adaptive multiple testing on z-values with FDR control."""

__version__ = "0.1.0"

from .asymp import AsympConfig, run_zap_asymp, select_threshold_asymp  # noqa: E402
from .em import EMConfig, fit_full_em  # noqa: E402
from .finite import FiniteRunConfig, run_zap_finite, run_zap_finite_multi  # noqa: E402
from .kernels import BACKEND  # noqa: E402
from .model import BetaMixtureParams, TestingInput  # noqa: E402
from .oracle import OracleModel, run_oracle  # noqa: E402
from .simulation import ScenarioConfig, bh_procedure, replicate  # noqa: E402

__all__ = [
    "AsympConfig", "BACKEND", "BetaMixtureParams", "EMConfig", "FiniteRunConfig", "OracleModel",
    "ScenarioConfig", "TestingInput", "bh_procedure", "fit_full_em", "replicate", "run_oracle",
    "run_zap_asymp", "run_zap_finite", "run_zap_finite_multi", "select_threshold_asymp",
]
