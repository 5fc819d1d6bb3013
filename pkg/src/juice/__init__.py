"""Joint activity detection and channel estimation for clustered MTC."""

from .admm import AdmmConfig, run_corr_map_admm
from .baselines import IrwConfig, OracleInfo, irw_l21, oracle_mmse
from .emep import EmEpConfig, run_em_ep
from .estimators import EMEP, IRWL21, CorrMapADMM, OracleMMSE
from .exceptions import ConfigurationError, DegenerateBeliefError, NumericalFailure
from .harness import ExperimentConfig, ResultTable, emit_outputs, grid_search, run_experiment
from .model import Scenario, ScenarioConfig, generate_scenario

__all__ = [
    "AdmmConfig", "CorrMapADMM", "ConfigurationError", "DegenerateBeliefError", "EMEP",
    "EmEpConfig", "ExperimentConfig", "IRWL21", "IrwConfig", "NumericalFailure", "OracleInfo",
    "OracleMMSE", "ResultTable", "Scenario", "ScenarioConfig", "emit_outputs",
    "generate_scenario", "grid_search", "irw_l21", "oracle_mmse", "run_corr_map_admm",
    "run_em_ep", "run_experiment",
]
