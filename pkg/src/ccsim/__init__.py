"""Simulator for contract-connection peer-to-peer dissemination."""

from .config import SimConfig, load_config
from .harness import ExperimentPlan, run_experiment, run_protocol, summarize
from .ledger import Ledger

__all__ = ["SimConfig", "load_config", "ExperimentPlan", "run_experiment", "run_protocol",
           "summarize", "Ledger"]
__version__ = "0.1.0"
