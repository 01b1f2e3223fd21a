"""Deterministic simulator of a multi-threaded block-DAG proof-of-stake
protocol whose blocks need super-majority endorsement certificates."""

from .analysis import binom_cdf, binom_tail, lemma1_bound, liveness_parameter, safety_grid
from .config import ScenarioConfig, load, load_bundled, resolve
from .graph import ChainHead, CliqueCapExceeded, maximal_cliques
from .model import Block, Certificate, ConfigError, Endorsement, Slot, Transaction
from .netsim import ScenarioReport, partition_heal_check, run_scenario
from .params import Params
from .replay import replay_fork_attack

__version__ = "0.1.0"

__all__ = [
    "Block", "Certificate", "ChainHead", "CliqueCapExceeded", "ConfigError", "Endorsement", "Params",
    "ScenarioConfig", "ScenarioReport", "Slot", "Transaction", "binom_cdf", "binom_tail", "lemma1_bound",
    "liveness_parameter", "load", "load_bundled", "maximal_cliques", "partition_heal_check",
    "replay_fork_attack", "resolve", "run_scenario", "safety_grid",
]
