"""Expense-level Markov models and Monte Carlo simulation of health savings accounts
backed by catastrophic insurance.
"""

from .core import DEFAULT_BREAKS, AgeRange, ExpenseLevel, Sex, Stratum, classify_level, format_money, parse_money
from .hsa import PRESET_HSA, HsaParams, simulate_account
from .ingest import Cohort, Dataset, filter_cohort, load_person_years
from .markov import TransitionModel, estimate_model, estimate_order2, estimate_pairwise, persistence_report
from .sampler import DistributionSet, build_distributions, build_empirical, sample_within_level
from .sim import PRESET_PARAMS, SimulationParams, StudyResult, run_replication, run_study
from .synth import default_calibration, generate_dataset

__version__ = "0.1.0"
