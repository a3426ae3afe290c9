"""Optimistic concurrency control for distributed nonparametric unsupervised learning."""

from .bpmeans import FeatureModel, bp_objective, parallel_bpmeans, serial_bpmeans
from .dpmeans import DpState, dp_objective, parallel_dpmeans, serial_dpmeans
from .engine import (EpochPlan, ProposalBatch, RunTrace, equivalent_serial_order, partition_epochs,
                     run_bsp)
from .ofl import OflResult, ofl_objective, parallel_ofl, serial_ofl
from .stream import UniformStream
from .verify import VerifyReport, verify_serializability

__all__ = [
    "DpState", "EpochPlan", "FeatureModel", "OflResult", "ProposalBatch", "RunTrace",
    "UniformStream", "VerifyReport", "bp_objective", "dp_objective", "equivalent_serial_order",
    "ofl_objective", "parallel_bpmeans", "parallel_dpmeans", "parallel_ofl", "partition_epochs",
    "run_bsp", "serial_bpmeans", "serial_dpmeans", "serial_ofl", "verify_serializability",
]
