"""CSI-RS based complex channel reporting and binary RIS phase optimization."""
from .chanest import CciExtractor, extract_cci, noise_gain
from .grid import BwpConfig, CdmType, CsiRsConfig, generate_pilots, synthesize_received_grid
from .optimize import (
    HadamardOptimizer,
    OmpOptimizer,
    acquire,
    bernoulli_sensing,
    hadamard_optimize,
    hadamard_sensing,
    omp_optimize,
)
from .report import CsiReport, QuantizerSpec, ReportVariant, dequantize, pack, quantize, unpack
from .ricsim import ExperimentPlan, ResultRow, pdf_experiment, run_episode, run_plan
from .ris import ElementChannel, PhaseConfig, RisGeometry, exhaustive_best, rsrp_db, synthesize_scenario

__version__ = "0.1.0"
