"""RIS-aided mmWave-NOMA downlink simulator.

Joint power allocation (closed-form group water-filling with pinning),
RIS phase-shift and analog beamforming design (alternating manifold
optimization), and digital beamforming (SCA over a penalized DC program
with an in-house interior-point inner solver), plus a Monte-Carlo
harness comparing the proposed pipeline against no-RIS, full-digital,
OMA, and random-phase ZF baselines.
"""

from .driver import SchemeVariant, Solution, initialize, optimize
from .harness import ExperimentSpec, TrialResult, baseline_eval, run_monte_carlo
from .rate_model import BeamformingState, GainTable, PowerSolution
from .scenario import ChannelSet, ScenarioConfig, gen_channels, gen_direct_channels

__version__ = "0.1.0"

__all__ = [
    "BeamformingState", "ChannelSet", "ExperimentSpec", "GainTable",
    "PowerSolution", "ScenarioConfig", "SchemeVariant", "Solution",
    "TrialResult", "baseline_eval", "gen_channels", "gen_direct_channels",
    "initialize", "optimize", "run_monte_carlo",
]
