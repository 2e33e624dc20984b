"""Data-driven modelling and fixed-order control of LTI systems.

Frequency data go through Loewner interpolation, H2-oriented reduction,
structured H-infinity synthesis, Tustin discretization and sampled-data
simulation with PWM actuation.
"""

from .config import PipelineConfig, load_config
from .discretize import DiscreteSystem, compare_cd, freq_response_z, tustin
from .errors import ConvergenceError, DomainError, LoopsmithError
from .hybrid import PwmConfig, pwm_duty, pwm_modulate, simulate_hybrid
from .loewner import build_pencil, detect_order, enforce_stability, loewner_fit, realize
from .lti import (
    DescriptorSystem,
    FeedthroughSystem,
    RationalWeight,
    eval_transfer,
    freqresp,
    h2_norm,
    hinf_norm,
    interconnect,
    make_system,
    poles,
    second_order_plant,
)
from .margins import margins, nyquist_data
from .pipeline import emit_plots, run_pipeline, run_stage
from .reduction import itia_reduce
from .signals import FrequencyData, SignalTrace, estimate_frf, gen_chirp, gen_impulse, gen_prbs, simulate_lti
from .synthesis import StructuredController, build_generalized_plant, synthesize

__all__ = [
    "PipelineConfig",
    "load_config",
    "DiscreteSystem",
    "compare_cd",
    "freq_response_z",
    "tustin",
    "ConvergenceError",
    "DomainError",
    "LoopsmithError",
    "PwmConfig",
    "pwm_duty",
    "pwm_modulate",
    "simulate_hybrid",
    "build_pencil",
    "detect_order",
    "enforce_stability",
    "loewner_fit",
    "realize",
    "DescriptorSystem",
    "FeedthroughSystem",
    "RationalWeight",
    "eval_transfer",
    "freqresp",
    "h2_norm",
    "hinf_norm",
    "interconnect",
    "make_system",
    "poles",
    "second_order_plant",
    "margins",
    "nyquist_data",
    "emit_plots",
    "run_pipeline",
    "run_stage",
    "itia_reduce",
    "FrequencyData",
    "SignalTrace",
    "estimate_frf",
    "gen_chirp",
    "gen_impulse",
    "gen_prbs",
    "simulate_lti",
    "StructuredController",
    "build_generalized_plant",
    "synthesize",
]

__version__ = "0.1.0"
