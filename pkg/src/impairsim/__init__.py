"""Deterministic simulator for video over an impaired network path."""
from .channel import (
    Channel,
    GilbertElliottParams,
    ImpairmentProfile,
    ge_from_targets,
    ge_mean_burst,
    ge_steady_state,
    transmit_batch,
)
from .harness import TrialConfig, TrialRecord, run_suite, run_trial, verify_ge
from .tiers import BUILTIN_TIERS, TierSpec, render_netem_commands, tier_profile

__version__ = "0.1.0"
