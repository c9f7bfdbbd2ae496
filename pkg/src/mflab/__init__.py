"""Numerical laboratory for online SGD on wide two-layer networks and its mean-field limit."""

from .activation import ActivationModel, Regime, audit_constants, get_model, register_model, softplus_dot, tanh_dot
from .constants import Hyperparams, StabilityLedger, build_ledger, kappa, localization_radii
from .dynamics import (CoupledSystem, DiscreteDataDistribution, InitialLaw, ParticleEnsemble, evolve_coupled,
                       evolve_reference, localized_run_audit, meanfield_drift, one_step_map, sgd_step)
from .errors import ConfigError, InputError, PreconditionError, SimulationDivergence
from .metrics import (EmpiricalMeasure, TestFunction, delta_testfn, kr_dual_lower_bound, sw1_montecarlo, w1_exact,
                      w1_sorted_1d)

__all__ = [
    "ActivationModel", "Regime", "audit_constants", "get_model", "register_model", "softplus_dot", "tanh_dot",
    "Hyperparams", "StabilityLedger", "build_ledger", "kappa", "localization_radii",
    "CoupledSystem", "DiscreteDataDistribution", "InitialLaw", "ParticleEnsemble", "evolve_coupled",
    "evolve_reference", "localized_run_audit", "meanfield_drift", "one_step_map", "sgd_step",
    "ConfigError", "InputError", "PreconditionError", "SimulationDivergence",
    "EmpiricalMeasure", "TestFunction", "delta_testfn", "kr_dual_lower_bound", "sw1_montecarlo", "w1_exact",
    "w1_sorted_1d",
]
