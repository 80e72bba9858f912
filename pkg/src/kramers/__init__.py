"""Eyring-Kramers transition rates for irreversible diffusion processes.

The package computes the mean transition time between metastable states of
a diffusion dX = b dt + sqrt(2 eps) sigma dW whose drift admits a
transverse decomposition b = -a grad(U) + l: the quasipotential barrier,
the instanton (most probable transition path), the saddle spectral data,
the non-Gibbsian prefactor correction exp(int F), the committor, and exit
rates -- each validated against direct Monte Carlo simulation.
"""
from . import cli, dynamics, landscape, models, montecarlo, saddle, validate
from .dynamics import (
    InstantonResult,
    Path,
    action,
    compute_instanton,
    integrate_fluctuation,
    integrate_relaxation,
    minimize_action,
)
from .errors import KramersError
from .landscape import (
    PrefactorData,
    ensemble_density,
    f_function,
    f_integral_along,
    hj_residual,
    quasipotential,
    stationary_prefactor,
)
from .models import (
    ModelSpec,
    RegisteredModel,
    TransversePair,
    builtin_models,
    check_transverse,
    get_model,
    jacobian,
    resolve_model,
)
from .montecarlo import (
    McConfig,
    McEstimate,
    arrhenius_fit,
    empirical_committor,
    exit_time_distribution_check,
    sample_transition_times,
)
from .saddle import (
    DomainSpec,
    RateReport,
    SaddleData,
    committor,
    find_saddle,
    quasipotential_hessian,
    quasistationary_exit_rate,
    saddle_geometry,
    surface_integral_factors,
    transition_rate,
)

__version__ = "0.1.0"
