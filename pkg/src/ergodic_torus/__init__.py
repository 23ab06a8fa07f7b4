"""Stationary averages of SDEs on the torus: weak integrators, time-averaging
estimators, a spectral oracle and convergence-rate experiments.

Public names are loaded lazily so that the command-line entry point can
configure the numba thread pool before numba is imported.
"""

from importlib import import_module

__version__ = "0.1.0"

_EXPORTS = {
    "estimators": ["EstimatorResult", "block_statistics", "ensemble_average", "richardson",
                   "run_time_average", "time_average"],
    "noise": ["NoiseModel", "RngStream", "derive_stream_id", "sample_increment", "validate_moments"],
    "observables": ["Observable", "dictionary", "normalized_dictionary", "parse_observable"],
    "oracle": ["PoissonSolution", "SpectralDensity", "asymptotic_variance", "gibbs_average",
               "solve_poisson", "solve_stationary_density", "stationary_average"],
    "schemes": ["SchemeConfig", "SchemeError", "step", "weak_order_check"],
    "torus": ["CATALOG", "SdeProblem", "get_problem", "hormander_rank", "lie_bracket", "wrap"],
    "experiments": ["SweepConfig", "RateReport", "distance_report", "extrapolate_sweep",
                    "fit_power_law", "sweep_delta", "sweep_time"],
}
_WHERE = {name: mod for mod, names in _EXPORTS.items() for name in names}

__all__ = sorted(_WHERE)


def __getattr__(name):
    mod = _WHERE.get(name)
    if mod is None:
        raise AttributeError(f"module 'ergodic_torus' has no attribute {name!r}")
    return getattr(import_module(f".{mod}", __name__), name)


def __dir__():
    return sorted(list(globals()) + __all__)
