"""Reference circuit configurations and cached runs shared by the test modules."""
import math
from functools import lru_cache

import numpy as np

from semidae.circuit import (CircuitParams, SourceSpec, build_filter_dae, instability_family,
                             power_family, sine_family)
from semidae.integrate import IntegrationOptions, integrate

BOUNDED = {
    "damped_sine": (CircuitParams(500, 0.5, 2, 0.2, *power_family(),
                                  SourceSpec("damped_sinusoid", beta=100, alpha=1, omega=5)), (0, 0, 0)),
    "small_r": (CircuitParams(50, 1, 0.001, 1, *power_family((1, 1, 1, 0.01)),
                              SourceSpec("sinusoid", beta=2)), (0, 0, 0)),
    "sine_family": (CircuitParams(300, 0.5, 2.6, 0.2, *sine_family((0.5, 1.5, 1, 3)),
                                  SourceSpec("sinusoid", beta=200, omega=0.5, offset=-0.2)),
                    (math.pi / 6, 0.5, 0)),
    "power_decay": (CircuitParams(1, 5, 1.51, 5, *sine_family((1, 1, 0.5, 1)),
                                  SourceSpec("power_decay", beta=1, alpha=30, n=2)), (0, 0, 0)),
}

GROWING = {
    "quadratic": (CircuitParams(1000, 0.5, 2, 0.3, *power_family(),
                                SourceSpec("power_growth", beta=-1, alpha=0, n=2)), (0, 0, 0)),
    "cubic": (CircuitParams(100, 5, 3, 4, *sine_family((1, 0.9, 2, 5)),
                            SourceSpec("power_growth", beta=1, alpha=-50, n=3)), (0, 0, 0)),
}

ESCAPE = {
    "L10": (CircuitParams(10, 0.5, 2, 0.2, *instability_family(), SourceSpec("sinusoid", beta=2)),
            (2.45, -20.625125, 2.5)),
    "L5": (CircuitParams(5, 0.5, 2, 0.5, *instability_family(), SourceSpec()), (1.1, -4.129, 1.2)),
}

ALL = {**{f"bounded/{k}": v for k, v in BOUNDED.items()},
       **{f"growing/{k}": v for k, v in GROWING.items()},
       **{f"escape/{k}": v for k, v in ESCAPE.items()}}


def options(rel_tol, t_end=50.0, **kw):
    return IntegrationOptions(t_end=t_end, rel_tol=rel_tol, abs_tol=rel_tol * 1e-2, h_init=1e-4, **kw)


@lru_cache(maxsize=None)
def dae_for(name):
    return build_filter_dae(ALL[name][0])


@lru_cache(maxsize=None)
def run(name, rel_tol=1e-8, t_end=50.0):
    params, x0 = ALL[name]
    return integrate(dae_for(name), 0.0, np.array(x0, dtype=float), options(rel_tol, t_end))
