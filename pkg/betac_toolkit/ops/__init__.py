"""
Operations of the beta_c toolkit, one module per workflow concern.
"""
from . import mesh
from . import solver
from . import inversion
from . import features
from . import gpe
from . import ensemble
from . import deep_ensemble
from . import novelty
from . import pipeline

__all__ = [
    "mesh",
    "solver",
    "inversion",
    "features",
    "gpe",
    "ensemble",
    "deep_ensemble",
    "novelty",
    "pipeline",
]
