"""MAP parameter learning for discrete Bayesian networks: EM, EDML and a
hybrid of the two."""

from .model import (
    DirichletPrior,
    ModelFormatError,
    Network,
    Parameterization,
    Variable,
    dirichlet_mode,
    load_network,
    random_network,
    random_parameterization,
    uniform_parameterization,
    validate,
)
from .data import Dataset, HidingPolicy, forward_sample, hide, read_csv, write_csv
from .infer import (
    ImpossibleEvidenceError,
    brute_force_marginals,
    calibrate,
    log_likelihood,
    log_posterior,
)

__version__ = "0.1.0"
