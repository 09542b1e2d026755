"""Model registry: name -> constructor taking trial arrays or subject records."""

from .clayton import CopulaPairModel
from .marginal import MarginalModel
from .multistate import MultiStateModel
from .spjm import SpjmModel
from .tl_os import TlOsModel

MODEL_BUILDERS = {
    "marginal": MarginalModel,
    "tl_os": TlOsModel,
    "copula_nt": lambda data: CopulaPairModel(data, "nt"),
    "copula_nl": lambda data: CopulaPairModel(data, "nl"),
    "copula_ttp": lambda data: CopulaPairModel(data, "ttp"),
    "spjm": SpjmModel,
    "multistate": MultiStateModel,
}

# the four averaged submodels, keyed by their weight label
BAVE_COMPONENTS = {"T": "tl_os", "NT": "copula_nt", "NL": "copula_nl", "OS": "marginal"}


def build_model(name, data):
    try:
        return MODEL_BUILDERS[name](data)
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODEL_BUILDERS)}") from None


__all__ = ["MODEL_BUILDERS", "BAVE_COMPONENTS", "build_model", "CopulaPairModel", "MarginalModel",
           "MultiStateModel", "SpjmModel", "TlOsModel"]
