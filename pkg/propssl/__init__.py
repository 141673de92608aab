__version__ = "0.1.0"
__all__ = [
    "exceptions",
    "constants",
    "utils",
    "hypergeom",
    "ltdata",
    "nn",
    "ssl_losses",
    "trainer",
    "ClassCounts",
    "ProportionVector",
    "SplitSpec",
    "TrainConfig",
    "train",
    "run_seeds",
    "parse_config",
]


from . import constants, exceptions, hypergeom, ltdata, nn, ssl_losses, trainer, utils
from .config import parse_config
from .hypergeom import ClassCounts, ProportionVector
from .ltdata import SplitSpec
from .trainer import TrainConfig, run_seeds, train
