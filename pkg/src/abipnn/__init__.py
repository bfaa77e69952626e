"""Vector-valued neural networks whose neurons combine through arbitrary bilinear products."""
from .bilinear import BilinearProduct, DimensionMismatchError, builtin_product, custom_product, get_product
from .network import Network, forward, init_network, predict
from .train import TrainConfig, grad_check

__version__ = "0.1.0"
