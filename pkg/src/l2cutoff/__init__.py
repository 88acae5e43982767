"""L2 cutoff diagnostics for reversible finite Markov chains and their products."""
from .laplace import SpectralMeasure, laplace_eval, lambda_c, mixing_time, tau_c
from .spectral import (
    CONTINUOUS, DISCRETE, ReversibleChain, SpectralData, decompose, l2_distance, to_measure,
)
from .analysis import chain_diagnostics, comparison_report, pbm_bounds
from .product import ProductSpec, assemble, product_l2_sq, product_mixing_time, tau_tilde

__version__ = "0.1.0"

__all__ = [
    "SpectralMeasure", "laplace_eval", "lambda_c", "mixing_time", "tau_c",
    "CONTINUOUS", "DISCRETE", "ReversibleChain", "SpectralData", "decompose",
    "l2_distance", "to_measure", "chain_diagnostics", "comparison_report", "pbm_bounds",
    "ProductSpec", "assemble", "product_l2_sq", "product_mixing_time", "tau_tilde",
]
