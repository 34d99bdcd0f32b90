"""Option-pricing toolkit: analytic and Fourier pricers, implied-volatility
root finders, and a from-scratch neural-network surrogate pipeline."""

from .black_scholes import bs_price, bs_vega, bs_call_price_vec
from .cos import CosConfig, cos_call_price, cos_put_price, heston_price_vec
from .errors import (
    BoundsViolation,
    DomainError,
    EmptyInput,
    FormatError,
    NeuralvolError,
    NonFiniteLoss,
    NumericalOverflow,
    ShapeMismatch,
)
from .estimator import MlpRegressor
from .implied_vol import (
    IvProblem,
    IvResult,
    IvStatus,
    SolverConfig,
    bisection_iv,
    brent_iv,
    newton_iv,
    secant_iv,
    solve_iv_batch,
)
from .market import BsInputs, EuropeanOption, HestonParams, OptionSide, PricePoint
from .sampling import (
    Dataset,
    ParamSpace,
    SplitSpec,
    generate_bs_dataset,
    generate_heston_dataset,
    generate_iv_dataset,
    lhs_sample,
    split,
)

__all__ = [
    "BoundsViolation",
    "BsInputs",
    "CosConfig",
    "Dataset",
    "DomainError",
    "EmptyInput",
    "EuropeanOption",
    "FormatError",
    "HestonParams",
    "IvProblem",
    "IvResult",
    "IvStatus",
    "MlpRegressor",
    "NeuralvolError",
    "NonFiniteLoss",
    "NumericalOverflow",
    "OptionSide",
    "ParamSpace",
    "PricePoint",
    "ShapeMismatch",
    "SolverConfig",
    "SplitSpec",
    "bisection_iv",
    "brent_iv",
    "bs_call_price_vec",
    "bs_price",
    "bs_vega",
    "cos_call_price",
    "cos_put_price",
    "generate_bs_dataset",
    "generate_heston_dataset",
    "generate_iv_dataset",
    "heston_price_vec",
    "lhs_sample",
    "newton_iv",
    "secant_iv",
    "solve_iv_batch",
    "split",
]
