"""Closed-form Black-Scholes pricing and Vega.

The normal CDF is evaluated through the complementary error function so the
relative error stays near machine precision; implied-volatility round trips
at 1e-8 depend on that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import DomainError
from .market import BsInputs, EuropeanOption, OptionSide

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class BsSolution:
    price: float
    d1: float
    d2: float
    vega: float


def _norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _d1_d2(spot: float, strike: float, tau: float, rate: float, sigma: float):
    sig_sqrt_tau = sigma * math.sqrt(tau)
    d1 = (math.log(spot / strike) + (rate + 0.5 * sigma * sigma) * tau) / sig_sqrt_tau
    return d1, d1 - sig_sqrt_tau


def call_price_scalar(spot: float, strike: float, tau: float, rate: float, sigma: float) -> float:
    """Fast scalar call price; inputs assumed validated (hot path of the IV solvers)."""
    d1, d2 = _d1_d2(spot, strike, tau, rate, sigma)
    return spot * _norm_cdf(d1) - strike * math.exp(-rate * tau) * _norm_cdf(d2)


def vega_scalar(spot: float, strike: float, tau: float, rate: float, sigma: float) -> float:
    d1, _ = _d1_d2(spot, strike, tau, rate, sigma)
    return spot * math.exp(-0.5 * d1 * d1) / _SQRT_2PI * math.sqrt(tau)


def bs_price(inputs: BsInputs) -> BsSolution:
    """Price a European option and return price, d1/d2 and Vega."""
    opt = inputs.option
    sigma = inputs.sigma
    d1, d2 = _d1_d2(opt.spot, opt.strike, opt.tau, opt.rate, sigma)
    call = opt.spot * _norm_cdf(d1) - opt.discounted_strike * _norm_cdf(d2)
    if opt.side is OptionSide.CALL:
        price = call
    else:
        price = call - opt.spot + opt.discounted_strike
    price = max(price, 0.0)
    vega = opt.spot * math.exp(-0.5 * d1 * d1) / _SQRT_2PI * math.sqrt(opt.tau)
    return BsSolution(price=price, d1=d1, d2=d2, vega=vega)


def bs_vega(inputs: BsInputs) -> float:
    """Analytic Vega, identical for calls and puts."""
    opt = inputs.option
    return vega_scalar(opt.spot, opt.strike, opt.tau, opt.rate, inputs.sigma)


def bs_call_price_vec(
    moneyness: np.ndarray,
    tau: np.ndarray,
    rate: np.ndarray,
    sigma: np.ndarray,
    strike: float = 1.0,
) -> np.ndarray:
    """Vectorized call price V (currency) with a common strike.

    Shapes broadcast; used by the dataset generators where millions of rows
    are priced at once.
    """
    moneyness = np.asarray(moneyness, dtype=float)
    tau = np.asarray(tau, dtype=float)
    rate = np.asarray(rate, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0) or np.any(tau <= 0) or np.any(moneyness <= 0) or strike <= 0:
        raise DomainError("sigma, tau, moneyness and strike must all be positive")
    spot = moneyness * strike
    sig_sqrt_tau = sigma * np.sqrt(tau)
    d1 = (np.log(moneyness) + (rate + 0.5 * sigma**2) * tau) / sig_sqrt_tau
    d2 = d1 - sig_sqrt_tau
    return spot * ndtr(d1) - strike * np.exp(-rate * tau) * ndtr(d2)


def intrinsic_call_vec(
    moneyness: np.ndarray, tau: np.ndarray, rate: np.ndarray, strike: float = 1.0
) -> np.ndarray:
    """Vectorized discounted-strike call intrinsic value."""
    spot = np.asarray(moneyness, dtype=float) * strike
    return np.maximum(spot - strike * np.exp(-np.asarray(rate) * np.asarray(tau)), 0.0)


def make_bs_inputs(
    moneyness: float,
    tau: float,
    rate: float,
    sigma: float,
    side: OptionSide = OptionSide.CALL,
    strike: float = 1.0,
) -> BsInputs:
    """Convenience constructor used widely in tests and experiments."""
    return BsInputs(
        option=EuropeanOption(
            moneyness=moneyness, tau=tau, rate=rate, side=side, strike=strike
        ),
        sigma=sigma,
    )
