"""Contract and model parameter types plus payoff / parity / time-value helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .errors import BoundsViolation, DomainError

# Negative time values within this tolerance are treated as rounding noise.
TIME_VALUE_TOL = 1e-12


class OptionSide(str, Enum):
    CALL = "call"
    PUT = "put"


@dataclass(frozen=True)
class EuropeanOption:
    """A European vanilla contract, parameterized by moneyness m = S0/K.

    The spot price is implied: S0 = m * strike.
    """

    moneyness: float
    tau: float
    rate: float
    side: OptionSide = OptionSide.CALL
    strike: float = 1.0

    def __post_init__(self) -> None:
        if not (self.moneyness > 0):
            raise DomainError(f"moneyness must be positive, got {self.moneyness}")
        if not (self.tau > 0):
            raise DomainError(f"tau must be positive, got {self.tau}")
        if not (self.strike > 0):
            raise DomainError(f"strike must be positive, got {self.strike}")
        if self.rate < 0:
            raise DomainError(f"rate must be non-negative, got {self.rate}")

    @property
    def spot(self) -> float:
        return self.moneyness * self.strike

    @property
    def discounted_strike(self) -> float:
        return self.strike * math.exp(-self.rate * self.tau)


@dataclass(frozen=True)
class BsInputs:
    """A contract together with the constant volatility used to price it."""

    option: EuropeanOption
    sigma: float

    def __post_init__(self) -> None:
        if not (self.sigma > 0):
            raise DomainError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class HestonParams:
    """Mean-reverting stochastic variance parameters.

    The Feller condition is deliberately not enforced; the sampling ranges
    used for data generation permit its violation.
    """

    kappa: float
    nu_bar: float
    gamma: float
    rho: float
    nu0: float

    def __post_init__(self) -> None:
        if self.kappa < 0:
            raise DomainError(f"kappa must be non-negative, got {self.kappa}")
        if self.nu_bar < 0:
            raise DomainError(f"nu_bar must be non-negative, got {self.nu_bar}")
        if self.gamma < 0:
            raise DomainError(f"gamma must be non-negative, got {self.gamma}")
        if not (self.nu0 > 0):
            raise DomainError(f"nu0 must be positive, got {self.nu0}")
        if not (-1.0 <= self.rho <= 1.0):
            raise DomainError(f"rho must lie in [-1, 1], got {self.rho}")

    def feller_holds(self) -> bool:
        return 2.0 * self.kappa * self.nu_bar >= self.gamma**2


@dataclass(frozen=True)
class PricePoint:
    """A priced contract; `scaled_price` is V/K."""

    option: EuropeanOption
    price: float

    @property
    def scaled_price(self) -> float:
        return self.price / self.option.strike


def intrinsic_value(option: EuropeanOption) -> float:
    """Intrinsic value with the discounted-strike convention.

    Calls: max(S0 - K e^{-r tau}, 0); puts: max(K e^{-r tau} - S0, 0).
    """
    forward_gap = option.spot - option.discounted_strike
    if option.side is OptionSide.CALL:
        return max(forward_gap, 0.0)
    return max(-forward_gap, 0.0)


def time_value(option: EuropeanOption, price: float) -> float:
    """Time value: price minus intrinsic value, clamped at zero within tolerance."""
    tv = price - intrinsic_value(option)
    if tv < -TIME_VALUE_TOL:
        raise BoundsViolation(
            f"price {price} lies below intrinsic value by {-tv:.3e} "
            f"(tolerance {TIME_VALUE_TOL:.0e})"
        )
    return max(tv, 0.0)


def put_call_parity(price: float, option: EuropeanOption) -> float:
    """Convert a call price to the put price (or back, depending on option.side).

    `option.side` names the side of the *given* price; the converted
    opposite-side price is returned.
    """
    if option.side is OptionSide.CALL:
        converted = price - option.spot + option.discounted_strike
    else:
        converted = price + option.spot - option.discounted_strike
    if converted < -TIME_VALUE_TOL:
        raise BoundsViolation(
            f"parity-converted price is negative ({converted:.3e}); "
            "input price violates no-arbitrage bounds"
        )
    return max(converted, 0.0)
