"""Implied-volatility root finding: bisection, Newton-Raphson, secant, Brent.

Every solver shares the same out-of-bounds semantics: the target price is
checked against the attainable band before any iteration, so failure codes
do not depend on the method chosen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

from .black_scholes import call_price_scalar, vega_scalar
from .errors import DomainError
from .market import EuropeanOption, OptionSide, intrinsic_value

_VEGA_FLOOR = 1e-10
_SECANT_STALL = 1e-14
_NEWTON_ESCAPE_HI = 10.0


class IvStatus(str, Enum):
    CONVERGED = "converged"
    NO_BRACKET = "no_bracket"
    VEGA_TOO_SMALL = "vega_too_small"
    MAX_ITER_EXCEEDED = "max_iter_exceeded"
    PRICE_OUT_OF_BOUNDS = "price_out_of_bounds"


@dataclass(frozen=True)
class IvProblem:
    option: EuropeanOption
    target_price: float

    def price_at(self, sigma: float) -> float:
        """Model price at the given volatility; sigma <= 0 evaluates the limit."""
        opt = self.option
        if sigma <= 0.0:
            return intrinsic_value(opt)
        call = call_price_scalar(opt.spot, opt.strike, opt.tau, opt.rate, sigma)
        if opt.side is OptionSide.PUT:
            return call - opt.spot + opt.discounted_strike
        return call

    def residual(self, sigma: float) -> float:
        return self.price_at(sigma) - self.target_price

    def vega_at(self, sigma: float) -> float:
        opt = self.option
        if sigma <= 0.0:
            return 0.0
        return vega_scalar(opt.spot, opt.strike, opt.tau, opt.rate, sigma)

    def attainable_band(self) -> tuple[float, float]:
        """Open interval of prices reachable for sigma in (0, inf)."""
        opt = self.option
        lower = intrinsic_value(opt)
        upper = opt.spot if opt.side is OptionSide.CALL else opt.discounted_strike
        return lower, upper


@dataclass(frozen=True)
class SolverConfig:
    bracket: tuple[float, float] = (0.0, 1.1)
    initial_guess: float = 0.5
    abs_tol: float = 1e-8
    residual_tol: float = 1e-10
    max_iter: int = 200

    def __post_init__(self) -> None:
        if not (self.bracket[0] < self.bracket[1]):
            raise DomainError(f"bracket {self.bracket} must satisfy lo < hi")
        if self.abs_tol <= 0 or self.residual_tol <= 0:
            raise DomainError("tolerances must be positive")


@dataclass
class IvResult:
    sigma_star: float
    iterations: int
    function_evals: int
    status: IvStatus
    diverged: bool = False

    @property
    def converged(self) -> bool:
        return self.status is IvStatus.CONVERGED


TraceHook = Callable[[float, float, float, float], None]


def _check_bounds(problem: IvProblem) -> IvResult | None:
    lower, upper = problem.attainable_band()
    v = problem.target_price
    if v <= lower or v >= upper:
        return IvResult(
            sigma_star=math.nan, iterations=0, function_evals=0,
            status=IvStatus.PRICE_OUT_OF_BOUNDS,
        )
    return None


def bisection_iv(
    problem: IvProblem, config: SolverConfig | None = None, trace: TraceHook | None = None
) -> IvResult:
    """Interval-halving solver; robust whenever the bracket straddles the root."""
    config = config or SolverConfig()
    oob = _check_bounds(problem)
    if oob is not None:
        return oob
    lo, hi = config.bracket
    g_lo, g_hi = problem.residual(lo), problem.residual(hi)
    evals = 2
    if g_lo * g_hi > 0:
        return IvResult(math.nan, 0, evals, IvStatus.NO_BRACKET)
    for iteration in range(1, config.max_iter + 1):
        if trace is not None:
            trace(lo, hi, g_lo, g_hi)
        mid = 0.5 * (lo + hi)
        g_mid = problem.residual(mid)
        evals += 1
        if abs(g_mid) <= config.residual_tol or (hi - lo) <= config.abs_tol:
            return IvResult(mid, iteration, evals, IvStatus.CONVERGED)
        if g_lo * g_mid <= 0:
            hi, g_hi = mid, g_mid
        else:
            lo, g_lo = mid, g_mid
    return IvResult(0.5 * (lo + hi), config.max_iter, evals, IvStatus.MAX_ITER_EXCEEDED)


def newton_iv(problem: IvProblem, config: SolverConfig | None = None) -> IvResult:
    """Newton-Raphson on the price residual with the analytic Vega."""
    config = config or SolverConfig()
    oob = _check_bounds(problem)
    if oob is not None:
        return oob
    sigma = config.initial_guess
    g = problem.residual(sigma)
    evals = 1
    if abs(g) <= config.residual_tol:
        return IvResult(sigma, 0, evals, IvStatus.CONVERGED)
    for iteration in range(1, config.max_iter + 1):
        # Vega calls are analytic-derivative evaluations, not counted as
        # residual evaluations.
        vega = problem.vega_at(sigma)
        if vega < _VEGA_FLOOR:
            return IvResult(sigma, iteration, evals, IvStatus.VEGA_TOO_SMALL)
        step = g / vega
        sigma_next = sigma - step
        if not (0.0 < sigma_next <= _NEWTON_ESCAPE_HI) or not math.isfinite(sigma_next):
            return IvResult(
                sigma, iteration, evals, IvStatus.MAX_ITER_EXCEEDED, diverged=True
            )
        g = problem.residual(sigma_next)
        evals += 1
        if abs(g) <= config.residual_tol or abs(sigma_next - sigma) <= config.abs_tol:
            return IvResult(sigma_next, iteration, evals, IvStatus.CONVERGED)
        sigma = sigma_next
    return IvResult(sigma, config.max_iter, evals, IvStatus.MAX_ITER_EXCEEDED)


def secant_iv(problem: IvProblem, config: SolverConfig | None = None) -> IvResult:
    """Secant iteration started at (sigma0, sigma0 + 0.1)."""
    config = config or SolverConfig()
    oob = _check_bounds(problem)
    if oob is not None:
        return oob
    s_prev, s_curr = config.initial_guess, config.initial_guess + 0.1
    g_prev, g_curr = problem.residual(s_prev), problem.residual(s_curr)
    evals = 2
    if abs(g_prev) <= config.residual_tol:
        return IvResult(s_prev, 0, evals, IvStatus.CONVERGED)
    for iteration in range(1, config.max_iter + 1):
        denom = g_curr - g_prev
        if abs(denom) < _SECANT_STALL:
            return IvResult(s_curr, iteration, evals, IvStatus.MAX_ITER_EXCEEDED)
        s_next = s_curr - g_curr * (s_curr - s_prev) / denom
        if not math.isfinite(s_next) or not (0.0 < s_next <= _NEWTON_ESCAPE_HI):
            return IvResult(
                s_curr, iteration, evals, IvStatus.MAX_ITER_EXCEEDED, diverged=True
            )
        g_next = problem.residual(s_next)
        evals += 1
        if abs(g_next) <= config.residual_tol or abs(s_next - s_curr) <= config.abs_tol:
            return IvResult(s_next, iteration, evals, IvStatus.CONVERGED)
        s_prev, g_prev, s_curr, g_curr = s_curr, g_curr, s_next, g_next
    return IvResult(s_curr, config.max_iter, evals, IvStatus.MAX_ITER_EXCEEDED)


def brent_iv(
    problem: IvProblem, config: SolverConfig | None = None, trace: TraceHook | None = None
) -> IvResult:
    """Brent's method: inverse quadratic interpolation with secant fallback and
    a bisection safeguard whenever the candidate leaves the bracket or stalls."""
    config = config or SolverConfig()
    oob = _check_bounds(problem)
    if oob is not None:
        return oob
    a, b = config.bracket
    fa, fb = problem.residual(a), problem.residual(b)
    evals = 2
    if fa * fb > 0:
        return IvResult(math.nan, 0, evals, IvStatus.NO_BRACKET)
    c, fc = a, fa
    d = e = b - a
    for iteration in range(1, config.max_iter + 1):
        if fb * fc > 0:
            c, fc = a, fa
            d = e = b - a
        if abs(fc) < abs(fb):
            a, b, c = b, c, b
            fa, fb, fc = fb, fc, fb
        if trace is not None:
            lo, hi = min(b, c), max(b, c)
            trace(lo, hi, fb if b < c else fc, fc if b < c else fb)
        tol1 = 2.0 * 2.220446049250313e-16 * abs(b) + 0.5 * config.abs_tol
        xm = 0.5 * (c - b)
        if abs(xm) <= tol1 or abs(fb) <= config.residual_tol:
            return IvResult(b, iteration, evals, IvStatus.CONVERGED)
        if abs(e) >= tol1 and abs(fa) > abs(fb):
            s = fb / fa
            if a == c:
                # Two of the three iterants coincide: secant update.
                p = 2.0 * xm * s
                q = 1.0 - s
            else:
                # Inverse quadratic interpolation through (a, b, c).
                q = fa / fc
                r = fb / fc
                p = s * (2.0 * xm * q * (q - r) - (b - a) * (r - 1.0))
                q = (q - 1.0) * (r - 1.0) * (s - 1.0)
            if p > 0:
                q = -q
            p = abs(p)
            if 2.0 * p < min(3.0 * xm * q - abs(tol1 * q), abs(e * q)):
                e, d = d, p / q
            else:
                d = e = xm  # interpolation rejected: bisect
        else:
            d = e = xm
        a, fa = b, fb
        b = b + (d if abs(d) > tol1 else math.copysign(tol1, xm))
        fb = problem.residual(b)
        evals += 1
    return IvResult(b, config.max_iter, evals, IvStatus.MAX_ITER_EXCEEDED)


_SOLVERS: dict[str, Callable[..., IvResult]] = {
    "bisection": bisection_iv,
    "newton": newton_iv,
    "secant": secant_iv,
    "brent": brent_iv,
}


def solve_iv_batch(
    problems: Sequence[IvProblem], method: str, config: SolverConfig | None = None
) -> list[IvResult]:
    """Apply one solver to every problem; failures become per-element statuses."""
    try:
        solver = _SOLVERS[method]
    except KeyError:
        raise DomainError(
            f"unknown method {method!r}; expected one of {sorted(_SOLVERS)}"
        ) from None
    return [solver(p, config) for p in problems]
