"""Heston European option pricing via the Fourier-cosine expansion.

The characteristic function uses the branch-stable formulation (all
intermediate logs stay on the principal branch) and is written so the
vol-of-vol gamma cancels algebraically; gamma as small as 1e-8 reproduces
the constant-volatility limit to full working precision.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import BoundsViolation, DomainError, NumericalOverflow
from .market import EuropeanOption, HestonParams, OptionSide, PricePoint, put_call_parity

log = logging.getLogger(__name__)

# Exponent cap before exp(); beyond this doubles overflow.
_EXP_CAP = 700.0

# Calls with moneyness below this are priced as put + parity: the right-tail
# cosine expansion of near-zero call prices is truncation-dominated.
OTM_PARITY_THRESHOLD = 0.85

# Calls are also rerouted through the put when the upper truncation bound
# exceeds this: call payoff coefficients grow like e^b and the alternating
# sum then cancels catastrophically (put coefficients stay bounded by 1).
_CALL_TAIL_CAP = 14.0

# Negative prices within this tolerance are clamped; larger ones are errors.
_NEG_PRICE_TOL = 1e-10

# Below this vol-of-vol the variance path is treated as deterministic.
_GAMMA_FLOOR = 1e-10


@dataclass(frozen=True)
class CosConfig:
    n_terms: int = 1500
    trunc_width: float = 50.0

    def __post_init__(self) -> None:
        if self.n_terms < 16:
            raise DomainError(f"n_terms must be >= 16, got {self.n_terms}")
        if not (self.trunc_width > 0):
            raise DomainError(f"trunc_width must be positive, got {self.trunc_width}")


@dataclass(frozen=True)
class HestonChf:
    """Evaluation context for the log-return characteristic function."""

    tau: float
    rate: float
    params: HestonParams

    def __post_init__(self) -> None:
        if not (self.tau > 0):
            raise DomainError(f"tau must be positive, got {self.tau}")


def _log1p_complex(z: np.ndarray) -> np.ndarray:
    """log(1+z) for complex z, accurate to relative precision for tiny |z|."""
    z = np.asarray(z, dtype=complex)
    out = np.log1p(np.zeros_like(z)) if z.size == 0 else np.empty_like(z)
    small = np.abs(z) < 1e-4
    zs = z[small]
    # 4-term series: relative truncation error below |z|^4 < 1e-16.
    out[small] = zs * (1.0 - zs * (0.5 - zs * (1.0 / 3.0 - zs * 0.25)))
    out[~small] = np.log(1.0 + z[~small])
    return out


def _chf_exponent(
    u: np.ndarray,
    tau: np.ndarray | float,
    rate: np.ndarray | float,
    kappa: np.ndarray | float,
    nu_bar: np.ndarray | float,
    gamma: np.ndarray | float,
    rho: np.ndarray | float,
    nu0: np.ndarray | float,
) -> np.ndarray:
    """log phi(u) for the log-return under the risk-neutral Heston dynamics.

    All arguments broadcast. gamma below the deterministic-variance floor is
    replaced by the exact gamma -> 0 limit.
    """
    u = np.asarray(u, dtype=float)
    gamma_arr = np.asarray(gamma, dtype=float)
    iu = 1j * u
    u_sq_iu = u * u + iu

    det = gamma_arr < _GAMMA_FLOOR
    if np.any(det):
        # Deterministic variance: integrated variance in closed form.
        kt = np.broadcast_to(np.asarray(kappa, float) * np.asarray(tau, float), u.shape)
        decay = np.where(kt > 0, -np.expm1(-kt) / np.where(kt > 0, kappa, 1.0), tau)
        integ_var = np.asarray(nu_bar, float) * np.asarray(tau, float) + (
            np.asarray(nu0, float) - np.asarray(nu_bar, float)
        ) * decay
        exp_det = 1j * u * np.asarray(rate, float) * np.asarray(tau, float) - 0.5 * u_sq_iu * integ_var
        if np.all(det):
            return exp_det

    beta = kappa - rho * gamma_arr * iu
    delta = gamma_arr * gamma_arr * u_sq_iu
    big_d = np.sqrt(beta * beta + delta)
    denom = beta + big_d
    # beta - big_d via difference of squares: no cancellation for tiny gamma.
    with np.errstate(invalid="ignore", divide="ignore"):
        g_small = -delta / (denom * denom)
        e_term = np.exp(-big_d * tau)
        one_minus_ge = 1.0 - g_small * e_term
        c_term = -u_sq_iu / denom * (1.0 - e_term) / one_minus_ge
        q = _log1p_complex(-g_small * e_term) - _log1p_complex(-g_small)
        a_term = 1j * u * rate * tau + kappa * nu_bar * (
            -u_sq_iu * tau / denom - 2.0 * q / (gamma_arr * gamma_arr)
        )
        exponent = a_term + c_term * nu0
    # u = 0 makes denom possibly 0/0 when kappa = 0; the exponent is 0 there.
    exponent = np.where(u == 0.0, 0.0 + 0.0j, exponent)
    if np.any(det):
        exponent = np.where(det, exp_det, exponent)
    return exponent


def heston_chf(u, ctx: HestonChf):
    """Characteristic function phi(u) of the log-return; scalar in, scalar out."""
    p = ctx.params
    scalar = np.isscalar(u)
    exponent = _chf_exponent(
        np.atleast_1d(np.asarray(u, dtype=float)),
        ctx.tau, ctx.rate, p.kappa, p.nu_bar, p.gamma, p.rho, p.nu0,
    )
    if np.any(exponent.real > _EXP_CAP):
        raise NumericalOverflow(
            f"chf exponent {exponent.real.max():.1f} exceeds representable range"
        )
    phi = np.exp(exponent)
    return complex(phi[0]) if scalar else phi


def _cumulants(tau, rate, kappa, nu_bar, gamma, rho, nu0):
    """First two cumulants of the log-return; broadcasts over arrays.

    c2 switches to its kappa->0 Taylor series below kappa*tau = 1e-2, where
    the closed form loses all significant digits to cancellation.
    """
    tau = np.asarray(tau, float)
    kappa = np.asarray(kappa, float)
    nu_bar = np.asarray(nu_bar, float)
    gamma = np.asarray(gamma, float)
    rho = np.asarray(rho, float)
    nu0 = np.asarray(nu0, float)

    kt = kappa * tau
    safe_kappa = np.where(kappa > 0, kappa, 1.0)
    decay = np.where(kappa > 0, -np.expm1(-kt) / safe_kappa, tau)  # (1-e^{-kt})/k
    c1 = rate * tau + 0.5 * decay * (nu_bar - nu0) - 0.5 * nu_bar * tau

    small = kt < 1e-2
    e1 = np.exp(-kt)
    e2 = np.exp(-2.0 * kt)
    g2 = gamma * gamma
    with np.errstate(invalid="ignore", divide="ignore"):
        term_nu0 = nu0 * (
            2.0 * g2 * (1.0 - e2)
            - 4.0 * g2 * kt * e1
            + 8.0 * gamma * kappa * rho * (kt * e1 - 1.0 + e1)
            + 8.0 * kappa * kappa * (1.0 - e1)
        )
        term_nub = nu_bar * (
            2.0 * g2 * kt
            + 4.0 * g2 * kt * e1
            - 5.0 * g2
            + 4.0 * g2 * e1
            + g2 * e2
            - 8.0 * gamma * kappa * kappa * rho * tau * (1.0 + e1)
            + 16.0 * gamma * kappa * rho * (1.0 - e1)
            + 8.0 * kappa**3 * tau
            - 8.0 * kappa * kappa
            + 8.0 * kappa * kappa * e1
        )
        c2_exact = (term_nu0 + term_nub) / (8.0 * safe_kappa**3)
    # Series about kappa = 0 through kappa^2 (truncation error O((kappa tau)^3)).
    gt = gamma * tau
    c2_series = tau / 240.0 * (
        240.0 * nu0
        + 20.0 * g2 * nu0 * tau * tau
        - 120.0 * gamma * nu0 * rho * tau
        - 5.0 * kt * (
            4.0 * g2 * nu0 * tau * tau
            - g2 * nu_bar * tau * tau
            - 16.0 * gamma * nu0 * rho * tau
            + 8.0 * gamma * nu_bar * rho * tau
            + 24.0 * nu0
            - 24.0 * nu_bar
        )
        + kt * kt * (
            11.0 * g2 * nu0 * tau * tau
            - 4.0 * g2 * nu_bar * tau * tau
            - 30.0 * gamma * nu0 * rho * tau
            + 20.0 * gamma * nu_bar * rho * tau
            + 40.0 * nu0
            - 40.0 * nu_bar
        )
    )
    del gt
    c2 = np.where(small, c2_series, c2_exact)
    return c1, c2


def cos_truncation_bounds(ctx: HestonChf, cfg: CosConfig) -> tuple[float, float]:
    """Truncation interval [a, b] = c1 -/+ L * sqrt(|c2|)."""
    p = ctx.params
    c1, c2 = _cumulants(ctx.tau, ctx.rate, p.kappa, p.nu_bar, p.gamma, p.rho, p.nu0)
    width = cfg.trunc_width * math.sqrt(abs(float(c2)))
    a, b = float(c1) - width, float(c1) + width
    if not (b > a):
        raise DomainError(f"degenerate truncation interval [{a}, {b}]")
    return a, b


def _payoff_coefficients(side: OptionSide, a: np.ndarray, b: np.ndarray, n_terms: int):
    """Cosine coefficients of the unit-strike payoff on [a, b]; rows broadcast.

    Returns an array of shape (..., n_terms).
    """
    a = np.asarray(a, float)[..., None]
    b = np.asarray(b, float)[..., None]
    k = np.arange(n_terms, dtype=float)
    width = b - a
    if side is OptionSide.CALL:
        c, d = np.zeros_like(a), b
    else:
        c, d = a, np.zeros_like(a)

    omega = k * np.pi / width
    arg_d = omega * (d - a)
    arg_c = omega * (c - a)
    chi = (
        np.cos(arg_d) * np.exp(d)
        - np.cos(arg_c) * np.exp(c)
        + omega * (np.sin(arg_d) * np.exp(d) - np.sin(arg_c) * np.exp(c))
    ) / (1.0 + omega * omega)
    psi = np.empty_like(chi)
    psi[..., 1:] = (np.sin(arg_d[..., 1:]) - np.sin(arg_c[..., 1:])) / omega[..., 1:]
    psi[..., 0] = (d - c)[..., 0]
    if side is OptionSide.CALL:
        return 2.0 / width * (chi - psi)
    return 2.0 / width * (psi - chi)


def _cos_price_rows(
    side: OptionSide,
    moneyness: np.ndarray,
    tau: np.ndarray,
    rate: np.ndarray,
    kappa: np.ndarray,
    nu_bar: np.ndarray,
    gamma: np.ndarray,
    rho: np.ndarray,
    nu0: np.ndarray,
    cfg: CosConfig,
) -> np.ndarray:
    """Direct COS price per row for a unit strike; no parity rerouting here."""
    moneyness, tau, rate, kappa, nu_bar, gamma, rho, nu0 = np.broadcast_arrays(
        *(np.asarray(x, float) for x in (moneyness, tau, rate, kappa, nu_bar, gamma, rho, nu0))
    )
    c1, c2 = _cumulants(tau, rate, kappa, nu_bar, gamma, rho, nu0)
    width = cfg.trunc_width * np.sqrt(np.abs(c2))
    a, b = c1 - width, c1 + width
    if np.any(b <= a):
        raise DomainError("degenerate truncation interval in batch pricing")

    k = np.arange(cfg.n_terms, dtype=float)
    u = k * np.pi / (b - a)[..., None]
    exponent = _chf_exponent(
        u, tau[..., None], rate[..., None], kappa[..., None], nu_bar[..., None],
        gamma[..., None], rho[..., None], nu0[..., None],
    )
    if np.any(exponent.real > _EXP_CAP):
        raise NumericalOverflow("chf exponent exceeds representable range")
    phi = np.exp(exponent)
    x = np.log(moneyness)
    weights = np.exp(1j * u * (x - a)[..., None])
    coeffs = _payoff_coefficients(side, a, b, cfg.n_terms)
    terms = (phi * weights).real * coeffs
    terms[..., 0] *= 0.5
    return np.exp(-rate * tau) * terms.sum(axis=-1)


def heston_price_vec(
    side: OptionSide,
    moneyness: np.ndarray,
    tau: np.ndarray,
    rate: np.ndarray,
    kappa: np.ndarray,
    nu_bar: np.ndarray,
    gamma: np.ndarray,
    rho: np.ndarray,
    nu0: np.ndarray,
    cfg: CosConfig | None = None,
    strike: float = 1.0,
    chunk: int = 1024,
) -> np.ndarray:
    """Vectorized Heston prices with per-row parameters.

    Calls below the deep-OTM moneyness threshold are rerouted through the put
    price plus parity. Memory is bounded by chunking over rows.
    """
    cfg = cfg or CosConfig()
    arrs = np.broadcast_arrays(
        *(np.asarray(x, float) for x in (moneyness, tau, rate, kappa, nu_bar, gamma, rho, nu0))
    )
    n = arrs[0].shape[0] if arrs[0].ndim else 1
    flat = [np.atleast_1d(x).ravel() for x in arrs]
    out = np.empty(n, dtype=float)
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        m, t, r, ka, nb, ga, rh, n0 = (x[sl] for x in flat)
        if side is OptionSide.CALL:
            c1, c2 = _cumulants(t, r, ka, nb, ga, rh, n0)
            b_upper = c1 + cfg.trunc_width * np.sqrt(np.abs(c2))
            direct = (m >= OTM_PARITY_THRESHOLD) & (b_upper <= _CALL_TAIL_CAP)
            prices = np.empty(m.shape)
            if np.any(direct):
                prices[direct] = _cos_price_rows(
                    OptionSide.CALL, m[direct], t[direct], r[direct], ka[direct],
                    nb[direct], ga[direct], rh[direct], n0[direct], cfg,
                )
            rerouted = ~direct
            if np.any(rerouted):
                puts = _cos_price_rows(
                    OptionSide.PUT, m[rerouted], t[rerouted], r[rerouted], ka[rerouted],
                    nb[rerouted], ga[rerouted], rh[rerouted], n0[rerouted], cfg,
                )
                prices[rerouted] = puts + m[rerouted] - np.exp(-r[rerouted] * t[rerouted])
        else:
            prices = _cos_price_rows(OptionSide.PUT, m, t, r, ka, nb, ga, rh, n0, cfg)
        out[sl] = prices
    return out * strike


def _finalize_price(raw: float, option: EuropeanOption) -> PricePoint:
    """Clamp to no-arbitrage bounds, logging the clamp magnitude."""
    if raw < -_NEG_PRICE_TOL * option.strike:
        raise BoundsViolation(f"COS price {raw:.3e} is negative beyond tolerance")
    price = max(raw, 0.0)
    upper = option.spot if option.side is OptionSide.CALL else option.discounted_strike
    if price > upper:
        log.debug("clamping COS price %.3e to upper bound %.3e", price, upper)
        price = upper
    if price != raw:
        log.debug("COS price clamped by %.3e", abs(price - raw))
    return PricePoint(option=option, price=price)


def cos_call_price(
    option: EuropeanOption, params: HestonParams, cfg: CosConfig | None = None
) -> PricePoint:
    """European call price under Heston via the cosine expansion."""
    if option.side is not OptionSide.CALL:
        raise DomainError("cos_call_price prices calls; use cos_put_price for puts")
    cfg = cfg or CosConfig()
    _, b = cos_truncation_bounds(
        HestonChf(tau=option.tau, rate=option.rate, params=params), cfg
    )
    if option.moneyness < OTM_PARITY_THRESHOLD or b > _CALL_TAIL_CAP:
        put_opt = EuropeanOption(
            moneyness=option.moneyness, tau=option.tau, rate=option.rate,
            side=OptionSide.PUT, strike=option.strike,
        )
        put = cos_put_price(put_opt, params, cfg)
        raw = put_call_parity(put.price, put_opt)
        return _finalize_price(raw, option)
    raw = float(
        _cos_price_rows(
            OptionSide.CALL,
            np.array([option.moneyness]), np.array([option.tau]), np.array([option.rate]),
            np.array([params.kappa]), np.array([params.nu_bar]), np.array([params.gamma]),
            np.array([params.rho]), np.array([params.nu0]), cfg,
        )[0]
    ) * option.strike
    return _finalize_price(raw, option)


def cos_put_price(
    option: EuropeanOption, params: HestonParams, cfg: CosConfig | None = None
) -> PricePoint:
    """European put price under Heston via the cosine expansion."""
    if option.side is not OptionSide.PUT:
        raise DomainError("cos_put_price prices puts; use cos_call_price for calls")
    cfg = cfg or CosConfig()
    raw = float(
        _cos_price_rows(
            OptionSide.PUT,
            np.array([option.moneyness]), np.array([option.tau]), np.array([option.rate]),
            np.array([params.kappa]), np.array([params.nu_bar]), np.array([params.gamma]),
            np.array([params.rho]), np.array([params.nu0]), cfg,
        )[0]
    ) * option.strike
    return _finalize_price(raw, option)
