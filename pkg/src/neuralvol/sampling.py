"""Latin hypercube sampling and dataset generation for the three learning tasks.

Datasets are column-labeled matrices persisted as CSV (header `name:role`)
with a JSON metadata sidecar recording generator provenance.
"""

from __future__ import annotations

import datetime as _dt
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import cos
from .black_scholes import bs_call_price_vec, intrinsic_call_vec
from .errors import DomainError, FormatError
from .market import OptionSide

TIME_VALUE_FLOOR = 1e-7

BS_WIDE_RANGES = {
    "moneyness": (0.4, 1.6),
    "tau": (0.2, 1.1),
    "rate": (0.02, 0.1),
    "sigma": (0.01, 1.0),
}
BS_NARROW_RANGES = {
    "moneyness": (0.5, 1.5),
    "tau": (0.3, 0.95),
    "rate": (0.03, 0.08),
    "sigma": (0.02, 0.9),
}
IV_RANGES = {
    "moneyness": (0.5, 1.4),
    "tau": (0.05, 1.0),
    "rate": (0.0, 0.1),
    "sigma": (0.05, 1.0),
}
HESTON_RANGES = {
    "moneyness": (0.6, 1.4),
    "tau": (0.1, 1.4),
    "rate": (0.0, 0.1),
    "rho": (-0.95, 0.0),
    "kappa": (0.0, 2.0),
    "nu_bar": (0.0, 0.5),
    "gamma": (0.0, 0.5),
    "nu0": (0.05, 0.5),
}


@dataclass(frozen=True)
class ParamSpace:
    """Named sampling dimensions, each with an inclusive [low, high] range."""

    ranges: dict[str, tuple[float, float]]

    def __post_init__(self) -> None:
        if not self.ranges:
            raise DomainError("parameter space must have at least one dimension")
        for name, (lo, hi) in self.ranges.items():
            if not lo < hi:
                raise DomainError(f"dimension {name!r}: low {lo} must be < high {hi}")

    @property
    def names(self) -> list[str]:
        return list(self.ranges)

    @property
    def bounds(self) -> np.ndarray:
        return np.array(list(self.ranges.values()), dtype=float)


@dataclass
class Dataset:
    """Row-major sample matrix with per-column roles and provenance metadata."""

    columns: list[str]
    roles: list[str]
    data: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.columns) != len(self.roles):
            raise DomainError("columns and roles must have equal length")
        if self.data.ndim != 2 or self.data.shape[1] != len(self.columns):
            raise DomainError("data shape inconsistent with column count")

    def __len__(self) -> int:
        return self.data.shape[0]

    def _cols(self, role: str) -> list[int]:
        return [i for i, r in enumerate(self.roles) if r == role]

    @property
    def input_columns(self) -> list[str]:
        return [self.columns[i] for i in self._cols("input")]

    @property
    def output_columns(self) -> list[str]:
        return [self.columns[i] for i in self._cols("output")]

    def inputs(self) -> np.ndarray:
        return self.data[:, self._cols("input")]

    def outputs(self) -> np.ndarray:
        return self.data[:, self._cols("output")]

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    def take(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            columns=list(self.columns), roles=list(self.roles),
            data=self.data[idx], meta=dict(self.meta),
        )

    def to_csv(self, path: str | os.PathLike) -> None:
        """Write the dataset plus its `<path>.meta.json` sidecar atomically."""
        path = os.fspath(path)
        header = ",".join(f"{c}:{r}" for c, r in zip(self.columns, self.roles))
        tmp = path + ".tmp"
        np.savetxt(tmp, self.data, fmt="%.17g", delimiter=",", header=header,
                   comments="", newline="\n")
        os.replace(tmp, path)
        meta = dict(self.meta)
        meta.setdefault("row_count", len(self))
        meta.setdefault("created_at", _dt.datetime.now(_dt.timezone.utc).isoformat())
        meta_tmp = path + ".meta.json.tmp"
        with open(meta_tmp, "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(meta_tmp, path + ".meta.json")

    @classmethod
    def from_csv(cls, path: str | os.PathLike) -> "Dataset":
        path = os.fspath(path)
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
        columns, roles = [], []
        for part in header.split(","):
            if ":" not in part:
                raise FormatError(f"malformed header column {part!r}; expected name:role")
            name, role = part.rsplit(":", 1)
            if role not in ("input", "output"):
                raise FormatError(f"unknown column role {role!r}")
            columns.append(name)
            roles.append(role)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        meta = {}
        meta_path = path + ".meta.json"
        if os.path.exists(meta_path):
            with open(meta_path, "r", encoding="utf-8") as fh:
                meta = json.load(fh)
        return cls(columns=columns, roles=roles, data=data, meta=meta)


@dataclass(frozen=True)
class SplitSpec:
    train: float
    validation: float
    test: float
    seed: int = 0

    def __post_init__(self) -> None:
        for f in (self.train, self.validation, self.test):
            if f < 0:
                raise DomainError("split fractions must be non-negative")
        if abs(self.train + self.validation + self.test - 1.0) > 1e-12:
            raise DomainError("split fractions must sum to 1")


def lhs_sample(n: int, space: ParamSpace, seed: int) -> np.ndarray:
    """Latin hypercube: one uniform draw per equal-width stratum per dimension,
    with independently permuted strata. Deterministic for fixed (n, space, seed)."""
    if n < 1:
        raise DomainError(f"sample count must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    bounds = space.bounds
    dims = bounds.shape[0]
    unit = np.empty((n, dims))
    for j in range(dims):
        strata = rng.permutation(n)
        unit[:, j] = (strata + rng.uniform(size=n)) / n
    return bounds[:, 0] + unit * (bounds[:, 1] - bounds[:, 0])


def _sample_until(n: int, space: ParamSpace, seed: int, accept) -> np.ndarray:
    """LHS-sample with 10% oversampling, filter, trim to n rows exactly.

    `accept(samples) -> bool mask`. Grows the oversampling factor (same seed,
    fresh stratification) if the filter removes more than expected.
    """
    factor = 1.1
    for _ in range(8):
        raw = lhs_sample(max(int(np.ceil(n * factor)), n), space, seed)
        kept = raw[accept(raw)]
        if len(kept) >= n:
            return kept[:n]
        factor *= 1.5
    raise DomainError("filter rejected too many rows to reach the requested count")


def generate_bs_dataset(n: int, range_variant: str = "wide", seed: int = 0) -> Dataset:
    """Black-Scholes learning set: inputs {m, tau, r, sigma}, output V/K."""
    variants = {"wide": BS_WIDE_RANGES, "narrow": BS_NARROW_RANGES}
    try:
        ranges = variants[range_variant]
    except KeyError:
        raise DomainError(
            f"unknown variant {range_variant!r}; expected 'wide' or 'narrow'"
        ) from None
    space = ParamSpace(ranges)
    samples = lhs_sample(n, space, seed)
    m, tau, r, sigma = samples.T
    scaled_price = bs_call_price_vec(m, tau, r, sigma)
    data = np.column_stack([samples, scaled_price])
    return Dataset(
        columns=["moneyness", "tau", "rate", "sigma", "scaled_price"],
        roles=["input", "input", "input", "input", "output"],
        data=data,
        meta={
            "generator": "black_scholes",
            "variant": range_variant,
            "seed": seed,
            "ranges": {k: list(v) for k, v in ranges.items()},
            "transforms": [],
        },
    )


def generate_iv_dataset(n: int, seed: int = 0, unscaled: bool = False) -> Dataset:
    """Implied-volatility learning set generated in the forward direction.

    Default inputs are {m, tau, r, log(time_value/K)} with the output sigma;
    rows with time value below 1e-7 are dropped. With `unscaled`, the raw
    scaled price V/K replaces the log time value (comparison baseline).
    """
    space = ParamSpace(IV_RANGES)

    def accept(raw: np.ndarray) -> np.ndarray:
        m, tau, r, sigma = raw.T
        v = bs_call_price_vec(m, tau, r, sigma)
        tv = v - intrinsic_call_vec(m, tau, r)
        return tv >= TIME_VALUE_FLOOR

    samples = _sample_until(n, space, seed, accept)
    m, tau, r, sigma = samples.T
    v = bs_call_price_vec(m, tau, r, sigma)
    if unscaled:
        feature = v
        feature_name = "scaled_price"
        transforms = []
    else:
        tv = v - intrinsic_call_vec(m, tau, r)
        feature = np.log(tv)
        feature_name = "log_time_value"
        transforms = ["time_value", "log"]
    data = np.column_stack([m, tau, r, feature, sigma])
    return Dataset(
        columns=["moneyness", "tau", "rate", feature_name, "sigma"],
        roles=["input", "input", "input", "input", "output"],
        data=data,
        meta={
            "generator": "implied_vol",
            "seed": seed,
            "unscaled": unscaled,
            "ranges": {k: list(v_) for k, v_ in IV_RANGES.items()},
            "transforms": transforms,
            "time_value_floor": TIME_VALUE_FLOOR,
        },
    )


def generate_heston_dataset(
    n: int, seed: int = 0, cos_cfg: cos.CosConfig | None = None
) -> Dataset:
    """Heston learning set: 8 LHS inputs, COS call price output (K = 1)."""
    cfg = cos_cfg or cos.CosConfig()
    space = ParamSpace(HESTON_RANGES)
    samples = lhs_sample(n, space, seed)
    m, tau, r, rho, kappa, nu_bar, gamma, nu0 = samples.T
    prices = cos.heston_price_vec(
        OptionSide.CALL, m, tau, r, kappa, nu_bar, gamma, rho, nu0, cfg
    )
    # No-arbitrage screen: reject rows whose price leaves the attainable band.
    intrinsic = np.maximum(m - np.exp(-r * tau), 0.0)
    ok = (prices >= np.maximum(intrinsic - 1e-10, 0.0)) & (prices <= m + 1e-10)
    rejected = int((~ok).sum())
    data = np.column_stack([samples[ok], prices[ok]])
    return Dataset(
        columns=["moneyness", "tau", "rate", "rho", "kappa", "nu_bar", "gamma", "nu0", "price"],
        roles=["input"] * 8 + ["output"],
        data=data,
        meta={
            "generator": "heston_cos",
            "seed": seed,
            "ranges": {k: list(v) for k, v in HESTON_RANGES.items()},
            "transforms": [],
            "cos_n_terms": cfg.n_terms,
            "cos_trunc_width": cfg.trunc_width,
            "rejected_rows": rejected,
        },
    )


def split(dataset: Dataset, spec: SplitSpec):
    """Seeded, disjoint, exhaustive partition into (train, validation, test).

    The validation element is None when its fraction is zero.
    """
    n = len(dataset)
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(n)
    n_train = int(np.floor(spec.train * n))
    n_val = int(np.floor(spec.validation * n))
    n_test = n - n_train - n_val
    if (spec.train > 0 and n_train == 0) or (spec.validation > 0 and n_val == 0) or (
        spec.test > 0 and n_test == 0
    ):
        raise DomainError("a requested partition would be empty")
    train = dataset.take(order[:n_train])
    val = dataset.take(order[n_train : n_train + n_val]) if n_val else None
    test = dataset.take(order[n_train + n_val :])
    return train, val, test


def subset_for_size_study(train: Dataset, factor: float, base: int = 24300) -> Dataset:
    """First floor(factor * base) rows of the (already shuffled) training set."""
    size = int(np.floor(factor * base))
    if size < 1 or size > len(train):
        raise DomainError(
            f"requested subset of {size} rows but training set has {len(train)}"
        )
    return train.take(np.arange(size))
