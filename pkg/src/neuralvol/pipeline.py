"""Training loops, model selection, and the surrogate experiments.

Covers mini-batch training with schedules, k-fold cross-validation, random
hyperparameter search, the learning-rate range test, the data-size study,
the implied-volatility solver benchmark, the chained Heston-to-IV inference
path, and the implied-volatility surface experiment.
"""

from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import cos, mlp
from .black_scholes import call_price_scalar, intrinsic_call_vec
from .errors import DomainError, EmptyInput, NonFiniteLoss, ShapeMismatch
from .implied_vol import IvProblem, SolverConfig, brent_iv, solve_iv_batch
from .market import EuropeanOption, HestonParams, OptionSide
from .sampling import HESTON_RANGES, TIME_VALUE_FLOOR, ParamSpace, lhs_sample

MAPE_FLOOR = 1e-8


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 1024
    optimizer: str = "adam"
    schedule: mlp.LrSchedule = field(
        default_factory=lambda: mlp.LrSchedule("exponential", eta=1e-3, eta_final=1e-5)
    )
    seed: int = 0
    shuffle: bool = True
    dropout: float = 0.0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise DomainError("epochs and batch_size must be >= 1")
        if not (0.0 <= self.dropout < 1.0):
            raise DomainError("dropout rate must lie in [0, 1)")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    lr_per_step: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)

    def export_csv(self, path: str | os.PathLike) -> None:
        steps_per_epoch = max(len(self.lr_per_step) // max(len(self.train_loss), 1), 1)
        tmp = os.fspath(path) + ".tmp"
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for e, (tr, vl) in enumerate(zip(self.train_loss, self.val_loss)):
                lr = self.lr_per_step[min(e * steps_per_epoch, len(self.lr_per_step) - 1)]
                writer.writerow([e, repr(tr), repr(vl), repr(lr)])
        os.replace(tmp, os.fspath(path))


@dataclass(frozen=True)
class MetricsReport:
    mse: float
    rmse: float
    mae: float
    mape: float
    r2: float
    n: int
    max_abs_error: float
    mape_excluded: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def metrics_report(y_true: np.ndarray, y_pred: np.ndarray) -> MetricsReport:
    y_true = np.asarray(y_true, dtype=float).ravel()
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    if y_true.size == 0:
        raise EmptyInput("metrics require at least one sample")
    if y_true.shape != y_pred.shape:
        raise ShapeMismatch("prediction/target length mismatch")
    err = y_pred - y_true
    mse = float(np.mean(err * err))
    mae = float(np.mean(np.abs(err)))
    usable = np.abs(y_true) > MAPE_FLOOR
    mape = float(np.mean(np.abs(err[usable]) / np.abs(y_true[usable]))) if usable.any() else 0.0
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    r2 = 1.0 - float(np.sum(err * err)) / ss_tot if ss_tot > 0 else (1.0 if mse == 0 else 0.0)
    return MetricsReport(
        mse=mse, rmse=math.sqrt(mse), mae=mae, mape=mape, r2=r2,
        n=int(y_true.size), max_abs_error=float(np.max(np.abs(err))),
        mape_excluded=int((~usable).sum()),
    )


def _as_2d(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return y[:, None] if y.ndim == 1 else y


def train(
    model: mlp.MlpModel,
    X: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
    X_val: np.ndarray | None = None,
    y_val: np.ndarray | None = None,
) -> tuple[mlp.MlpModel, TrainHistory]:
    """Mini-batch training with per-epoch seeded shuffling.

    When no validation set is supplied, 10% of the training partition is
    held out for the validation-loss history.
    """
    X = np.asarray(X, dtype=float)
    y = _as_2d(y)
    if X.shape[0] != y.shape[0]:
        raise ShapeMismatch("row count mismatch between inputs and targets")
    rng = np.random.default_rng(config.seed)
    if X_val is None:
        n_val = max(int(0.1 * X.shape[0]), 1)
        order = rng.permutation(X.shape[0])
        X_val, y_val = X[order[:n_val]], y[order[:n_val]]
        X, y = X[order[n_val:]], y[order[n_val:]]
    else:
        X_val = np.asarray(X_val, dtype=float)
        y_val = _as_2d(y_val)

    n = X.shape[0]
    steps_per_epoch = max(n // config.batch_size, 1)
    schedule = config.schedule
    if schedule.kind == "exponential" and schedule.total_steps <= 1:
        schedule = mlp.LrSchedule(
            "exponential", eta=schedule.eta, eta_final=schedule.eta_final,
            total_steps=steps_per_epoch * config.epochs,
        )
    opt = mlp.make_optimizer(config.optimizer, model)
    history = TrainHistory()
    global_step = 0
    for _epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        batch_losses = []
        for b in range(steps_per_epoch):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            xb, yb = X[idx], y[idx]
            zs, activs, masks = mlp._forward_cached(
                model, xb, dropout_rate=config.dropout, rng=rng if config.dropout > 0 else None
            )
            batch_loss = mlp.loss_mse(activs[-1], yb)
            if not math.isfinite(batch_loss):
                raise NonFiniteLoss(global_step)
            grads = mlp._backprop_from_cache(model, xb, yb, zs, activs, masks)
            lr = mlp.lr_at(schedule, global_step, steps_per_epoch)
            mlp.step(model, grads, opt, lr)
            history.lr_per_step.append(lr)
            batch_losses.append(batch_loss)
            global_step += 1
        history.train_loss.append(float(np.mean(batch_losses)))
        val_pred = mlp.forward_batch(model, X_val)
        history.val_loss.append(mlp.loss_mse(val_pred, y_val))
        history.epoch_seconds.append(time.perf_counter() - t0)
    return model, history


def evaluate(model: mlp.MlpModel, X: np.ndarray, y: np.ndarray) -> MetricsReport:
    pred = mlp.forward_batch(model, np.asarray(X, dtype=float))
    return metrics_report(_as_2d(y), pred)


@dataclass(frozen=True)
class SearchCandidate:
    neurons: int = 400
    activation: str = "relu"
    init: str = "glorot_uniform"
    optimizer: str = "adam"
    batch_size: int = 1024
    dropout: float = 0.0
    hidden_layers: int = 4

    def build_model(self, n_inputs: int, n_outputs: int, seed: int) -> mlp.MlpModel:
        sizes = [n_inputs] + [self.neurons] * self.hidden_layers + [n_outputs]
        return mlp.init(sizes, self.activation, self.init, seed=seed)

    def build_config(self, epochs: int, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=epochs, batch_size=self.batch_size, optimizer=self.optimizer,
            seed=seed, dropout=self.dropout,
        )


@dataclass(frozen=True)
class SearchSpace:
    activations: tuple[str, ...] = ("relu", "tanh", "sigmoid", "elu")
    dropout_range: tuple[float, float] = (0.0, 0.2)
    neurons_range: tuple[int, int] = (200, 600)
    inits: tuple[str, ...] = ("uniform", "glorot_uniform", "he_uniform")
    optimizers: tuple[str, ...] = ("sgd", "rmsprop", "adam")
    batch_size_range: tuple[int, int] = (256, 3000)
    hidden_layers: int = 4

    def sample(self, rng: np.random.Generator) -> SearchCandidate:
        lo, hi = self.batch_size_range
        batch = int(round(math.exp(rng.uniform(math.log(lo), math.log(hi)))))
        return SearchCandidate(
            neurons=int(rng.integers(self.neurons_range[0], self.neurons_range[1] + 1)),
            activation=str(rng.choice(self.activations)),
            init=str(rng.choice(self.inits)),
            optimizer=str(rng.choice(self.optimizers)),
            batch_size=min(max(batch, lo), hi),
            dropout=float(rng.uniform(*self.dropout_range)),
            hidden_layers=self.hidden_layers,
        )


def kfold_cv(
    X: np.ndarray,
    y: np.ndarray,
    k: int,
    candidate: SearchCandidate,
    epochs: int,
    seed: int = 0,
) -> float:
    """Mean held-out-fold MSE over k train/validate rotations."""
    X = np.asarray(X, dtype=float)
    y = _as_2d(y)
    n = X.shape[0]
    if k < 2 or k > n:
        raise DomainError(f"k must lie in [2, {n}], got {k}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    folds = np.array_split(order, k)
    scores = []
    for i, fold in enumerate(folds):
        train_idx = np.concatenate([f for j, f in enumerate(folds) if j != i])
        model = candidate.build_model(X.shape[1], y.shape[1], seed=seed + i)
        config = candidate.build_config(epochs, seed=seed + i)
        model, _ = train(model, X[train_idx], y[train_idx], config,
                         X_val=X[fold], y_val=y[fold])
        scores.append(evaluate(model, X[fold], y[fold]).mse)
    return float(np.mean(scores))


def _top5_summary(ranked: list[dict]) -> dict:
    """Aggregate the best five candidates: mean for numeric dimensions, mode
    for categorical ones."""
    top = [r["candidate"] for r in ranked[:5]]
    def mode(vals):
        return max(set(vals), key=vals.count)
    return {
        "neurons": int(round(np.mean([c.neurons for c in top]))),
        "batch_size": int(round(np.mean([c.batch_size for c in top]))),
        "dropout": float(np.mean([c.dropout for c in top])),
        "activation": mode([c.activation for c in top]),
        "init": mode([c.init for c in top]),
        "optimizer": mode([c.optimizer for c in top]),
        "hidden_layers": top[0].hidden_layers,
    }


def random_search(
    space: SearchSpace,
    trials: int,
    X: np.ndarray,
    y: np.ndarray,
    seed: int = 0,
    k: int = 3,
    epochs: int = 200,
) -> tuple[list[dict], dict]:
    """Uniformly sampled candidates scored by k-fold CV, ranked ascending.

    A failed trial scores +inf and ranks last. Returns (ranked, top5_summary).
    """
    if trials < 1:
        raise DomainError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    results = []
    for t in range(trials):
        candidate = space.sample(rng)
        try:
            score = kfold_cv(X, y, k, candidate, epochs, seed=seed + 1000 * t)
        except (NonFiniteLoss, DomainError):
            score = math.inf
        results.append({"candidate": candidate, "score": score, "trial": t})
    ranked = sorted(results, key=lambda r: r["score"])
    return ranked, _top5_summary(ranked)


def lr_range_test(
    model: mlp.MlpModel,
    X: np.ndarray,
    y: np.ndarray,
    eta_start: float = 1e-7,
    eta_end: float = 1.0,
    steps: int = 100,
    batch_size: int = 256,
    optimizer: str = "adam",
    seed: int = 0,
    smoothing: float = 0.98,
    divergence_factor: float = 4.0,
):
    """Geometric learning-rate ramp recording smoothed training loss.

    Returns (curve, eta_steepest, eta_divergence) where curve is a list of
    (eta, smoothed_loss). The ramp ends early at divergence; a non-finite
    loss IS the divergence point, not an error.
    """
    if steps < 10:
        raise DomainError("range test needs at least 10 steps")
    X = np.asarray(X, dtype=float)
    y = _as_2d(y)
    model = model.copy()
    rng = np.random.default_rng(seed)
    opt = mlp.make_optimizer(optimizer, model)
    etas = eta_start * (eta_end / eta_start) ** (np.arange(steps) / (steps - 1))
    curve: list[tuple[float, float]] = []
    ema = 0.0
    best = math.inf
    eta_divergence = None
    for i, eta in enumerate(etas):
        idx = rng.integers(0, X.shape[0], size=min(batch_size, X.shape[0]))
        xb, yb = X[idx], y[idx]
        zs, activs, masks = mlp._forward_cached(model, xb)
        loss = mlp.loss_mse(activs[-1], yb)
        if not math.isfinite(loss):
            eta_divergence = float(eta)
            break
        ema = smoothing * ema + (1.0 - smoothing) * loss
        smoothed = ema / (1.0 - smoothing ** (i + 1))
        curve.append((float(eta), smoothed))
        best = min(best, smoothed)
        if smoothed > divergence_factor * best:
            eta_divergence = float(eta)
            break
        grads = mlp._backprop_from_cache(model, xb, yb, zs, activs, masks)
        mlp.step(model, grads, opt, float(eta))
    losses = np.array([c[1] for c in curve])
    if len(losses) >= 2:
        slopes = np.diff(np.log(np.maximum(losses, 1e-300))) / np.diff(
            np.log([c[0] for c in curve])
        )
        eta_steepest = float(curve[int(np.argmin(slopes)) + 1][0])
    else:
        eta_steepest = float(etas[0])
    return curve, eta_steepest, eta_divergence


def data_size_study(
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_test: np.ndarray,
    y_test: np.ndarray,
    factors: tuple[float, ...] = (0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0),
    base: int = 24300,
    repeats: int = 5,
    candidate: SearchCandidate | None = None,
    epochs: int = 200,
    seed: int = 0,
) -> dict[float, dict]:
    """Accuracy vs training-set size, averaged over repeated seeds.

    The test set is fixed across factors; each repeat reseeds both the
    initialization and the shuffling.
    """
    candidate = candidate or SearchCandidate()
    X_train = np.asarray(X_train, dtype=float)
    y_train = _as_2d(y_train)
    results: dict[float, dict] = {}
    for factor in factors:
        size = int(math.floor(factor * base))
        if size > X_train.shape[0]:
            raise DomainError(
                f"factor {factor} needs {size} rows, have {X_train.shape[0]}"
            )
        mses, r2s = [], []
        for rep in range(repeats):
            rep_seed = seed + 37 * rep
            model = candidate.build_model(X_train.shape[1], y_train.shape[1], rep_seed)
            config = candidate.build_config(epochs, rep_seed)
            model, _ = train(model, X_train[:size], y_train[:size], config)
            report = evaluate(model, X_test, y_test)
            mses.append(report.mse)
            r2s.append(report.r2)
        results[factor] = {
            "size": size,
            "mse_mean": float(np.mean(mses)),
            "mse_std": float(np.std(mses)),
            "r2_mean": float(np.mean(r2s)),
            "r2_std": float(np.std(r2s)),
        }
    return results


def iv_features(
    moneyness: np.ndarray,
    tau: np.ndarray,
    rate: np.ndarray,
    price: np.ndarray,
    floor: float = TIME_VALUE_FLOOR,
):
    """Map (m, tau, r, V/K) to the IV net inputs (m, tau, r, log time value).

    Returns (features, valid_mask); rows whose time value falls below the
    floor (including prices below intrinsic) are masked out.
    """
    moneyness = np.asarray(moneyness, float)
    tau = np.asarray(tau, float)
    rate = np.asarray(rate, float)
    price = np.asarray(price, float)
    tv = price - intrinsic_call_vec(moneyness, tau, rate)
    valid = tv >= floor
    feat = np.column_stack([
        moneyness, tau, rate, np.log(np.where(valid, tv, 1.0)),
    ])
    return feat, valid


def _benchmark_suite(n: int):
    """The fixed solver-comparison suite: ATM, r=0, half-year, unit strike."""
    option = EuropeanOption(moneyness=1.0, tau=0.5, rate=0.0)
    sigmas = np.linspace(0.01, 0.99, n)
    prices = np.array([call_price_scalar(1.0, 1.0, 0.5, 0.0, s) for s in sigmas])
    problems = [IvProblem(option, float(p)) for p in prices]
    return option, sigmas, prices, problems


def _timed(fn, warmup: int, runs: int) -> tuple[float, object]:
    """Median wall-clock of `runs` measured calls after `warmup` discarded ones."""
    for _ in range(warmup):
        result = fn()
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times)), result


def bench_iv_methods(
    n: int = 20000,
    methods: tuple[str, ...] = ("newton", "brent", "secant", "bisection", "ann"),
    iv_model: mlp.MlpModel | None = None,
    config: SolverConfig | None = None,
    warmup: int = 3,
    runs: int = 5,
) -> dict:
    """Timing / robustness comparison of the root finders and the IV net.

    Every method consumes the identical problem list. The ANN row also
    reports per-option cost at batch size 1 vs 4096 to expose amortization.
    """
    option, sigmas, prices, problems = _benchmark_suite(n)
    config = config or SolverConfig()
    rows = []
    for method in methods:
        if method == "ann":
            if iv_model is None:
                continue
            feats, valid = iv_features(
                np.full(n, option.moneyness), np.full(n, option.tau),
                np.full(n, option.rate), prices,
            )
            total, pred = _timed(lambda: mlp.forward_batch(iv_model, feats), warmup, runs)
            est = pred.ravel()
            err = np.abs(est[valid] - sigmas[valid])
            # amortization probe: per-option cost at batch 1 vs batch 4096
            probe = feats[:256]
            t_single, _ = _timed(
                lambda: [mlp.forward_batch(iv_model, row[None, :]) for row in probe],
                1, 3,
            )
            big = feats[:4096] if n >= 4096 else feats
            t_big, _ = _timed(lambda: mlp.forward_batch(iv_model, big), 1, 3)
            rows.append({
                "method": "ann",
                "total_seconds": total,
                "per_option_seconds": total / n,
                "failures": int((~valid).sum()),
                "mae": float(err.mean()),
                "max_abs_error": float(err.max()),
                "total_function_evals": 0,
                "batch1_per_option_seconds": t_single / len(probe),
                "batch4096_per_option_seconds": t_big / len(big),
            })
            continue
        total, results = _timed(lambda m=method: solve_iv_batch(problems, m, config), warmup, runs)
        conv = np.array([r.converged for r in results])
        est = np.array([r.sigma_star for r in results])
        err = np.abs(est[conv] - sigmas[conv]) if conv.any() else np.array([0.0])
        rows.append({
            "method": method,
            "total_seconds": total,
            "per_option_seconds": total / n,
            "failures": int((~conv).sum()),
            "mae": float(err.mean()),
            "max_abs_error": float(err.max()),
            "total_function_evals": int(sum(r.function_evals for r in results)),
        })
    return {"n": n, "rows": rows}


def _ground_truth_iv(
    moneyness: np.ndarray,
    tau: np.ndarray,
    rate: np.ndarray,
    prices: np.ndarray,
    config: SolverConfig | None = None,
):
    """Brent implied vols for given prices; returns (sigma, converged mask)."""
    config = config or SolverConfig()
    out = np.full(len(prices), np.nan)
    ok = np.zeros(len(prices), dtype=bool)
    for i in range(len(prices)):
        option = EuropeanOption(moneyness=float(moneyness[i]), tau=float(tau[i]),
                                rate=float(rate[i]))
        res = brent_iv(IvProblem(option, float(prices[i])), config)
        if res.converged:
            out[i] = res.sigma_star
            ok[i] = True
    return out, ok


def heston_iv_chain(
    heston_model: mlp.MlpModel,
    iv_model: mlp.MlpModel,
    n: int,
    tau_range: tuple[float, float],
    m_range: tuple[float, float],
    seed: int = 0,
    cos_cfg: cos.CosConfig | None = None,
) -> dict:
    """Chained inference: Heston net price -> squash transform -> IV net,
    scored against COS-price + Brent ground truth on restricted ranges."""
    cfg = cos_cfg or cos.CosConfig()
    ranges = dict(HESTON_RANGES)
    ranges["moneyness"] = m_range
    ranges["tau"] = tau_range
    samples = lhs_sample(n, ParamSpace(ranges), seed)
    m, tau, r, rho, kappa, nu_bar, gamma, nu0 = samples.T

    cos_prices = cos.heston_price_vec(
        OptionSide.CALL, m, tau, r, kappa, nu_bar, gamma, rho, nu0, cfg
    )
    truth, truth_ok = _ground_truth_iv(m, tau, r, cos_prices)

    ann_prices = mlp.forward_batch(heston_model, samples).ravel()
    feats, pred_ok = iv_features(m, tau, r, ann_prices)
    usable = truth_ok & pred_ok
    if not usable.any():
        raise EmptyInput("no chain row has both a valid prediction and ground truth")
    pred = mlp.forward_batch(iv_model, feats[usable]).ravel()
    report = metrics_report(truth[usable], pred)
    return {
        "report": report,
        "n": n,
        "evaluated": int(usable.sum()),
        "excluded_prediction": int((~pred_ok).sum()),
        "excluded_ground_truth": int((~truth_ok).sum()),
    }


def iv_surface(
    iv_model: mlp.MlpModel,
    params: HestonParams,
    rate: float,
    m_grid: np.ndarray,
    tau_grid: np.ndarray,
    cos_cfg: cos.CosConfig | None = None,
) -> dict:
    """IV-net surface vs Brent-on-COS ground truth over an (m, tau) grid."""
    cfg = cos_cfg or cos.CosConfig()
    mm, tt = np.meshgrid(np.asarray(m_grid, float), np.asarray(tau_grid, float))
    m_flat, t_flat = mm.ravel(), tt.ravel()
    r_flat = np.full_like(m_flat, rate)
    prices = cos.heston_price_vec(
        OptionSide.CALL, m_flat, t_flat, r_flat,
        params.kappa, params.nu_bar, params.gamma, params.rho, params.nu0, cfg,
    )
    truth, truth_ok = _ground_truth_iv(m_flat, t_flat, r_flat, prices)
    feats, pred_ok = iv_features(m_flat, t_flat, r_flat, prices)
    pred = np.full_like(truth, np.nan)
    usable = truth_ok & pred_ok
    if usable.any():
        pred[usable] = mlp.forward_batch(iv_model, feats[usable]).ravel()
    dev = np.abs(pred[usable] - truth[usable])
    return {
        "m_grid": np.asarray(m_grid, float),
        "tau_grid": np.asarray(tau_grid, float),
        "ann_surface": pred.reshape(mm.shape),
        "truth_surface": truth.reshape(mm.shape),
        "prices": prices.reshape(mm.shape),
        "max_abs_deviation": float(dev.max()) if usable.any() else math.nan,
        "evaluated": int(usable.sum()),
    }
