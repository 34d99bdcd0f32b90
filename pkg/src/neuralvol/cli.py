"""Command-line entry point for reproducible, seeded pricing and training runs.

Every command writes its outputs atomically and drops a `<out>.manifest.json`
recording the fully resolved configuration, so `pricer replay MANIFEST`
reproduces the run bit-for-bit (timing sidecars excepted).

Exit codes: 0 success, 2 configuration error, 3 IO error, 4 numerical failure.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import os
import sys
from importlib import metadata as _metadata

import click

CHAIN_CASES = {
    "1": {"tau_range": (0.3, 1.1), "m_range": (0.7, 1.3)},
    "2": {"tau_range": (0.4, 1.0), "m_range": (0.75, 1.25)},
}

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _version() -> str:
    try:
        return _metadata.version("neuralvol")
    except _metadata.PackageNotFoundError:
        return "unknown"


def _write_json(path: str, doc: dict) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _write_csv(path: str, header: list[str], rows) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    os.replace(tmp, path)


def _write_manifest(command: str, args: dict, inputs: list[str], outputs: list[str]) -> str:
    path = outputs[0] + ".manifest.json"
    _write_json(path, {
        "command": command,
        "args": args,
        "inputs": inputs,
        "outputs": outputs,
        "tool_version": _version(),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    })
    return path


def _execute(command: str, runner, args: dict) -> None:
    """Run a command body, mapping error families onto the exit-code scheme."""
    from .errors import (
        BoundsViolation, DomainError, FormatError, NonFiniteLoss, NumericalOverflow,
    )
    try:
        inputs, outputs = runner(**args)
    except (DomainError, FormatError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except OSError as exc:
        click.echo(f"io error: {exc}", err=True)
        sys.exit(EXIT_IO)
    except NonFiniteLoss as exc:
        click.echo(f"numerical failure: non-finite loss at step {exc.step}", err=True)
        sys.exit(EXIT_NUMERIC)
    except (BoundsViolation, NumericalOverflow, FloatingPointError) as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(EXIT_NUMERIC)
    manifest = _write_manifest(command, args, inputs, outputs)
    click.echo(f"wrote {', '.join(outputs)} (manifest {manifest})")


def _load_model(path: str):
    from . import mlp
    return mlp.load_model(path)


def _require_columns(dataset, names: list[str]) -> None:
    from .errors import DomainError
    for name in names:
        if name not in dataset.columns:
            raise DomainError(f"dataset is missing required column {name!r}")


# command bodies; each returns (input_paths, output_paths)

def _run_generate(model, variant, n, seed, unscaled, out):
    from . import sampling
    if model == "bs":
        ds = sampling.generate_bs_dataset(n, variant, seed)
    elif model == "iv":
        ds = sampling.generate_iv_dataset(n, seed, unscaled=unscaled)
    else:
        ds = sampling.generate_heston_dataset(n, seed)
    ds.to_csv(out)
    return [], [out, out + ".meta.json"]


def _run_train(data, config, out, epochs, batch_size, seed):
    from .errors import FormatError
    from .estimator import MlpRegressor
    from .sampling import Dataset
    try:
        with open(config, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid config file {config}: {exc}") from exc
    # flags override file values
    if epochs is not None:
        cfg["epochs"] = epochs
    if batch_size is not None:
        cfg["batch_size"] = batch_size
    if seed is not None:
        cfg["random_state"] = seed
    ds = Dataset.from_csv(data)
    required = cfg.pop("input_columns", None)
    if required:
        _require_columns(ds, required)
    hidden = tuple(cfg.pop("hidden_layer_sizes", (100, 100, 100, 100)))
    est = MlpRegressor(hidden_layer_sizes=hidden, **cfg)
    est.fit(ds.inputs(), ds.outputs())
    est.save(out)
    est.history_.export_csv(out + ".history.csv")
    return [data, config], [out, out + ".history.csv"]


def _run_eval(model, data, out):
    from . import pipeline
    from .sampling import Dataset
    net = _load_model(model)
    ds = Dataset.from_csv(data)
    report = pipeline.evaluate(net, ds.inputs(), ds.outputs())
    _write_json(out, report.to_dict())
    click.echo(json.dumps(report.to_dict(), sort_keys=True))
    return [model, data], [out]


def _run_bench_iv(n, methods, model, out, warmup, runs):
    from . import pipeline
    from .errors import DomainError
    method_list = tuple(m.strip() for m in methods.split(",") if m.strip())
    iv_net = _load_model(model) if model else None
    if "ann" in method_list and iv_net is None:
        raise DomainError("method 'ann' requires --model pointing at an IV network")
    result = pipeline.bench_iv_methods(
        n=n, methods=method_list, iv_model=iv_net, warmup=warmup, runs=runs
    )
    # deterministic table; wall-clock readings go to the timing sidecar
    _write_csv(
        out,
        ["method", "failures", "mae", "max_abs_error", "total_function_evals"],
        [[r["method"], r["failures"], repr(r["mae"]), repr(r["max_abs_error"]),
          r["total_function_evals"]] for r in result["rows"]],
    )
    _write_json(out + ".timing.json", {
        r["method"]: {k: v for k, v in r.items() if "seconds" in k}
        for r in result["rows"]
    })
    return ([model] if model else []), [out, out + ".timing.json"]


def _run_size_study(data, test_data, factors, base, repeats, epochs, neurons, seed, out):
    from . import pipeline
    from .sampling import Dataset
    train_ds = Dataset.from_csv(data)
    test_ds = Dataset.from_csv(test_data)
    factor_list = tuple(float(f) for f in factors.split(","))
    candidate = pipeline.SearchCandidate(neurons=neurons)
    results = pipeline.data_size_study(
        train_ds.inputs(), train_ds.outputs(), test_ds.inputs(), test_ds.outputs(),
        factors=factor_list, base=base, repeats=repeats, candidate=candidate,
        epochs=epochs, seed=seed,
    )
    _write_csv(
        out,
        ["factor", "size", "mse_mean", "mse_std", "r2_mean", "r2_std"],
        [[f, r["size"], repr(r["mse_mean"]), repr(r["mse_std"]),
          repr(r["r2_mean"]), repr(r["r2_std"])] for f, r in results.items()],
    )
    return [data, test_data], [out]


def _run_lr_range(data, steps, batch_size, optimizer, neurons, seed, out):
    from . import mlp, pipeline
    from .sampling import Dataset
    ds = Dataset.from_csv(data)
    X, y = ds.inputs(), ds.outputs()
    model = mlp.init([X.shape[1], neurons, neurons, y.shape[1]], "relu", seed=seed)
    curve, steepest, divergence = pipeline.lr_range_test(
        model, X, y, steps=steps, batch_size=batch_size, optimizer=optimizer, seed=seed
    )
    _write_csv(out, ["eta", "smoothed_loss"],
               [[repr(e), repr(l)] for e, l in curve])
    _write_json(out + ".summary.json",
                {"eta_steepest": steepest, "eta_divergence": divergence})
    return [data], [out, out + ".summary.json"]


def _run_search(data, trials, k, epochs, seed, out):
    from dataclasses import asdict
    from . import pipeline
    from .sampling import Dataset
    ds = Dataset.from_csv(data)
    ranked, summary = pipeline.random_search(
        pipeline.SearchSpace(), trials, ds.inputs(), ds.outputs(),
        seed=seed, k=k, epochs=epochs,
    )
    _write_json(out, {
        "ranked": [
            {"trial": r["trial"], "score": r["score"], **asdict(r["candidate"])}
            for r in ranked
        ],
        "top5_summary": summary,
    })
    return [data], [out]


def _parse_heston(spec: str):
    from .errors import DomainError
    from .market import HestonParams
    fields = {}
    for part in spec.split(","):
        if "=" not in part:
            raise DomainError(f"malformed parameter {part!r}; expected name=value")
        name, value = part.split("=", 1)
        fields[name.strip()] = float(value)
    rate = fields.pop("r", 0.0)
    try:
        params = HestonParams(
            kappa=fields.pop("kappa"), nu_bar=fields.pop("nubar"),
            gamma=fields.pop("gamma"), rho=fields.pop("rho"), nu0=fields.pop("nu0"),
        )
    except KeyError as exc:
        raise DomainError(f"missing Heston parameter {exc.args[0]!r}") from None
    if fields:
        raise DomainError(f"unknown Heston parameters {sorted(fields)}")
    return params, rate


def _parse_grid(spec: str):
    import numpy as np
    from .errors import DomainError
    parts = spec.split(":")
    if len(parts) != 3:
        raise DomainError(f"grid {spec!r} must be low:high:count")
    lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    if count < 2 or not lo < hi:
        raise DomainError(f"grid {spec!r} needs low < high and count >= 2")
    return np.linspace(lo, hi, count)


def _run_surface(model, heston, m_grid, tau_grid, out):
    from . import pipeline
    iv_net = _load_model(model)
    params, rate = _parse_heston(heston)
    mg, tg = _parse_grid(m_grid), _parse_grid(tau_grid)
    result = pipeline.iv_surface(iv_net, params, rate, mg, tg)
    rows = []
    for i, tau in enumerate(tg):
        for j, m in enumerate(mg):
            rows.append([
                repr(float(tau)), repr(float(m)),
                repr(float(result["ann_surface"][i, j])),
                repr(float(result["truth_surface"][i, j])),
                repr(float(result["prices"][i, j])),
            ])
    _write_csv(out, ["tau", "moneyness", "ann_vol", "brent_vol", "cos_price"], rows)
    _write_json(out + ".summary.json", {
        "max_abs_deviation": result["max_abs_deviation"],
        "evaluated": result["evaluated"],
    })
    click.echo(f"max abs deviation vs Brent: {result['max_abs_deviation']:.3e}")
    return [model], [out, out + ".summary.json"]


def _run_chain(heston_model, iv_model, n, case, seed, out):
    from . import pipeline
    ranges = CHAIN_CASES[case]
    result = pipeline.heston_iv_chain(
        _load_model(heston_model), _load_model(iv_model), n,
        tau_range=ranges["tau_range"], m_range=ranges["m_range"], seed=seed,
    )
    doc = {k: v for k, v in result.items() if k != "report"}
    doc["report"] = result["report"].to_dict()
    doc["case"] = case
    _write_json(out, doc)
    click.echo(f"case {case}: rmse {result['report'].rmse:.3e} "
               f"over {result['evaluated']} points")
    return [heston_model, iv_model], [out]


_RUNNERS = {
    "generate": _run_generate,
    "train": _run_train,
    "eval": _run_eval,
    "bench-iv": _run_bench_iv,
    "size-study": _run_size_study,
    "lr-range": _run_lr_range,
    "search": _run_search,
    "surface": _run_surface,
    "chain": _run_chain,
}


@click.group()
@click.option("--threads", type=int, default=None,
              help="Cap numeric worker threads (falls back to PRICER_THREADS).")
def main(threads):
    """Option-pricing toolkit: data generation, training, and benchmarks."""
    if threads is None:
        env = os.environ.get("PRICER_THREADS")
        threads = int(env) if env else None
    if threads is not None:
        if threads < 1:
            click.echo("error: --threads must be >= 1", err=True)
            sys.exit(EXIT_CONFIG)
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)


@main.command()
@click.option("--model", type=click.Choice(["bs", "iv", "heston"]), required=True)
@click.option("--variant", type=click.Choice(["wide", "narrow"]), default="wide",
              show_default=True, help="Sampling ranges (bs only).")
@click.option("--n", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--unscaled", is_flag=True,
              help="IV dataset: keep raw prices instead of log time values.")
@click.option("--out", type=click.Path(), required=True)
def generate(**kwargs):
    """Generate a labeled training dataset as CSV plus metadata sidecar."""
    _execute("generate", _run_generate, kwargs)


@main.command()
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--config", type=click.Path(exists=True), required=True,
              help="JSON file mirroring the regressor parameters.")
@click.option("--out", type=click.Path(), required=True)
@click.option("--epochs", type=int, default=None, help="Override config value.")
@click.option("--batch-size", type=int, default=None, help="Override config value.")
@click.option("--seed", type=int, default=None, help="Override config value.")
def train(**kwargs):
    """Train a network on a dataset; writes model JSON and history CSV."""
    _execute("train", _run_train, kwargs)


@main.command("eval")
@click.option("--model", type=click.Path(exists=True), required=True)
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
def eval_cmd(**kwargs):
    """Score a saved model on a dataset; writes a metrics JSON report."""
    _execute("eval", _run_eval, kwargs)


@main.command("bench-iv")
@click.option("--n", type=int, default=20000, show_default=True)
@click.option("--methods", default="newton,brent,secant,bisection,ann",
              show_default=True)
@click.option("--model", type=click.Path(exists=True), default=None,
              help="IV network (required when methods include 'ann').")
@click.option("--out", type=click.Path(), required=True)
@click.option("--warmup", type=int, default=3, show_default=True)
@click.option("--runs", type=int, default=5, show_default=True)
def bench_iv(**kwargs):
    """Compare implied-volatility methods on the fixed 20k-option suite."""
    _execute("bench-iv", _run_bench_iv, kwargs)


@main.command("size-study")
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--test-data", type=click.Path(exists=True), required=True)
@click.option("--factors", default="0.125,0.25,0.5,1", show_default=True)
@click.option("--base", type=int, default=24300, show_default=True)
@click.option("--repeats", type=int, default=3, show_default=True)
@click.option("--epochs", type=int, default=200, show_default=True)
@click.option("--neurons", type=int, default=400, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def size_study(**kwargs):
    """Accuracy vs training-set size over seeded repeats."""
    _execute("size-study", _run_size_study, kwargs)


@main.command("lr-range")
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--steps", type=int, default=100, show_default=True)
@click.option("--batch-size", type=int, default=256, show_default=True)
@click.option("--optimizer", default="adam", show_default=True)
@click.option("--neurons", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def lr_range(**kwargs):
    """Learning-rate range test: geometric ramp with smoothed-loss curve."""
    _execute("lr-range", _run_lr_range, kwargs)


@main.command()
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--trials", type=int, default=10, show_default=True)
@click.option("--k", type=int, default=3, show_default=True)
@click.option("--epochs", type=int, default=200, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def search(**kwargs):
    """Random hyperparameter search scored by k-fold cross-validation."""
    _execute("search", _run_search, kwargs)


@main.command()
@click.option("--model", type=click.Path(exists=True), required=True)
@click.option("--heston", required=True,
              help="Comma list, e.g. rho=-0.05,kappa=1.5,gamma=0.3,nubar=0.1,nu0=0.1,r=0.02")
@click.option("--m-grid", default="0.7:1.3:25", show_default=True,
              help="Moneyness grid low:high:count.")
@click.option("--tau-grid", default="0.5:1.0:11", show_default=True,
              help="Maturity grid low:high:count.")
@click.option("--out", type=click.Path(), required=True)
def surface(**kwargs):
    """Implied-volatility surface from the IV network vs Brent ground truth."""
    _execute("surface", _run_surface, kwargs)


@main.command()
@click.option("--heston-model", type=click.Path(exists=True), required=True)
@click.option("--iv-model", type=click.Path(exists=True), required=True)
@click.option("--n", type=int, default=10000, show_default=True)
@click.option("--case", type=click.Choice(["1", "2"]), default="1", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def chain(**kwargs):
    """Chained inference: Heston network price into the IV network."""
    _execute("chain", _run_chain, kwargs)


@main.command()
@click.argument("manifest", type=click.Path(exists=True))
def replay(manifest):
    """Re-execute a command from its manifest; outputs are reproduced exactly."""
    from .errors import FormatError
    try:
        with open(manifest, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        command = doc["command"]
        args = doc["args"]
        runner = _RUNNERS[command]
    except (json.JSONDecodeError, KeyError) as exc:
        click.echo(f"error: malformed manifest {manifest}: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    _execute(command, runner, args)


if __name__ == "__main__":
    main()
