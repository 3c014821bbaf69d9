"""Command-line interface.

Each command accepts ``--config FILE.toml`` whose keys mirror the long
option names; explicit flags override file values and unknown keys are
rejected.  Every run writes ``manifest.json`` into its output directory,
including failed runs.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import platform
import sys
import time
import traceback
from pathlib import Path
from typing import Any, Callable

import click
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .errors import ConfigError, DataError, MsvError
from .estimator import fit_msv_full, load_model, model_to_dict, save_model
from .evaluation import DEFAULT_LEVELS, dm_table, mcs
from .experiments import (
    MODEL_NAMES,
    TABLE1_MODELS,
    ModelSettings,
    check_names,
    compare_on_simulations,
    rolling_forecasts,
    settings_dict,
    suggest_lags,
    summarize,
)
from .io import atomic_write_text
from .panels import log_square_transform, read_returns_csv, write_returns_csv
from .penalized_var import SolverOpts
from .penalties import PenaltySpec
from .simulate import DgpSpec, simulate
from .smoother import forecast as msv_forecast
from .smoother import write_covariances_binary, write_covariances_csv

logger = logging.getLogger("sparsemsv")


def _csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x: float) -> str:
    return "" if x is None or not np.isfinite(x) else repr(float(x))


def _jsonable(obj):
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _load_config(ctx: click.Context, param: click.Parameter, value: str | None):
    if value is None:
        return None
    try:
        with open(value, "rb") as fh:
            raw = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise click.BadParameter(f"cannot read config: {exc}") from None
    # keys may be parameter names or long flag names without the dashes
    known: dict[str, str] = {}
    for p in ctx.command.params:
        if p.name == "config":
            continue
        known[p.name] = p.name
        for opt in p.opts:
            if opt.startswith("--"):
                known[opt[2:].replace("-", "_")] = p.name
    cfg = {}
    for key, val in raw.items():
        name = known.get(key.replace("-", "_"))
        if name is None:
            raise click.BadParameter(f"unknown config key {key!r}")
        cfg[name] = val
    ctx.default_map = {**(ctx.default_map or {}), **cfg}
    return value


config_option = click.option(
    "--config", type=click.Path(dir_okay=False), callback=_load_config, is_eager=True,
    expose_value=False, help="TOML file with option values; flags take precedence.",
)
out_option = click.option("--out", "out", required=True, type=click.Path(file_okay=False),
                          help="Output directory (created if missing).")


def _run(command: str, out: str, params: dict[str, Any], body: Callable[[Path, dict], None]) -> None:
    """Run ``body`` and always leave a manifest behind; map errors to exit codes."""
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest: dict[str, Any] = {
        "command": command,
        "config": params,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "outputs": [],
        "status": "running",
    }
    t0 = time.perf_counter()
    code = 0
    try:
        body(out_dir, manifest)
        manifest["status"] = "ok"
    except MsvError as exc:
        code = exc.exit_code
        manifest["status"] = "error"
        manifest["error"] = {"type": type(exc).__name__, "message": str(exc), "exit_code": code}
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
    except OSError as exc:
        code = DataError.exit_code
        manifest["status"] = "error"
        manifest["error"] = {"type": type(exc).__name__, "message": str(exc), "exit_code": code}
        click.echo(f"error: {exc}", err=True)
    except Exception as exc:  # unexpected: still record it
        code = 1
        manifest["status"] = "error"
        manifest["error"] = {"type": type(exc).__name__, "message": str(exc),
                             "traceback": traceback.format_exc(), "exit_code": code}
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
    finally:
        manifest["elapsed_seconds"] = time.perf_counter() - t0
        atomic_write_text(out_dir / "manifest.json", json.dumps(_jsonable(manifest), indent=2, default=str, allow_nan=False))
    if code:
        sys.exit(code)


def _settings(params: dict[str, Any]) -> ModelSettings:
    return ModelSettings(
        lags=params["lags"], lam=params.get("lam"), a=params["a"], b=params["b"],
        n_folds=params["folds"], gap=params.get("gap"), n_lambda=params["n_lambda"],
        cv_rule=params["cv_rule"], tol=params["tol"], max_sweeps=params["max_sweeps"], stability=params["stability"],
        clamp_r=params["clamp_r"], backend=params["backend"], dense_max_dim=params["dense_max_dim"],
    )


def estimation_options(f):
    opts = [
        click.option("--lags", type=click.IntRange(min=1), default=None,
                     help="Step-1 VAR order m (default floor(T^(1/3-eps)))."),
        click.option("--lambda", "lam", type=click.FloatRange(min=0), default=None,
                     help="Fixed per-sample lambda; omit to choose it by hv-block CV."),
        click.option("--a", type=click.FloatRange(min=2, min_open=True), default=3.5, show_default=True),
        click.option("--b", type=click.FloatRange(min=0, min_open=True), default=3.0, show_default=True),
        click.option("--folds", type=click.IntRange(min=2), default=5, show_default=True),
        click.option("--gap", type=click.IntRange(min=0), default=None, help="CV gap (default m)."),
        click.option("--n-lambda", type=click.IntRange(min=1), default=50, show_default=True),
        click.option("--cv-rule", type=click.Choice(["min", "1se"]), default="min", show_default=True,
                     help="CV selection: curve minimum, or largest lambda within one standard error."),
        click.option("--tol", type=click.FloatRange(min=0, min_open=True), default=1e-8, show_default=True),
        click.option("--max-sweeps", type=click.IntRange(min=1), default=1000, show_default=True),
        click.option("--stability", type=click.Choice(["rescale", "error"]), default="rescale",
                     show_default=True),
        click.option("--clamp-r", is_flag=True, default=False, help="Clamp an infeasible step-3 split."),
        click.option("--backend", type=click.Choice(["auto", "dense", "cg"]), default="auto",
                     show_default=True),
        click.option("--dense-max-dim", type=click.IntRange(min=1), default=4000, show_default=True),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


@click.group()
@click.option("-v", "--verbose", count=True, help="Increase log verbosity.")
@click.version_option(__version__, message="%(version)s")
def main(verbose: int) -> None:
    """Sparse multivariate stochastic volatility: estimation, forecasting, evaluation."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command("simulate")
@config_option
@click.option("--kind", type=click.Choice(["march", "bekk", "msv"]), required=True)
@click.option("--p", "p", type=click.IntRange(min=1), required=True)
@click.option("--T", "T", type=click.IntRange(min=2), required=True)
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--q-star", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--burn-in", type=click.IntRange(min=0), default=500, show_default=True)
@out_option
def cmd_simulate(**params) -> None:
    """Simulate a return panel and its true covariance path."""

    def body(out: Path, manifest: dict) -> None:
        spec = DgpSpec(params["kind"], params["p"], params["T"], seed=params["seed"],
                       burn_in=params["burn_in"], q_star=params["q_star"])
        sim = simulate(spec)
        write_returns_csv(sim.panel, out / "returns.csv")
        write_covariances_binary(sim.truth, out / "truth.bin")
        manifest["dgp"] = sim.manifest(spec)
        manifest["outputs"] += ["returns.csv", "truth.bin"]

    _run("simulate", params["out"], params, body)


@main.command("fit")
@config_option
@click.option("--returns", "returns_path", type=click.Path(dir_okay=False), required=True)
@click.option("--penalty", type=click.Choice(["lasso", "scad", "mcp"]), default="scad", show_default=True)
@estimation_options
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True,
              help="Recorded for reproducibility; the fit itself is deterministic.")
@click.option("--smoothed/--no-smoothed", default=False, help="Also write the smoothed covariances.")
@out_option
def cmd_fit(**params) -> None:
    """Fit the MSV model to a returns CSV and save it as JSON."""

    def body(out: Path, manifest: dict) -> None:
        panel = read_returns_csv(params["returns_path"])
        m = params["lags"] or suggest_lags(panel.T)
        params["lags"] = m
        st = _settings(params)
        spec = PenaltySpec(params["penalty"], params["lam"] or 0.0, a=st.a, b=st.b)
        plan = st.plan(params["penalty"])
        res = fit_msv_full(panel, m, spec, plan, SolverOpts(st.tol, st.max_sweeps),
                           stability=st.stability, clamp_r=st.clamp_r, backend=st.backend,
                           dense_max_dim=st.dense_max_dim, meta={"seed": params["seed"]})
        save_model(res.model, out / "model.json")
        manifest["outputs"].append("model.json")
        manifest["fit"] = {k: model_to_dict(res.model)["meta"].get(k) for k in
                           ("penalty", "lambda", "support_size", "phi_rescaled", "phi_state_rescaled")}
        if params["smoothed"]:
            write_covariances_csv(res.smoothed, out / "smoothed.csv")
            manifest["outputs"].append("smoothed.csv")

    _run("fit", params["out"], params, body)


@main.command("forecast")
@config_option
@click.option("--model", "model_path", type=click.Path(dir_okay=False), required=True)
@click.option("--returns", "returns_path", type=click.Path(dir_okay=False), required=True)
@click.option("--horizon", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--backend", type=click.Choice(["auto", "dense", "cg"]), default="auto", show_default=True)
@click.option("--dense-max-dim", type=click.IntRange(min=1), default=4000, show_default=True)
@click.option("--zero-policy", type=click.Choice(["half-min-nonzero", "error"]), default="half-min-nonzero",
              show_default=True)
@out_option
def cmd_forecast(**params) -> None:
    """Forecast covariances 1..horizon steps past the end of the returns."""

    def body(out: Path, manifest: dict) -> None:
        model = load_model(params["model_path"])
        panel = read_returns_csv(params["returns_path"])
        if panel.p != model.p:
            raise DataError(f"returns have {panel.p} columns, model expects {model.p}")
        logsq = log_square_transform(panel, params["zero_policy"])
        fc = msv_forecast(model, logsq.ylog, params["horizon"], params["backend"], params["dense_max_dim"])
        write_covariances_csv(fc.covariances, out / "forecast.csv")
        write_covariances_binary(fc.covariances, out / "forecast.bin")
        manifest["outputs"] += ["forecast.csv", "forecast.bin"]

    _run("forecast", params["out"], params, body)


def _model_list(value: str) -> tuple[str, ...]:
    return check_names([v.strip() for v in value.split(",") if v.strip()])


@main.command("backtest")
@config_option
@click.option("--returns", "returns_path", type=click.Path(dir_okay=False), required=True)
@click.option("--models", default="msv-scad,msv-mcp,msv-ols,dcc,ccc", show_default=True,
              help=f"Comma-separated subset of: {', '.join(MODEL_NAMES)}.")
@click.option("--window", type=click.IntRange(min=10), required=True, help="Evaluation periods h.")
@click.option("--refit-every", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--hac-lag", type=click.IntRange(min=0), default=None, help="Default floor(1.5 h^(1/3)).")
@estimation_options
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True)
@out_option
def cmd_backtest(**params) -> None:
    """Rolling minimum-variance backtest with pairwise Diebold-Mariano tests."""

    def body(out: Path, manifest: dict) -> None:
        panel = read_returns_csv(params["returns_path"])
        names = _model_list(params["models"])
        params["lags"] = params["lags"] or suggest_lags(panel.T - params["window"])
        fs = rolling_forecasts(panel, names, params["window"], params["refit_every"],
                               _settings(params), params["jobs"])
        losses = fs.losses()
        table = dm_table(fs, params["hac_lag"])
        atomic_write_text(out / "losses.csv", _csv_text(list(names), [[_fmt(v) for v in r] for r in losses]))
        for key, mat in (("dm_statistic", table.statistic), ("dm_pvalue", table.pvalue)):
            rows = [[n, *(_fmt(v) for v in mat[i])] for i, n in enumerate(names)]
            atomic_write_text(out / f"{key}.csv", _csv_text(["model", *names], rows))
        manifest["outputs"] += ["losses.csv", "dm_statistic.csv", "dm_pvalue.csv"]
        manifest["mean_loss"] = dict(zip(names, losses.mean(axis=0).tolist()))

    _run("backtest", params["out"], params, body)


@main.command("mcs")
@config_option
@click.option("--losses", "losses_path", type=click.Path(dir_okay=False), required=True,
              help="CSV with one column of losses per model (as written by backtest).")
@click.option("--B", "B", type=click.IntRange(min=1), default=1000, show_default=True)
@click.option("--block-len", type=click.IntRange(min=1), default=None, help="Default floor(h^(1/3)).")
@click.option("--levels", default=",".join(str(x) for x in DEFAULT_LEVELS), show_default=True)
@click.option("--statistic", type=click.Choice(["t_sq", "t_r"]), default="t_sq", show_default=True)
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
@out_option
def cmd_mcs(**params) -> None:
    """Model Confidence Set p-values from a loss table."""

    def body(out: Path, manifest: dict) -> None:
        names, losses = _read_losses(params["losses_path"])
        try:
            levels = tuple(float(x) for x in str(params["levels"]).split(","))
        except ValueError:
            raise ConfigError(f"bad --levels {params['levels']!r}") from None
        res = mcs(losses, names, B=params["B"], block_len=params["block_len"], levels=levels,
                  statistic=params["statistic"], seed=params["seed"])
        rank = {n: k + 1 for k, n in enumerate(res.elimination_order)}
        rows = [[n, _fmt(res.pvalues[n]), rank[n], *(int(n in res.included[lv]) for lv in levels)]
                for n in names]
        header = ["model", "mcs_pvalue", "elimination_rank", *(f"included_{lv:g}" for lv in levels)]
        atomic_write_text(out / "mcs.csv", _csv_text(header, rows))
        manifest["outputs"].append("mcs.csv")
        manifest["elimination_order"] = list(res.elimination_order)

    _run("mcs", params["out"], params, body)


def _read_losses(path: str) -> tuple[list[str], np.ndarray]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        names = rows[0]
        data = np.array([[float(v) for v in r] for r in rows[1:] if r])
    except (OSError, IndexError, ValueError) as exc:
        raise DataError(f"{path}: cannot parse loss table ({exc})") from None
    if data.ndim != 2 or data.shape[1] != len(names) or not np.all(np.isfinite(data)):
        raise DataError(f"{path}: loss table must be a complete numeric matrix")
    return names, data


@main.command("compare")
@config_option
@click.option("--kind", type=click.Choice(["march", "bekk", "msv"]), default="march", show_default=True)
@click.option("--p", "p", type=click.IntRange(min=1), default=15, show_default=True)
@click.option("--T", "T", type=click.IntRange(min=2), default=800, show_default=True)
@click.option("--q-star", type=click.IntRange(min=1), default=2, show_default=True)
@click.option("--burn-in", type=click.IntRange(min=0), default=500, show_default=True)
@click.option("--reps", type=click.IntRange(min=1), default=20, show_default=True)
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True, help="Root seed.")
@click.option("--models", default=",".join(TABLE1_MODELS), show_default=True)
@estimation_options
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True)
@out_option
def cmd_compare(**params) -> None:
    """Simulation study: mean Frobenius distance of each model to the true covariances."""

    def body(out: Path, manifest: dict) -> None:
        names = _model_list(params["models"])
        params["lags"] = params["lags"] or 10
        results = compare_on_simulations(
            params["kind"], params["p"], params["T"], params["reps"], params["seed"], names,
            _settings(params), params["q_star"], params["burn_in"], params["jobs"])
        rows = [[r.seed, *(_fmt(r.distances[n]) for n in names)] for r in results]
        atomic_write_text(out / "replications.csv", _csv_text(["seed", *names], rows))
        summary = summarize(results, names)
        atomic_write_text(out / "comparison.csv", _csv_text(
            list(names), [[_fmt(summary[n]["mean"]) for n in names]]))
        manifest["outputs"] += ["replications.csv", "comparison.csv"]
        manifest["summary"] = summary
        manifest["settings"] = settings_dict(_settings(params))
        manifest["failures"] = [{"seed": r.seed, **r.errors} for r in results if r.errors]

    _run("compare", params["out"], params, body)


if __name__ == "__main__":  # pragma: no cover
    main()
