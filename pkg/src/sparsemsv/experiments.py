"""Named model variants and the replication harnesses used by the CLI.

Every variant exposes its in-sample covariance path and multi-step
forecasts through :class:`FittedModel`, so the simulation comparison and
the out-of-sample backtest treat MSV fits and MGARCH baselines alike.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import baselines
from .errors import ConfigError, MsvError
from .estimator import MsvFitResult, StabilityPolicy, fit_msv_full
from .evaluation import ForecastSet, frobenius_distance
from .panels import ReturnPanel
from .penalized_var import CvPlan, SolverOpts
from .penalties import PenaltySpec
from .simulate import DgpSpec, simulate
from .smoother import DENSE_MAX_DIM, CovSequence, forecast as msv_forecast

logger = logging.getLogger(__name__)

MSV_VARIANTS = {"msv-scad": "scad", "msv-mcp": "mcp", "msv-lasso": "lasso", "msv-ols": "ols"}
BASELINES = ("dcc", "ccc", "ogarch")
MODEL_NAMES = tuple(MSV_VARIANTS) + BASELINES
TABLE1_MODELS = ("msv-scad", "msv-mcp", "msv-ols", "dcc", "ccc")


def suggest_lags(T: int, eps: float = 0.01) -> int:
    """``floor(T^(1/3 - eps))``, at least 1."""
    return max(1, int(math.floor(T ** (1.0 / 3.0 - eps))))


@dataclass(frozen=True)
class ModelSettings:
    lags: int = 5
    lam: float | None = None  # fixed lambda; None selects it by CV
    a: float = 3.5
    b: float = 3.0
    n_folds: int = 5
    gap: int | None = None
    n_lambda: int = 50
    cv_rule: str = "min"
    tol: float = 1e-8
    max_sweeps: int = 1000
    stability: str = StabilityPolicy.RESCALE.value
    clamp_r: bool = False
    backend: str = "auto"
    dense_max_dim: int = DENSE_MAX_DIM

    def penalty(self, family: str) -> PenaltySpec:
        if family == "ols":
            return PenaltySpec("lasso", 0.0)
        return PenaltySpec(family, 0.0 if self.lam is None else self.lam, a=self.a, b=self.b)

    def plan(self, family: str) -> CvPlan | None:
        if family == "ols" or self.lam is not None:
            return None
        return CvPlan(n_folds=self.n_folds, gap=self.gap, n_lambda=self.n_lambda, selection=self.cv_rule)


@dataclass
class FittedModel:
    name: str
    in_sample: CovSequence
    forecast: Callable[[int], CovSequence]
    fit: Any = field(repr=False, default=None)


def fit_msv_variant(name: str, panel: ReturnPanel, settings: ModelSettings) -> FittedModel:
    family = MSV_VARIANTS[name]
    res: MsvFitResult = fit_msv_full(
        panel, settings.lags, settings.penalty(family), settings.plan(family),
        SolverOpts(tol=settings.tol, max_sweeps=settings.max_sweeps),
        stability=settings.stability, clamp_r=settings.clamp_r,
        backend=settings.backend, dense_max_dim=settings.dense_max_dim,
    )

    def fc(L: int) -> CovSequence:
        return msv_forecast(res.model, res.logsq.ylog, L, settings.backend, settings.dense_max_dim,
                            path=res.path).covariances

    return FittedModel(name, res.smoothed, fc, res)


def fit_named(name: str, panel: ReturnPanel, settings: ModelSettings = ModelSettings()) -> FittedModel:
    if name in MSV_VARIANTS:
        return fit_msv_variant(name, panel, settings)
    if name == "dcc":
        m = baselines.fit_dcc_scalar(panel.data)
    elif name == "ccc":
        m = baselines.fit_ccc(panel.data)
    elif name == "ogarch":
        m = baselines.fit_ogarch(panel.data)
    else:
        raise ConfigError(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}")
    return FittedModel(name, m.covariances(), m.forecast, m)


def check_names(names: Sequence[str]) -> tuple[str, ...]:
    bad = [n for n in names if n not in MODEL_NAMES]
    if bad:
        raise ConfigError(f"unknown model(s) {bad}; choose from {', '.join(MODEL_NAMES)}")
    if len(set(names)) != len(names):
        raise ConfigError("model names must be unique")
    return tuple(names)


def child_seeds(root: int, n: int) -> list[int]:
    """Deterministic per-replication seeds split off one root seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(root).spawn(n)]


@dataclass(frozen=True)
class ReplicationResult:
    seed: int
    distances: dict[str, float]
    errors: dict[str, str]


def frobenius_replication(dgp: DgpSpec, names: Sequence[str], settings: ModelSettings) -> ReplicationResult:
    """Simulate once, fit every model, score in-sample paths against the truth."""
    sim = simulate(dgp)
    dist: dict[str, float] = {}
    errs: dict[str, str] = {}
    for name in names:
        try:
            dist[name] = frobenius_distance(fit_named(name, sim.panel, settings).in_sample, sim.truth)
        except MsvError as exc:
            dist[name] = float("nan")
            errs[name] = f"{type(exc).__name__}: {exc}"
    return ReplicationResult(int(dgp.seed), dist, errs)


def _run_replication(args):
    dgp, names, settings = args
    logging.getLogger("sparsemsv").setLevel(logging.ERROR)
    return frobenius_replication(dgp, names, settings)


def _pool_map(fn, items: list, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def compare_on_simulations(
    kind: str, p: int, T: int, reps: int, root_seed: int, names: Sequence[str] = TABLE1_MODELS,
    settings: ModelSettings = ModelSettings(lags=10), q_star: int = 2, burn_in: int = 500, jobs: int = 1,
) -> list[ReplicationResult]:
    names = check_names(names)
    dgps = [DgpSpec(kind, p, T, seed=s, burn_in=burn_in, q_star=q_star) for s in child_seeds(root_seed, reps)]
    return _pool_map(_run_replication, [(d, names, settings) for d in dgps], jobs)


def summarize(results: Sequence[ReplicationResult], names: Sequence[str]) -> dict[str, dict[str, float]]:
    out = {}
    for n in names:
        vals = np.array([r.distances[n] for r in results])
        ok = vals[np.isfinite(vals)]
        out[n] = {
            "mean": float(ok.mean()) if ok.size else float("nan"),
            "std": float(ok.std(ddof=1)) if ok.size > 1 else float("nan"),
            "failures": int(vals.size - ok.size),
        }
    return out


def _rolling_one(args) -> np.ndarray:
    name, data, labels, start, refit_every, settings = args
    logging.getLogger("sparsemsv").setLevel(logging.ERROR)
    T = data.shape[0]
    out = []
    for origin in range(start, T, refit_every):
        horizon = min(refit_every, T - origin)
        fitted = fit_named(name, ReturnPanel(data[:origin], labels), settings)
        out.append(fitted.forecast(horizon).matrices)
    return np.concatenate(out)


def rolling_forecasts(
    panel: ReturnPanel, names: Sequence[str], window: int, refit_every: int = 10,
    settings: ModelSettings = ModelSettings(), jobs: int = 1,
) -> ForecastSet:
    """Out-of-sample covariance forecasts for the last ``window`` periods.

    Each model is refit on data through origin ``o`` every ``refit_every``
    periods and forecasts ``o+1..o+refit_every``, so no forecast uses
    information from its own target period or later.
    """
    names = check_names(names)
    T = panel.T
    if not 0 < window < T:
        raise ConfigError(f"window must be in (0, T={T}), got {window}")
    if refit_every < 1:
        raise ConfigError("refit_every must be >= 1")
    start = T - window
    data = np.asarray(panel.data)
    args = [(n, data, list(panel.asset_labels), start, refit_every, settings) for n in names]
    mats = _pool_map(_rolling_one, args, jobs)
    seqs = tuple(CovSequence.from_arrays(m, "forecast", start=start + 1) for m in mats)
    return ForecastSet(names, seqs, data[start:])


def settings_dict(settings: ModelSettings) -> dict[str, Any]:
    return asdict(settings)
