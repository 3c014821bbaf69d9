"""Forecast comparison: Frobenius accuracy, minimum-variance portfolios,
Diebold-Mariano tests and the Model Confidence Set.

Loss convention: the loss of model ``i`` at ``t`` is the squared return of
its minimum-variance portfolio, and ``u_ij = L_i - L_j``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import norm

from .errors import DataError, DegenerateVariance, InsufficientSample, LengthMismatch, SingularH
from .simulate import make_rng
from .smoother import CovSequence

DEFAULT_LEVELS = (0.05, 0.10, 0.20)
DM_MIN_PERIODS = 10
MCS_MIN_PERIODS = 20


def _mats(seq) -> np.ndarray:
    return np.asarray(getattr(seq, "matrices", seq), dtype=float)


def frobenius_distance(estimated, truth) -> float:
    """Mean over periods of ``||A_t - B_t||_F``."""
    a, b = _mats(estimated), _mats(truth)
    if a.shape != b.shape:
        raise LengthMismatch(f"sequences have shapes {a.shape} and {b.shape}")
    return float(np.mean(np.linalg.norm(a - b, axis=(-2, -1))))


def min_variance_weights(H) -> np.ndarray:
    """``H^{-1} 1 / (1' H^{-1} 1)`` for one matrix or a stack of them."""
    H = _mats(H)
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise SingularH("covariance matrix is not positive definite") from None
    ones = np.ones(H.shape[:-1] + (1,))
    x = np.linalg.solve(np.swapaxes(L, -1, -2), np.linalg.solve(L, ones))[..., 0]
    return x / x.sum(axis=-1, keepdims=True)


def portfolio_returns(returns: np.ndarray, weights: np.ndarray) -> np.ndarray:
    returns = np.asarray(returns, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if returns.shape != weights.shape:
        raise LengthMismatch(f"returns {returns.shape} and weights {weights.shape} differ")
    return np.einsum("ti,ti->t", weights, returns)


def loss_differential(returns: np.ndarray, weights_i: np.ndarray, weights_j: np.ndarray) -> np.ndarray:
    """``u_ij,t``: squared return of portfolio ``i`` minus that of portfolio ``j``."""
    return portfolio_returns(returns, weights_i) ** 2 - portfolio_returns(returns, weights_j) ** 2


def default_hac_lag(h: int) -> int:
    return int(np.floor(1.5 * np.cbrt(h)))


def newey_west_lrv(u: np.ndarray, lag: int) -> float:
    """Bartlett-kernel long-run variance of ``u``."""
    e = np.asarray(u, dtype=float) - np.mean(u)
    h = e.size
    lrv = e @ e / h
    for k in range(1, min(lag, h - 1) + 1):
        lrv += 2.0 * (1.0 - k / (lag + 1.0)) * (e[k:] @ e[:-k]) / h
    return float(lrv)


@dataclass(frozen=True)
class DmResult:
    statistic: float
    pvalue: float
    mean: float
    lag: int


def dm_statistic(u: np.ndarray, lag: int | None = None) -> DmResult:
    """DM statistic ``sqrt(h) ubar / sqrt(LRV)`` for a given loss differential."""
    u = np.asarray(u, dtype=float).ravel()
    h = u.size
    if h < 2:
        raise InsufficientSample("need at least two periods")
    lag = default_hac_lag(h) if lag is None else int(lag)
    if np.ptp(u) == 0.0:
        raise DegenerateVariance("loss differential is constant")
    lrv = newey_west_lrv(u, lag)
    if not lrv > 0:
        raise DegenerateVariance(f"non-positive HAC variance {lrv:.3g}")
    ubar = float(u.mean())
    stat = np.sqrt(h) * ubar / np.sqrt(lrv)
    return DmResult(float(stat), float(2.0 * norm.sf(abs(stat))), ubar, lag)


def dm_test(returns: np.ndarray, weights_i: np.ndarray, weights_j: np.ndarray,
            hac_lag: int | None = None) -> DmResult:
    """Equal-accuracy test of two weight paths on realized returns.

    A negative statistic favours ``i`` (smaller squared portfolio returns).
    """
    u = loss_differential(returns, weights_i, weights_j)
    if u.size < DM_MIN_PERIODS:
        raise InsufficientSample(f"DM test needs at least {DM_MIN_PERIODS} periods, got {u.size}")
    return dm_statistic(u, hac_lag)


@dataclass(frozen=True)
class ForecastSet:
    """One-step-ahead covariance forecasts of several models over a common window."""

    names: tuple[str, ...]
    forecasts: tuple[CovSequence, ...]
    returns: np.ndarray  # h x p realized returns aligned with the forecasts

    def __post_init__(self):
        names = tuple(self.names)
        if len(set(names)) != len(names):
            raise DataError("model names must be unique")
        if len(names) != len(self.forecasts):
            raise DataError("one forecast sequence per model name")
        r = np.asarray(self.returns, dtype=float)
        for name, f in zip(names, self.forecasts):
            if _mats(f).shape != (r.shape[0], r.shape[1], r.shape[1]):
                raise LengthMismatch(f"forecasts of {name!r} do not match the {r.shape} return window")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "returns", r)

    @classmethod
    def from_mapping(cls, forecasts: Mapping[str, CovSequence], returns: np.ndarray) -> "ForecastSet":
        return cls(tuple(forecasts), tuple(forecasts.values()), returns)

    def weights(self) -> dict[str, np.ndarray]:
        return {n: min_variance_weights(f) for n, f in zip(self.names, self.forecasts)}

    def losses(self) -> np.ndarray:
        """h x M matrix of squared minimum-variance portfolio returns."""
        return np.column_stack([portfolio_returns(self.returns, w) ** 2 for w in self.weights().values()])


@dataclass(frozen=True)
class DmTable:
    names: tuple[str, ...]
    statistic: np.ndarray  # M x M, entry (i, j) tests u_ij; diagonal NaN
    pvalue: np.ndarray


def dm_table(fs: ForecastSet, hac_lag: int | None = None) -> DmTable:
    w = fs.weights()
    M = len(fs.names)
    stat = np.full((M, M), np.nan)
    pval = np.full((M, M), np.nan)
    for i in range(M):
        for j in range(i + 1, M):
            try:
                res = dm_test(fs.returns, w[fs.names[i]], w[fs.names[j]], hac_lag)
            except DegenerateVariance:
                continue
            stat[i, j], stat[j, i] = res.statistic, -res.statistic
            pval[i, j] = pval[j, i] = res.pvalue
    return DmTable(fs.names, stat, pval)


def circular_block_indices(h: int, block_len: int, B: int, rng: np.random.Generator) -> np.ndarray:
    """B x h resampling indices of the circular block bootstrap."""
    block_len = max(1, min(int(block_len), h))
    n_blocks = -(-h // block_len)
    starts = rng.integers(0, h, size=(B, n_blocks))
    idx = (starts[:, :, None] + np.arange(block_len)) % h
    return idx.reshape(B, -1)[:, :h]


@dataclass(frozen=True)
class McsResult:
    names: tuple[str, ...]
    pvalues: dict[str, float]
    elimination_order: tuple[str, ...]  # first eliminated first; survivor last
    included: dict[float, tuple[str, ...]] = field(default_factory=dict)
    statistic: str = "t_sq"

    def included_at(self, level: float) -> tuple[str, ...]:
        return tuple(n for n in self.names if self.pvalues[n] > level)


def mcs(
    losses: np.ndarray,
    names: Sequence[str] | None = None,
    B: int = 1000,
    block_len: int | None = None,
    levels: Sequence[float] = DEFAULT_LEVELS,
    statistic: str = "t_sq",
    seed: int | np.random.SeedSequence | None = 0,
) -> McsResult:
    """Model Confidence Set over the columns of an h x M loss matrix.

    Each round tests equal accuracy of the surviving models with ``t_sq`` (sum
    of squared studentized pairwise mean differences) or ``t_r`` (their
    maximum absolute value), then drops the model with the largest
    studentized mean excess loss.  P-values are monotonized along the
    elimination sequence; the last survivor gets 1.
    """
    L = np.asarray(losses, dtype=float)
    if L.ndim != 2:
        raise DataError("losses must be an h x M matrix")
    h, M = L.shape
    names = tuple(names) if names is not None else tuple(f"model{k}" for k in range(M))
    if len(names) != M or len(set(names)) != M:
        raise DataError("need one unique name per loss column")
    if M < 2:
        raise DataError("MCS needs at least two models")
    if h < MCS_MIN_PERIODS:
        raise InsufficientSample(f"MCS needs at least {MCS_MIN_PERIODS} periods, got {h}")
    if statistic not in ("t_sq", "t_r"):
        raise DataError(f"unknown MCS statistic {statistic!r}")
    block_len = int(np.floor(np.cbrt(h))) if block_len is None else block_len

    idx = circular_block_indices(h, block_len, B, make_rng(seed))
    mean = L.mean(axis=0)
    boot = L[idx].mean(axis=1)  # B x M bootstrap means
    dev = boot - mean

    alive = list(range(M))
    order: list[int] = []
    raw_p: list[float] = []
    while len(alive) > 1:
        a = np.array(alive)
        d = mean[a][:, None] - mean[a][None, :]
        dstar = dev[:, a][:, :, None] - dev[:, a][:, None, :]
        var = np.mean(dstar**2, axis=0)
        iu = np.triu_indices(len(a), 1)
        if np.any(var[iu] <= 0):
            raise DegenerateVariance("identical loss series among the surviving models")
        se = np.sqrt(var[iu])
        t = d[iu] / se
        tstar = dstar[:, iu[0], iu[1]] / se
        if statistic == "t_sq":
            stat, null = np.sum(t**2), np.sum(tstar**2, axis=1)
        else:
            stat, null = np.max(np.abs(t)), np.max(np.abs(tstar), axis=1)
        raw_p.append(float(np.mean(null >= stat)))

        # model-versus-average excess loss, studentized by its bootstrap spread
        excess = mean[a] - mean[a].mean()
        excess_star = dev[:, a] - dev[:, a].mean(axis=1, keepdims=True)
        scale = np.sqrt(np.mean(excess_star**2, axis=0))
        worst = int(np.argmax(excess / np.where(scale > 0, scale, np.inf)))
        order.append(alive.pop(worst))
    order.append(alive[0])

    pvals = np.maximum.accumulate(np.array(raw_p + [1.0]))
    pvalues = {names[k]: float(pv) for k, pv in zip(order, pvals)}
    pvalues[names[order[-1]]] = 1.0
    result = McsResult(names, pvalues, tuple(names[k] for k in order), {}, statistic)
    included = {float(lv): result.included_at(lv) for lv in levels}
    return McsResult(names, pvalues, result.elimination_order, included, statistic)


def var_threshold(h_p, q: float = 0.01, quantile_source: str = "normal",
                  standardized: np.ndarray | None = None):
    """``-tau_q sqrt(h_p)`` with ``tau_q`` the ``q``-quantile of the standardized returns.

    ``quantile_source`` is ``"normal"`` or ``"historical"``; the latter needs
    the standardized return history.
    """
    if not 0 < q <= 0.5:
        raise DataError(f"tail probability must lie in (0, 0.5], got {q}")
    h_p = np.asarray(h_p, dtype=float)
    if np.any(h_p <= 0):
        raise DataError("portfolio variance forecast must be positive")
    if quantile_source == "normal":
        tau = norm.ppf(q)
    elif quantile_source == "historical":
        if standardized is None or np.size(standardized) == 0:
            raise DataError("historical quantiles need the standardized return history")
        tau = np.quantile(np.asarray(standardized, dtype=float), q)
    else:
        raise DataError(f"unknown quantile source {quantile_source!r}")
    out = -tau * np.sqrt(h_p)
    return float(out) if out.ndim == 0 else out
