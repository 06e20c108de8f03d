"""Convergence diagnostics and the two-model efficiency report.

Draws for one parameter are a (chains, draws) array. Both statistics work on
rank-normalized split chains: pooled draws are replaced by normal scores of
their average ranks, then every chain is cut into two halves.
"""
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import stats

from ._classes import Era
from .errors import DimensionMismatch
from .inference import ChainSet

logger = logging.getLogger(__name__)

RHAT_WARN = 1.01
# antithetic chains may beat the draw count, but never by more than this factor
ESS_INFLATION = 1.5

RE_ROWS = [
    "Elapsed time",
    "Average ESS of the REs",
    "ESS per minute",
    f"Maximum R-hat of REs, {Era.OLD} boundaries",
    f"Maximum R-hat of REs, {Era.NEW} boundaries",
    f"Average ESS of the REs, {Era.OLD} boundaries",
    f"Average ESS of the REs, {Era.NEW} boundaries",
]


def _check_draws(ary) -> np.ndarray:
    ary = np.asarray(ary, dtype=float)
    if ary.ndim != 2:
        raise DimensionMismatch(f"Expected (chains, draws), got shape {ary.shape}.")
    n_chain, n_draw = ary.shape
    if n_chain < 2 or n_draw < 4:
        raise DimensionMismatch(f"Need at least 2 chains of 4 draws, got {n_chain} x {n_draw}.")
    return ary


def _is_constant(ary: np.ndarray) -> bool:
    return bool(np.all(ary == ary.flat[0]))


def rank_normalize(ary) -> np.ndarray:
    """Normal scores of the pooled average ranks, offset (r - 3/8) / (S + 1/4)."""
    ary = np.asarray(ary, dtype=float)
    size = ary.size
    rank = stats.rankdata(ary, method="average")
    z = stats.norm.ppf((rank - 0.375) / (size + 0.25))
    return z.reshape(ary.shape)


def split_chains(ary) -> np.ndarray:
    """Each chain cut into halves; an odd middle draw is dropped."""
    ary = np.asarray(ary)
    half = ary.shape[1] // 2
    return np.vstack((ary[:, :half], ary[:, ary.shape[1] - half :]))


def _rhat(ary: np.ndarray) -> float:
    _, n_draw = ary.shape
    chain_mean = ary.mean(axis=1)
    within = np.mean(np.var(ary, axis=1, ddof=1))
    between = n_draw * np.var(chain_mean, ddof=1)
    if within == 0:
        return 1.0
    return float(np.sqrt((within * (n_draw - 1) / n_draw + between / n_draw) / within))


def split_rhat(ary) -> float:
    ary = _check_draws(ary)
    if _is_constant(ary):
        return 1.0
    # ranks are taken before splitting so both halves share one scale
    return _rhat(split_chains(rank_normalize(ary)))


def autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance at every lag by direct summation."""
    x = np.asarray(x, dtype=float)
    centred = x - x.mean()
    n = len(x)
    return np.correlate(centred, centred, mode="full")[n - 1 :] / n


def _ess(ary: np.ndarray) -> float:
    n_chain, n_draw = ary.shape
    acov = np.asarray([autocovariance(chain) for chain in ary])
    chain_mean = ary.mean(axis=1)
    mean_var = np.mean(acov[:, 0]) * n_draw / (n_draw - 1.0)
    var_plus = mean_var * (n_draw - 1.0) / n_draw
    if n_chain > 1:
        var_plus += np.var(chain_mean, ddof=1)
    if var_plus == 0:
        return float(n_chain * n_draw)

    rho = np.zeros(n_draw)
    rho_even = 1.0
    rho[0] = rho_even
    rho_odd = 1.0 - (mean_var - np.mean(acov[:, 1])) / var_plus
    rho[1] = rho_odd

    # initial positive sequence
    t = 1
    while t < (n_draw - 2) and (rho_even + rho_odd) >= 0.0:
        rho_even = 1.0 - (mean_var - np.mean(acov[:, t + 1])) / var_plus
        rho_odd = 1.0 - (mean_var - np.mean(acov[:, t + 2])) / var_plus
        rho[t + 1] = rho_even
        if (rho_even + rho_odd) >= 0:
            rho[t + 2] = rho_odd
        t += 2

    max_t = t
    # initial monotone sequence
    t = 1
    while t <= max_t - 2:
        if (rho[t + 1] + rho[t + 2]) > (rho[t - 1] + rho[t]):
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2

    total = n_chain * n_draw
    tau = -1.0 + 2.0 * np.sum(rho[:max_t]) + np.sum(rho[max_t + 1 : max_t + 2])
    tau = max(tau, 1.0 / ESS_INFLATION)
    return float(total / tau)


def ess_bulk(ary) -> float:
    ary = _check_draws(ary)
    if _is_constant(ary):
        return float(ary.size)
    return _ess(split_chains(rank_normalize(ary)))


def summarize(chains: ChainSet, names: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """One row per parameter: mean, sd, central 95% interval, R-hat and bulk ESS."""
    rows = []
    for name in names or chains.names:
        ary = chains.column(name)
        low, high = np.quantile(ary, [0.025, 0.975])
        rows.append(
            {
                "name": name,
                "mean": float(ary.mean()),
                "sd": float(ary.std(ddof=1)),
                "q2.5": float(low),
                "q97.5": float(high),
                "r_hat": split_rhat(ary),
                "ess_bulk": ess_bulk(ary),
            }
        )
    return pd.DataFrame(rows, columns=["name", "mean", "sd", "q2.5", "q97.5", "r_hat", "ess_bulk"])


def re_names(chains: ChainSet, era: Optional[str] = None) -> List[str]:
    eras = [era] if era else Era.TYPES
    return [name for e in eras for name in chains.columns(f"re_{e}")]


def warnings_for(chains: ChainSet, table: pd.DataFrame) -> List[str]:
    """Diagnostic warnings worth a non-zero exit: divergences and unconverged REs."""
    messages = []
    if chains.unreliable:
        messages.append(f"{100.0 * chains.divergence_rate:.1f}% of transitions diverged")
    res = table[table["name"].isin(re_names(chains))]
    if len(res) and res["r_hat"].max() > RHAT_WARN:
        worst = res.loc[res["r_hat"].idxmax()]
        messages.append(f"max R-hat over REs is {worst['r_hat']:.3f} ({worst['name']})")
    for message in messages:
        logger.warning("%s: %s", chains.kind, message)
    return messages


def efficiency(chains: ChainSet) -> Dict[str, float]:
    """The report column for one model; ESS per minute uses post-warmup wall-clock only."""
    ess = {name: ess_bulk(chains.column(name)) for name in re_names(chains)}
    rhat = {name: split_rhat(chains.column(name)) for name in re_names(chains)}
    minutes = chains.sampling_time / 60.0
    average = float(np.mean(list(ess.values()))) if ess else float("nan")

    def by_era(values, era, reducer):
        selected = [values[name] for name in re_names(chains, era)]
        return float(reducer(selected)) if selected else float("nan")

    return {
        RE_ROWS[0]: chains.elapsed,
        RE_ROWS[1]: average,
        RE_ROWS[2]: average / minutes if minutes > 0 else float("inf"),
        RE_ROWS[3]: by_era(rhat, Era.OLD, np.max),
        RE_ROWS[4]: by_era(rhat, Era.NEW, np.max),
        RE_ROWS[5]: by_era(ess, Era.OLD, np.mean),
        RE_ROWS[6]: by_era(ess, Era.NEW, np.mean),
    }


def comparison_report(
    first: ChainSet, second: ChainSet, labels: Optional[Sequence[str]] = None
) -> pd.DataFrame:
    """Efficiency rows side by side, one column per model."""
    if labels is None:
        labels = [first.kind, second.kind]
        if labels[0] == labels[1]:
            labels = [f"{labels[0]} (1)", f"{labels[1]} (2)"]
    columns = {labels[0]: efficiency(first), labels[1]: efficiency(second)}
    frame = pd.DataFrame(columns, index=RE_ROWS)
    frame.index.name = "metric"
    return frame


def format_duration(seconds: float) -> str:
    """Short human duration such as ``14h``, ``2m 5s`` or ``8s``."""
    total = int(round(seconds))
    hours, rest = divmod(total, 3600)
    minutes, secs = divmod(rest, 60)
    parts = []
    if hours:
        parts.append(f"{hours}h")
    if minutes:
        parts.append(f"{minutes}m")
    if secs or not parts:
        parts.append(f"{secs}s")
    return " ".join(parts)


def _format_value(metric: str, value: float) -> str:
    if not np.isfinite(value):
        return str(value)
    if metric == RE_ROWS[0]:
        return format_duration(value)
    if metric.startswith("Maximum R-hat"):
        return f"{value:.2f}"
    return f"{value:.0f}" if abs(value) >= 100 else f"{value:.3g}"


def format_report(frame: pd.DataFrame) -> str:
    text = frame.copy().astype(object)
    for metric in frame.index:
        for column in frame.columns:
            text.loc[metric, column] = _format_value(metric, float(frame.loc[metric, column]))

    width = max(len(metric) for metric in text.index)
    widths = [max(len(str(column)), *(len(v) for v in text[column])) for column in text.columns]
    lines = [
        "Elapsed time covers warmup and sampling; ESS per minute uses sampling time only.",
        " " * width + "  " + "  ".join(str(c).rjust(w) for c, w in zip(text.columns, widths)),
    ]
    for metric, row in text.iterrows():
        lines.append(metric.ljust(width) + "  " + "  ".join(v.rjust(w) for v, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def write_report(
    frame: pd.DataFrame, path: Union[str, Path], provenance: Optional[Dict] = None
) -> Path:
    """Write ``<path>.txt`` (aligned) and ``<path>.csv`` (one row per metric)."""
    path = Path(path)
    header = "".join(f"# {key} = {value}\n" for key, value in sorted((provenance or {}).items()))
    path.with_suffix(".txt").write_text(header + format_report(frame), encoding="utf-8")
    with open(path.with_suffix(".csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(header)
        frame.to_csv(fh)
    return path.with_suffix(".csv")
