"""Streamflow skill metrics, hydrograph signatures, and performance banding.

Undefined metrics raise :class:`UndefinedMetricError` rather than returning
sentinel numbers; the aggregate panel catches those per field and marks the
field absent, so no NaN ever leaks into a payload or a reward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BANDS = ("unsatisfactory", "satisfactory", "good", "very_good")

# Fraction of the series below/above which the low-/high-flow KGE is evaluated.
HIGH_FLOW_PERCENTILE = 90.0
LOW_FLOW_PERCENTILE = 50.0

# Event definition: local maxima at least twice baseflow, separated >= 12 h.
EVENT_PROMINENCE_FACTOR = 2.0
EVENT_SEPARATION_HOURS = 12
BASEFLOW_PERCENTILE = 25.0
MIN_RECESSION_POINTS = 3


class UndefinedMetricError(ValueError):
    """The metric is mathematically undefined for these series."""


def _pair(obs, sim) -> tuple[np.ndarray, np.ndarray]:
    obs = np.asarray(obs, dtype=np.float64)
    sim = np.asarray(sim, dtype=np.float64)
    if obs.ndim != 1 or sim.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if obs.shape != sim.shape:
        raise ValueError(f"series lengths differ: {obs.shape[0]} vs {sim.shape[0]}")
    return obs, sim


def nse(obs, sim) -> float:
    """Nash-Sutcliffe efficiency: 1 - sum((obs-sim)^2) / sum((obs-mean)^2).

    1 means a perfect simulation; 0 means no better than the observed mean.
    """
    obs, sim = _pair(obs, sim)
    if obs.shape[0] < 2:
        raise ValueError("nse needs at least 2 points")
    denom = float(np.sum((obs - np.mean(obs)) ** 2))
    if denom == 0.0:
        raise UndefinedMetricError("observed series has zero variance")
    num = float(np.sum((obs - sim) ** 2))
    return 1.0 - num / denom


def kge_components(obs, sim) -> tuple[float, float, float, float]:
    """Kling-Gupta components (r, alpha, beta) and the combined score."""
    obs, sim = _pair(obs, sim)
    if obs.shape[0] < 2:
        raise ValueError("kge needs at least 2 points")
    obs_std = float(np.std(obs))
    sim_std = float(np.std(sim))
    obs_mean = float(np.mean(obs))
    if obs_std == 0.0 or sim_std == 0.0:
        raise UndefinedMetricError("degenerate variance in kge")
    if obs_mean == 0.0:
        raise UndefinedMetricError("zero observed mean in kge")
    r = float(np.corrcoef(obs, sim)[0, 1])
    alpha = sim_std / obs_std
    beta = float(np.mean(sim)) / obs_mean
    kge = 1.0 - math.sqrt((r - 1.0) ** 2 + (alpha - 1.0) ** 2 + (beta - 1.0) ** 2)
    return r, alpha, beta, kge


def peak_and_lag(obs, sim) -> tuple[float, float, float]:
    """Peak magnitude ratio, absolute peak error, and timing offset in hours.

    Peaks are the global maxima (ties resolved to the earliest index);
    positive lag means the simulated peak arrives late.
    """
    obs, sim = _pair(obs, sim)
    if obs.shape[0] == 0:
        raise ValueError("empty series")
    i_obs = int(np.argmax(obs))
    i_sim = int(np.argmax(sim))
    obs_peak = float(obs[i_obs])
    sim_peak = float(sim[i_sim])
    ratio = sim_peak / obs_peak if obs_peak != 0.0 else math.nan
    return ratio, sim_peak - obs_peak, float(i_sim - i_obs)


def recession_slope(series) -> float:
    """Least-squares slope of ln(Q) on the longest strictly decreasing run
    after the global peak (1/h); raises if no run of 3+ positive points exists."""
    q = np.asarray(series, dtype=np.float64)
    if q.shape[0] == 0:
        raise ValueError("empty series")
    peak = int(np.argmax(q))
    tail = q[peak:]
    best_start, best_len = 0, 1
    start, length = 0, 1
    for k in range(1, tail.shape[0]):
        if tail[k] < tail[k - 1]:
            length += 1
        else:
            start, length = k, 1
        if length > best_len:
            best_start, best_len = start, length
    run = tail[best_start:best_start + best_len]
    run = run[run > 0.0]
    if run.shape[0] < MIN_RECESSION_POINTS:
        raise UndefinedMetricError("no recession run of 3+ positive points")
    t = np.arange(run.shape[0], dtype=np.float64)
    slope = np.polyfit(t, np.log(run), 1)[0]
    return float(slope)


def baseflow_level(series) -> float:
    q = np.asarray(series, dtype=np.float64)
    if q.shape[0] == 0:
        raise ValueError("empty series")
    return float(np.percentile(q, BASEFLOW_PERCENTILE))


def count_events(series) -> int:
    """Local maxima at least twice baseflow, separated by >= 12 hours."""
    q = np.asarray(series, dtype=np.float64)
    if q.shape[0] < 3:
        return 0
    threshold = EVENT_PROMINENCE_FACTOR * baseflow_level(q)
    last_accepted = -EVENT_SEPARATION_HOURS
    count = 0
    for i in range(1, q.shape[0] - 1):
        if q[i] > q[i - 1] and q[i] > q[i + 1] and q[i] >= threshold:
            if i - last_accepted >= EVENT_SEPARATION_HOURS:
                count += 1
                last_accepted = i
    return count


def signatures(obs, sim) -> dict:
    """Volume ratio plus simulated-hydrograph shape descriptors.

    Single-valued shape fields (time to peak, baseflow, event count) describe
    the simulated series, the thing under diagnosis; recession slopes are
    reported for both series so steepness can be compared.
    """
    obs, sim = _pair(obs, sim)
    if obs.shape[0] == 0:
        raise ValueError("empty series")
    obs_total = float(np.sum(obs))
    if obs_total <= 0.0:
        raise UndefinedMetricError("volume ratio undefined for zero observed volume")
    out = {
        "volume_ratio": float(np.sum(sim)) / obs_total,
        "time_to_peak_hours": float(int(np.argmax(sim))),
        "baseflow_cms": baseflow_level(sim),
        "event_count": count_events(sim),
    }
    for key, series in (("recession_slope_sim", sim), ("recession_slope_obs", obs)):
        try:
            out[key] = recession_slope(series)
        except UndefinedMetricError:
            out[key] = None
    return out


def moriasi_band(value: float) -> str:
    """Performance band for an NSE value.

    unsatisfactory: NSE <= 0.50; satisfactory: 0.50 < NSE <= 0.70;
    good: 0.70 < NSE <= 0.85; very_good: NSE > 0.85.
    """
    if math.isnan(value):
        raise ValueError("cannot band NaN")
    if value <= 0.50:
        return "unsatisfactory"
    if value <= 0.70:
        return "satisfactory"
    if value <= 0.85:
        return "good"
    return "very_good"


@dataclass
class MetricPanel:
    """The evaluate-tool payload; absent fields are None, never NaN."""

    nse: float | None = None
    kge: float | None = None
    kge_r: float | None = None
    kge_alpha: float | None = None
    kge_beta: float | None = None
    kge_high: float | None = None
    kge_low: float | None = None
    rmse: float | None = None
    pbias: float | None = None
    peak_ratio: float | None = None
    peak_error_cms: float | None = None
    lag_hours: float | None = None
    volume_ratio: float | None = None
    recession_slope_sim: float | None = None
    recession_slope_obs: float | None = None
    time_to_peak_hours: float | None = None
    baseflow_cms: float | None = None
    event_count: int | None = None
    band: str | None = None

    def to_dict(self) -> dict:
        return {
            "nse": self.nse,
            "kge": self.kge,
            "kge_r": self.kge_r,
            "kge_alpha": self.kge_alpha,
            "kge_beta": self.kge_beta,
            "kge_high": self.kge_high,
            "kge_low": self.kge_low,
            "rmse": self.rmse,
            "pbias": self.pbias,
            "peak_ratio": self.peak_ratio,
            "peak_error_cms": self.peak_error_cms,
            "lag_hours": self.lag_hours,
            "volume_ratio": self.volume_ratio,
            "recession_slope_sim": self.recession_slope_sim,
            "recession_slope_obs": self.recession_slope_obs,
            "time_to_peak_hours": self.time_to_peak_hours,
            "baseflow_cms": self.baseflow_cms,
            "event_count": self.event_count,
            "band": self.band,
        }


def _subset_kge(obs, sim, mask) -> float:
    if int(mask.sum()) < 2:
        raise UndefinedMetricError("too few points in flow-regime subset")
    return kge_components(obs[mask], sim[mask])[3]


def metric_panel(obs, sim) -> MetricPanel:
    """Compute every metric, marking individually undefined ones absent."""
    obs, sim = _pair(obs, sim)
    panel = MetricPanel()

    try:
        panel.nse = nse(obs, sim)
        panel.band = moriasi_band(panel.nse)
    except UndefinedMetricError:
        pass
    try:
        panel.kge_r, panel.kge_alpha, panel.kge_beta, panel.kge = kge_components(obs, sim)
    except UndefinedMetricError:
        pass
    try:
        panel.kge_high = _subset_kge(obs, sim, obs > np.percentile(obs, HIGH_FLOW_PERCENTILE))
    except UndefinedMetricError:
        pass
    try:
        panel.kge_low = _subset_kge(obs, sim, obs < np.percentile(obs, LOW_FLOW_PERCENTILE))
    except UndefinedMetricError:
        pass

    panel.rmse = float(np.sqrt(np.mean((sim - obs) ** 2)))
    obs_total = float(np.sum(obs))
    if obs_total != 0.0:
        panel.pbias = 100.0 * float(np.sum(sim - obs)) / obs_total

    ratio, err, lag = peak_and_lag(obs, sim)
    panel.peak_ratio = None if math.isnan(ratio) else ratio
    panel.peak_error_cms = err
    panel.lag_hours = lag

    try:
        sig = signatures(obs, sim)
    except UndefinedMetricError:
        sig = {
            "volume_ratio": None,
            "time_to_peak_hours": float(int(np.argmax(sim))),
            "baseflow_cms": baseflow_level(sim),
            "event_count": count_events(sim),
        }
        for key, series in (("recession_slope_sim", sim), ("recession_slope_obs", obs)):
            try:
                sig[key] = recession_slope(series)
            except UndefinedMetricError:
                sig[key] = None
    panel.volume_ratio = sig["volume_ratio"]
    panel.time_to_peak_hours = sig["time_to_peak_hours"]
    panel.baseflow_cms = sig["baseflow_cms"]
    panel.event_count = sig["event_count"]
    panel.recession_slope_sim = sig["recession_slope_sim"]
    panel.recession_slope_obs = sig["recession_slope_obs"]
    return panel
