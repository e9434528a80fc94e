"""Threshold calibration and detection-quality evaluation.

The grid sweep replays the detector's window statistics in vectorized
form.  The replay is constructed to be bit-identical to the streaming
detector: window means accumulate oldest-to-newest exactly like the ring
does, and anomalous-point counts are integer-exact, so a selected
configuration re-run through the streaming engine reproduces its sweep
metrics without tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .detector import AlarmEvent, DetectorConfig, segment_alarms
from .errors import DataError
from .lstm import LstmParams, predict_windows
from .pipeline import Scaler, TimeSeries, build_windows

DEFAULT_ALPHAS = (0.25, 0.33, 0.41, 0.47, 0.52, 0.58,
                  0.62, 0.66, 0.72, 0.78, 0.85, 0.92)


@dataclass
class CalibrationGrid:
    ret_candidates: tuple[float, ...]
    alpha_candidates: tuple[float, ...]
    beta_candidates: tuple[float, ...]
    mat: int = 12

    def __post_init__(self):
        self.ret_candidates = tuple(float(v) for v in self.ret_candidates)
        self.alpha_candidates = tuple(float(v) for v in self.alpha_candidates)
        self.beta_candidates = tuple(float(v) for v in self.beta_candidates)
        for name in ("ret_candidates", "alpha_candidates", "beta_candidates"):
            values = getattr(self, name)
            if not values:
                raise ValueError(f"{name} must be non-empty")
            if any(b < a for a, b in zip(values, values[1:])):
                raise ValueError(f"{name} must be sorted ascending")
        if any(v <= 0 for v in self.ret_candidates):
            raise ValueError("ret candidates must be positive")
        if any(not 0 <= v <= 1 for v in self.alpha_candidates):
            raise ValueError("alpha candidates must lie in [0, 1]")
        if any(v < 0 for v in self.beta_candidates):
            raise ValueError("beta candidates must be non-negative")
        if self.mat < 1:
            raise ValueError("mat must be >= 1")


@dataclass
class EvalReport:
    detection_rate_pct: float
    false_alarms: int
    events_total: int
    intervals_total: int
    detected_intervals: int


@dataclass
class SweepRow:
    ret: float
    alpha: float
    beta: float
    detection_rate_pct: float
    false_alarms: int
    events_total: int
    detected_intervals: int
    intervals_total: int


def _check_intervals(intervals) -> list[tuple[int, int]]:
    ordered = sorted((int(s), int(e)) for s, e in intervals)
    for (s, e) in ordered:
        if s > e:
            raise ValueError(f"interval [{s}, {e}] is inverted")
    for (_, e1), (s2, _) in zip(ordered, ordered[1:]):
        if s2 <= e1:
            raise ValueError("ground-truth intervals overlap")
    return ordered


def _overlaps(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return a[0] <= b[1] and b[0] <= a[1]


def evaluate_events(events, attack_intervals) -> EvalReport:
    """Score alarm events against ground-truth attack intervals.

    An interval counts as detected when at least one event overlaps it; an
    event is false when it overlaps no interval.  With no intervals at all
    the detection rate is vacuously 100.
    """
    intervals = _check_intervals(attack_intervals)
    spans = [(e.start_step, e.end_step) for e in events]
    detected = sum(
        1 for iv in intervals if any(_overlaps(iv, sp) for sp in spans))
    false_alarms = sum(
        1 for sp in spans if not any(_overlaps(iv, sp) for iv in intervals))
    if intervals:
        rate = 100.0 * detected / len(intervals)
    else:
        rate = 100.0
    return EvalReport(
        detection_rate_pct=rate, false_alarms=false_alarms,
        events_total=len(spans), intervals_total=len(intervals),
        detected_intervals=detected)


def evaluate(verdicts, attack_intervals) -> EvalReport:
    """Segment per-step verdicts into events, then score them."""
    return evaluate_events(segment_alarms(verdicts), attack_intervals)


def _rolling_sum(values: np.ndarray, width: int) -> np.ndarray:
    # Accumulates window elements oldest-to-newest, matching the ring's
    # summation order element for element.
    out_len = len(values) - width + 1
    acc = values[:out_len].copy()
    for j in range(1, width):
        acc += values[j:j + out_len]
    return acc


@dataclass
class ReplayTrace:
    """Per-step stream statistics shared by every grid cell."""
    steps: np.ndarray    # (n,) strictly increasing
    actual: np.ndarray
    predicted: np.ndarray
    re: np.ndarray
    are: np.ndarray      # window mean; 0 where warmup
    warmup: np.ndarray   # bool
    mat: int

    def danger(self, ret: float) -> np.ndarray:
        """Anomalous-point fraction per step for one ret; 0 where warmup."""
        flags = (self.re > ret).astype(np.int64)
        dc = np.zeros(len(self.re))
        if len(flags) >= self.mat:
            dc[self.mat - 1:] = _rolling_sum(flags, self.mat) / self.mat
        return dc


def replay_trace(pairs, mat: int, epsilon_floor: float = 1e-6) -> ReplayTrace:
    """Precompute stream statistics for a (step, actual, predicted) list."""
    if epsilon_floor <= 0:
        raise ValueError("epsilon_floor must be positive")
    rows = list(pairs)
    if not rows:
        raise ValueError("empty validation stream")
    steps = np.array([r[0] for r in rows], dtype=np.int64)
    if np.any(np.diff(steps) <= 0):
        raise ValueError("pairs must be step-ordered")
    actual = np.array([r[1] for r in rows], dtype=np.float64)
    predicted = np.array([r[2] for r in rows], dtype=np.float64)
    re = np.abs(actual - predicted) / np.maximum(np.abs(actual), epsilon_floor)
    n = len(re)
    are = np.zeros(n)
    warmup = np.ones(n, dtype=bool)
    if n >= mat:
        are[mat - 1:] = _rolling_sum(re, mat) / mat
        warmup[mat - 1:] = False
    return ReplayTrace(steps=steps, actual=actual, predicted=predicted,
                       re=re, are=are, warmup=warmup, mat=mat)


def _events_from_mask(trace: ReplayTrace, alarmed: np.ndarray,
                      dc: np.ndarray) -> list[AlarmEvent]:
    events: list[AlarmEvent] = []
    current = None
    for idx in np.flatnonzero(alarmed):
        step = int(trace.steps[idx])
        if current is not None and step == current.end_step + 1:
            current.end_step = step
            current.peak_dc = max(current.peak_dc, float(dc[idx]))
            current.peak_are = max(current.peak_are, float(trace.are[idx]))
        else:
            if current is not None:
                events.append(current)
            current = AlarmEvent(step, step, float(dc[idx]),
                                 float(trace.are[idx]))
    if current is not None:
        events.append(current)
    return events


def _row(trace: ReplayTrace, dc: np.ndarray, ret: float, alpha: float,
         beta: float, intervals) -> SweepRow:
    alarmed = (~trace.warmup) & (dc > alpha) & (trace.are > beta)
    report = evaluate_events(_events_from_mask(trace, alarmed, dc), intervals)
    return SweepRow(
        ret=ret, alpha=alpha, beta=beta,
        detection_rate_pct=report.detection_rate_pct,
        false_alarms=report.false_alarms, events_total=report.events_total,
        detected_intervals=report.detected_intervals,
        intervals_total=report.intervals_total)


def _normal_step_count(trace: ReplayTrace, intervals) -> int:
    in_attack = np.zeros(len(trace.steps), dtype=bool)
    for s, e in intervals:
        in_attack |= (trace.steps >= s) & (trace.steps <= e)
    return int(np.sum(~in_attack))


def calibrate(pairs, attack_intervals, grid: CalibrationGrid,
              epsilon_floor: float = 1e-6):
    """Exhaustive sweep over the grid; returns the winning configuration,
    its evaluation, and every sweep row.

    Selection maximizes detection rate, breaking ties by fewer false
    alarms, then the largest beta, alpha and ret (most conservative among
    equals).  Fully deterministic.
    """
    intervals = _check_intervals(attack_intervals)
    if not intervals:
        raise DataError("validation stream has no labeled attack intervals")
    trace = replay_trace(pairs, grid.mat, epsilon_floor)
    if _normal_step_count(trace, intervals) < grid.mat:
        raise DataError(
            f"validation stream needs at least {grid.mat} normal steps")

    rows: list[SweepRow] = []
    for ret in grid.ret_candidates:
        dc = trace.danger(ret)
        for alpha in grid.alpha_candidates:
            for beta in grid.beta_candidates:
                rows.append(_row(trace, dc, ret, alpha, beta, intervals))

    best = max(rows, key=lambda r: (r.detection_rate_pct, -r.false_alarms,
                                    r.beta, r.alpha, r.ret))
    config = DetectorConfig(ret=best.ret, beta=best.beta, mat=grid.mat,
                            alpha=best.alpha, epsilon_floor=epsilon_floor)
    report = EvalReport(
        detection_rate_pct=best.detection_rate_pct,
        false_alarms=best.false_alarms, events_total=best.events_total,
        intervals_total=best.intervals_total,
        detected_intervals=best.detected_intervals)
    return config, report, rows


def sweep_beta(config_base: DetectorConfig, pairs, attack_intervals,
               beta_list) -> list[SweepRow]:
    """One evaluation row per beta, all other thresholds fixed; rows come
    back in the order the betas were given."""
    betas = [float(b) for b in beta_list]
    if not betas:
        raise ValueError("beta_list must be non-empty")
    intervals = _check_intervals(attack_intervals)
    trace = replay_trace(pairs, config_base.mat, config_base.epsilon_floor)
    dc = trace.danger(config_base.ret)
    return [_row(trace, dc, config_base.ret, config_base.alpha, beta,
                 intervals) for beta in betas]


def default_grid(pairs, mat: int = 12,
                 epsilon_floor: float = 1e-6) -> CalibrationGrid:
    """Data-driven candidate grid: ret spans the stream's per-step error
    quantiles [0.5, 0.999] (20 log-spaced points), beta spans the observed
    window-mean range (20 points), alpha uses a fixed 12-value ladder."""
    trace = replay_trace(pairs, mat, epsilon_floor)
    if np.all(trace.warmup):
        raise DataError(f"validation stream shorter than mat={mat}")
    lo = max(float(np.quantile(trace.re, 0.5)), 1e-9)
    hi = max(float(np.quantile(trace.re, 0.999)), lo * (1 + 1e-9))
    rets = tuple(np.geomspace(lo, hi, 20))
    ares = trace.are[~trace.warmup]
    betas = tuple(np.linspace(float(np.min(ares)), float(np.max(ares)), 20))
    return CalibrationGrid(ret_candidates=rets,
                           alpha_candidates=DEFAULT_ALPHAS,
                           beta_candidates=betas, mat=mat)


def prediction_pairs(params: LstmParams, scaler: Scaler,
                     series: TimeSeries) -> list[tuple[int, float, float]]:
    """Predict every step of a raw-count series with a trained model.

    Windows are normalized with the training scaler, predictions are
    mapped back to raw counts, and each pair compares the prediction with
    the real next value at its step.
    """
    windows = build_windows(series, params.input_dim)
    preds = scaler.invert(predict_windows(params, scaler.apply(windows.inputs)))
    steps = windows.origin_steps + 1
    return [(int(s), float(a), float(p))
            for s, a, p in zip(steps, windows.targets, preds)]


SWEEP_HEADER = "ret,alpha,beta,detection_rate_pct,false_alarms,events_total"


def write_sweep(path, rows) -> None:
    lines = [SWEEP_HEADER]
    for r in rows:
        lines.append(f"{r.ret:.17g},{r.alpha:.17g},{r.beta:.17g},"
                     f"{r.detection_rate_pct:.17g},{r.false_alarms},"
                     f"{r.events_total}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
