"""Collective anomaly detection for network-traffic time series.

Trains a small LSTM on normal per-step packet counts, predicts each next
value, and flags sustained floods by thresholding the density and mean of
recent prediction errors held in a fixed-size circular window.
"""

__version__ = "0.1.0"

from .calibration import (CalibrationGrid, EvalReport, SweepRow, calibrate,
                          default_grid, evaluate, prediction_pairs,
                          replay_trace, sweep_beta)
from .detector import (AlarmEvent, Detector, DetectorConfig, ErrorRing,
                       StepVerdict, WarmupError, averaged_relative_error,
                       danger_coefficient, detector_step, relative_error,
                       ring_push, segment_alarms)
from .errors import DataError, DivergenceError
from .kernels import active_backend, available_backends
from .lstm import (LstmParams, LstmState, TrainConfig, TrainReport,
                   bptt_gradients, finite_difference_gradient, forward_step,
                   init_params, load_model, predict_window, predict_windows,
                   save_model, train)
from .pipeline import (LabeledTimeSeries, PacketRecord, Scaler, SynthConfig,
                       TimeSeries, WindowSet, aggregate_counts, build_windows,
                       fit_scaler, generate_synthetic, load_series,
                       load_tshark_csv, save_series, split_protocol)

__all__ = [name for name in dir() if not name.startswith("_")]
