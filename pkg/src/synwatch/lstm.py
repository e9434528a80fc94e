"""Single-layer LSTM next-step predictor.

One cell step consumes the whole lag window as a multi-feature input
vector from the zero state, so backpropagation is depth 1 per sample and
the batch gradient is exact.  Training is full-batch gradient descent;
64-bit floats throughout.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DivergenceError
from .kernels import get_kernels
from .pipeline import WindowSet

#: Matrix/vector fields in canonical order (model file block order).
PARAM_FIELDS = ("W_i", "U_i", "b_i", "W_f", "U_f", "b_f",
                "W_o", "U_o", "b_o", "W_g", "U_g", "b_g", "w_y")

MODEL_MAGIC = "lstm-model v1"


@dataclass
class LstmParams:
    """Gate and projection weights; also reused as the gradient container
    (same shapes, field for field)."""
    input_dim: int
    hidden_dim: int
    W_i: np.ndarray
    U_i: np.ndarray
    b_i: np.ndarray
    W_f: np.ndarray
    U_f: np.ndarray
    b_f: np.ndarray
    W_o: np.ndarray
    U_o: np.ndarray
    b_o: np.ndarray
    W_g: np.ndarray
    U_g: np.ndarray
    b_g: np.ndarray
    w_y: np.ndarray
    b_y: float

    def arrays(self) -> tuple[np.ndarray, ...]:
        return tuple(getattr(self, name) for name in PARAM_FIELDS)

    def copy(self) -> "LstmParams":
        return LstmParams(
            self.input_dim, self.hidden_dim,
            *(arr.copy() for arr in self.arrays()), self.b_y)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(arr)) for arr in self.arrays()) \
            and np.isfinite(self.b_y)


@dataclass
class LstmState:
    hidden: np.ndarray
    cell: np.ndarray


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 1500
    hidden_dim: int = 23
    lag: int = 3
    rng_seed: int = 0
    gradient_clip: float | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lag not in (1, 2, 3):
            raise ValueError("lag must be 1, 2 or 3")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if self.gradient_clip is not None and self.gradient_clip <= 0:
            raise ValueError("gradient_clip must be positive when set")


@dataclass
class TrainReport:
    epoch_losses: np.ndarray
    wall_seconds: float


#: Half-width of the uniform init for the output projection.  The head
#: must map the tanh-bounded hidden vector onto the full normalized target
#: range; at the 1/sqrt(hidden) scale of the gate matrices it starts an
#: order of magnitude too small for plain gradient descent to grow within
#: the default epoch budget.
OUTPUT_INIT_RANGE = 2.0


def init_params(input_dim: int, hidden_dim: int, rng_seed: int) -> LstmParams:
    """Seeded initialization: gate weights uniform in [-r, r] with
    r = 1/sqrt(hidden_dim), output projection uniform in
    [-OUTPUT_INIT_RANGE, OUTPUT_INIT_RANGE]; forget-gate bias 1.0, other
    biases 0."""
    if input_dim not in (1, 2, 3):
        raise ValueError("input_dim must be 1, 2 or 3")
    if hidden_dim < 1:
        raise ValueError("hidden_dim must be >= 1")
    rng = np.random.default_rng(rng_seed)
    r = 1.0 / np.sqrt(hidden_dim)

    def w(rows, cols):
        return rng.uniform(-r, r, size=(rows, cols))

    h, k = hidden_dim, input_dim
    return LstmParams(
        input_dim=k, hidden_dim=h,
        W_i=w(h, k), U_i=w(h, h), b_i=np.zeros(h),
        W_f=w(h, k), U_f=w(h, h), b_f=np.ones(h),
        W_o=w(h, k), U_o=w(h, h), b_o=np.zeros(h),
        W_g=w(h, k), U_g=w(h, h), b_g=np.zeros(h),
        w_y=rng.uniform(-OUTPUT_INIT_RANGE, OUTPUT_INIT_RANGE, size=h),
        b_y=0.0,
    )


def zero_state(params: LstmParams) -> LstmState:
    return LstmState(hidden=np.zeros(params.hidden_dim),
                     cell=np.zeros(params.hidden_dim))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def forward_step(params: LstmParams, state: LstmState,
                 x: np.ndarray) -> tuple[LstmState, float]:
    """One LSTM cell update plus the affine output projection.

    Pure function: returns a fresh state, never mutates its arguments.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.input_dim,):
        raise ValueError(
            f"input has shape {x.shape}, expected ({params.input_dim},)")
    if state.hidden.shape != (params.hidden_dim,) \
            or state.cell.shape != (params.hidden_dim,):
        raise ValueError("state dimensions do not match hidden_dim")

    i = _sigmoid(params.W_i @ x + params.U_i @ state.hidden + params.b_i)
    f = _sigmoid(params.W_f @ x + params.U_f @ state.hidden + params.b_f)
    o = _sigmoid(params.W_o @ x + params.U_o @ state.hidden + params.b_o)
    g = np.tanh(params.W_g @ x + params.U_g @ state.hidden + params.b_g)
    c = f * state.cell + i * g
    h = o * np.tanh(c)
    prediction = float(params.w_y @ h + params.b_y)
    return LstmState(hidden=h, cell=c), prediction


def predict_window(params: LstmParams, window: np.ndarray) -> float:
    """Next-value prediction from one lag window (oldest value first),
    computed in a single cell step from the zero state."""
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (params.input_dim,):
        raise ValueError(
            f"window has shape {window.shape}, expected ({params.input_dim},)")
    _, prediction = forward_step(params, zero_state(params), window)
    return prediction


def predict_windows(params: LstmParams, inputs: np.ndarray) -> np.ndarray:
    """Vectorized predict_window over an (n, input_dim) batch."""
    inputs = np.ascontiguousarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != params.input_dim:
        raise ValueError("inputs must have shape (n, input_dim)")
    predict_batch, _ = get_kernels()
    h0 = np.zeros(params.hidden_dim)
    c0 = np.zeros(params.hidden_dim)
    return predict_batch(inputs, h0, c0, *params.arrays(), params.b_y)


def _check_windows(params: LstmParams, windows: WindowSet) -> None:
    if len(windows) == 0:
        raise ValueError("window set is empty")
    if windows.inputs.shape[1] != params.input_dim:
        raise ValueError(
            f"windows built with lag {windows.inputs.shape[1]}, "
            f"model expects {params.input_dim}")


def bptt_gradients(params: LstmParams,
                   windows: WindowSet) -> tuple[LstmParams, float]:
    """Exact gradients of the mean squared error over a window set.

    Returns (gradients, loss); the gradient container mirrors LstmParams.
    """
    _check_windows(params, windows)
    x = np.ascontiguousarray(windows.inputs, dtype=np.float64)
    y = np.ascontiguousarray(windows.targets, dtype=np.float64)
    h0 = np.zeros(params.hidden_dim)
    c0 = np.zeros(params.hidden_dim)
    _, loss_and_grads = get_kernels()
    out = loss_and_grads(x, y, h0, c0, *params.arrays(), params.b_y)
    loss = float(out[0])
    grads = LstmParams(params.input_dim, params.hidden_dim,
                       *out[2:15], float(out[15]))
    return grads, loss


def forward_loss(params: LstmParams, windows: WindowSet) -> float:
    """MSE via per-window forward steps only (no backward pass); this is
    the evaluation route used by the finite-difference oracle."""
    _check_windows(params, windows)
    total = 0.0
    for window, target in zip(windows.inputs, windows.targets):
        residual = predict_window(params, window) - target
        total += residual * residual
    return total / len(windows)


def finite_difference_gradient(params: LstmParams, windows: WindowSet,
                               epsilon: float = 1e-5) -> LstmParams:
    """Central-difference gradient of the window-set loss, one parameter
    at a time: (L(p + eps) - L(p - eps)) / (2 eps)."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    _check_windows(params, windows)
    work = params.copy()
    grads = LstmParams(params.input_dim, params.hidden_dim,
                       *(np.zeros_like(a) for a in params.arrays()), 0.0)
    for name in PARAM_FIELDS:
        arr = getattr(work, name)
        grad_arr = getattr(grads, name)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            original = arr[idx]
            arr[idx] = original + epsilon
            loss_plus = forward_loss(work, windows)
            arr[idx] = original - epsilon
            loss_minus = forward_loss(work, windows)
            arr[idx] = original
            grad_arr[idx] = (loss_plus - loss_minus) / (2.0 * epsilon)
    original = work.b_y
    work.b_y = original + epsilon
    loss_plus = forward_loss(work, windows)
    work.b_y = original - epsilon
    loss_minus = forward_loss(work, windows)
    work.b_y = original
    grads.b_y = (loss_plus - loss_minus) / (2.0 * epsilon)
    return grads


def train(config: TrainConfig,
          windows: WindowSet) -> tuple[LstmParams, TrainReport]:
    """Full-batch gradient descent for the configured number of epochs.

    Deterministic for a fixed seed.  Each epoch records the loss at the
    parameters before that epoch's update.  Non-finite parameters abort
    with a DivergenceError naming the epoch.
    """
    if windows.lag != config.lag:
        raise ValueError(
            f"window set lag {windows.lag} != config lag {config.lag}")
    if len(windows) == 0:
        raise ValueError("window set is empty")
    params = init_params(config.lag, config.hidden_dim, config.rng_seed)
    x = np.ascontiguousarray(windows.inputs, dtype=np.float64)
    y = np.ascontiguousarray(windows.targets, dtype=np.float64)
    h0 = np.zeros(params.hidden_dim)
    c0 = np.zeros(params.hidden_dim)
    _, loss_and_grads = get_kernels()
    param_arrays = params.arrays()
    lr = config.learning_rate
    clip = config.gradient_clip
    losses = np.empty(config.epochs)

    start = time.perf_counter()
    for epoch in range(config.epochs):
        out = loss_and_grads(x, y, h0, c0, *param_arrays, params.b_y)
        losses[epoch] = out[0]
        grad_arrays = out[2:15]
        grad_b_y = out[15]
        if clip is not None:
            grad_arrays = tuple(np.clip(g, -clip, clip) for g in grad_arrays)
            grad_b_y = min(max(grad_b_y, -clip), clip)
        for target, grad in zip(param_arrays, grad_arrays):
            target -= lr * grad
        params.b_y -= lr * grad_b_y
        if not (params.all_finite() and np.isfinite(losses[epoch])):
            raise DivergenceError(epoch + 1)
    wall = time.perf_counter() - start
    return params, TrainReport(epoch_losses=losses, wall_seconds=wall)


def _format(v: float) -> str:
    return f"{v:.17g}"


def save_model(path, params: LstmParams) -> None:
    """Write the line-oriented model file (round-trip exact floats)."""
    lines = [MODEL_MAGIC,
             f"input_dim={params.input_dim} hidden_dim={params.hidden_dim}"]
    for name in PARAM_FIELDS:
        arr = getattr(params, name)
        lines.append(name)
        if arr.ndim == 1:
            lines.append(" ".join(_format(v) for v in arr))
        else:
            for row in arr:
                lines.append(" ".join(_format(v) for v in row))
    lines.append("b_y")
    lines.append(_format(params.b_y))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> LstmParams:
    """Read a model file; rejects unknown versions and bad shapes."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0].strip() != MODEL_MAGIC:
        found = lines[0].strip() if lines else "<empty>"
        raise DataError(f"unsupported model version: {found!r}")
    try:
        dims = dict(tok.split("=") for tok in lines[1].split())
        input_dim = int(dims["input_dim"])
        hidden_dim = int(dims["hidden_dim"])
    except (IndexError, KeyError, ValueError):
        raise DataError("malformed model dimension line") from None

    h, k = hidden_dim, input_dim
    shapes = {}
    for gate in ("i", "f", "o", "g"):
        shapes[f"W_{gate}"] = (h, k)
        shapes[f"U_{gate}"] = (h, h)
        shapes[f"b_{gate}"] = (h,)
    shapes["w_y"] = (h,)

    cursor = 2
    fields = {}
    for name in PARAM_FIELDS:
        if cursor >= len(lines) or lines[cursor].strip() != name:
            raise DataError(f"model file: expected block {name!r}")
        cursor += 1
        shape = shapes[name]
        rows = 1 if len(shape) == 1 else shape[0]
        width = shape[-1]
        block = []
        for _ in range(rows):
            if cursor >= len(lines):
                raise DataError(f"model file: truncated block {name!r}")
            try:
                row = [float(tok) for tok in lines[cursor].split()]
            except ValueError:
                raise DataError(
                    f"model file: non-numeric value in block {name!r}") \
                    from None
            if len(row) != width:
                raise DataError(
                    f"model file: block {name!r} row has {len(row)} values, "
                    f"expected {width}")
            block.append(row)
            cursor += 1
        arr = np.asarray(block, dtype=np.float64)
        fields[name] = arr[0] if len(shape) == 1 else arr
    if cursor >= len(lines) or lines[cursor].strip() != "b_y":
        raise DataError("model file: expected block 'b_y'")
    cursor += 1
    if cursor >= len(lines):
        raise DataError("model file: truncated block 'b_y'")
    try:
        b_y = float(lines[cursor].strip())
    except ValueError:
        raise DataError("model file: non-numeric value in block 'b_y'") \
            from None
    return LstmParams(input_dim=input_dim, hidden_dim=hidden_dim,
                      **fields, b_y=b_y)
