"""Recurrent trading-policy network.

A stack of LSTM cells maps the per-period feature vector to the next
period's risky positions.  Parameters live in plain float64 arrays so the
same objects can be registered as autodiff leaves during training and used
directly for fast evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ParameterError, ShapeError
from .instruments import InstrumentSpec

GATE_NAMES = ("i", "f", "o", "c")

CHECKPOINT_MAGIC = "eqrisk-lstm-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class CellParams:
    """One LSTM cell: per-gate input maps U, recurrent maps W and biases b."""

    u: dict  # gate -> (d, d_prev)
    w: dict  # gate -> (d, d)
    b: dict  # gate -> (d,)


@dataclass
class LstmParams:
    """All trainable arrays of the policy network.

    ``dims`` is (d_0, d_1, ..., d_H, d_{H+1}): feature width, cell widths,
    output width.  The output map is affine: Y = W_y h^(H) + b_y.
    """

    dims: tuple
    cells: list = field(default_factory=list)
    w_y: np.ndarray | None = None
    b_y: np.ndarray | None = None

    def __post_init__(self):
        if len(self.dims) < 3:
            raise ParameterError("dims must hold at least (d0, d1, d_out)")
        expected = self.param_count_formula(self.dims)
        if self.cells and self.size() != expected:
            raise ShapeError(
                f"parameter count {self.size()} != closed form {expected}"
            )

    @property
    def n_cells(self) -> int:
        return len(self.dims) - 2

    @property
    def d_out(self) -> int:
        return self.dims[-1]

    @staticmethod
    def param_count_formula(dims) -> int:
        """q = sum_j 4 (d_j d_{j-1} + d_j^2 + d_j) + d_out d_H + d_out."""
        h = len(dims) - 2
        q = sum(4 * (dims[j] * dims[j - 1] + dims[j] ** 2 + dims[j]) for j in range(1, h + 1))
        return q + dims[-1] * dims[-2] + dims[-1]

    def flat_list(self) -> list[np.ndarray]:
        """All arrays in a fixed order (cells, gate i/f/o/c, U then W then b)."""
        out = []
        for cell in self.cells:
            out.extend(cell.u[g] for g in GATE_NAMES)
            out.extend(cell.w[g] for g in GATE_NAMES)
            out.extend(cell.b[g] for g in GATE_NAMES)
        out.append(self.w_y)
        out.append(self.b_y)
        return out

    def size(self) -> int:
        return sum(a.size for a in self.flat_list())

    def copy(self) -> "LstmParams":
        return LstmParams(
            dims=self.dims,
            cells=[
                CellParams(
                    {g: c.u[g].copy() for g in GATE_NAMES},
                    {g: c.w[g].copy() for g in GATE_NAMES},
                    {g: c.b[g].copy() for g in GATE_NAMES},
                )
                for c in self.cells
            ],
            w_y=self.w_y.copy(),
            b_y=self.b_y.copy(),
        )

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.flat_list()])

    def set_from_vector(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.size():
            raise ShapeError("flat vector length mismatch")
        lo = 0
        for a in self.flat_list():
            a[...] = vec[lo : lo + a.size].reshape(a.shape)
            lo += a.size


def glorot_init(dims, seed: int) -> LstmParams:
    """Glorot-uniform weights, zero biases.

    Every weight matrix of shape (fan_out, fan_in) is sampled from
    U(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))); recurrent maps
    use their own square fan pair.  Draw order is cells in order, gates
    i/f/o/c, input maps before recurrent maps, output map last.
    """
    dims = tuple(int(d) for d in dims)
    rng = np.random.default_rng(seed)

    def draw(fan_out, fan_in):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_out, fan_in))

    cells = []
    for j in range(1, len(dims) - 1):
        d_prev, d = dims[j - 1], dims[j]
        u = {g: draw(d, d_prev) for g in GATE_NAMES}
        w = {g: draw(d, d) for g in GATE_NAMES}
        b = {g: np.zeros(d) for g in GATE_NAMES}
        cells.append(CellParams(u, w, b))
    w_y = draw(dims[-1], dims[-2])
    b_y = np.zeros(dims[-1])
    return LstmParams(dims=dims, cells=cells, w_y=w_y, b_y=b_y)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def stacked_arrays(params: LstmParams):
    """Per-cell (U_stack, W_stack, b_stack) plus (w_y.T, b_y) for batched math.

    Stacks follow the gate order i/f/o/c along columns so a batch-major input
    x gives gate pre-activations as contiguous column blocks of
    ``x @ U_stack + h @ W_stack + b_stack``.
    """
    stacks = []
    for cell in params.cells:
        u = np.concatenate([cell.u[g].T for g in GATE_NAMES], axis=1)
        w = np.concatenate([cell.w[g].T for g in GATE_NAMES], axis=1)
        b = np.concatenate([cell.b[g] for g in GATE_NAMES])
        stacks.append((u, w, b))
    return stacks, params.w_y.T.copy(), params.b_y


def cell_forward(z, c_prev, d):
    """Gate math shared by the eager path and tests.

    ``z`` holds the stacked pre-activations (..., 4d); returns (h, c).
    """
    s = _sigmoid(z[..., : 3 * d])
    g = np.tanh(z[..., 3 * d :])
    i, f, o = s[..., :d], s[..., d : 2 * d], s[..., 2 * d : 3 * d]
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c


def lstm_step(params: LstmParams, x, prev_h, prev_c):
    """One time step of the stacked cells plus the affine output map.

    ``x`` is (batch, d0) or (d0,); ``prev_h``/``prev_c`` are lists of per-cell
    states (zeros at the first step).  Returns (y, new_h, new_c).
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != params.dims[0]:
        raise ShapeError(f"feature width {x.shape[1]} != d0 {params.dims[0]}")
    if np.isnan(x).any():
        raise NumericError("NaN in feature vector")
    if len(prev_h) != params.n_cells or len(prev_c) != params.n_cells:
        raise ShapeError("state lists must have one entry per cell")

    stacks, w_y_t, b_y = stacked_arrays(params)
    new_h, new_c = [], []
    inp = x
    for j, (u, w, b) in enumerate(stacks):
        d = params.dims[j + 1]
        h_prev = np.atleast_2d(np.asarray(prev_h[j], dtype=np.float64))
        c_prev = np.atleast_2d(np.asarray(prev_c[j], dtype=np.float64))
        if h_prev.shape[-1] != d or c_prev.shape[-1] != d:
            raise ShapeError(f"cell {j} state width != {d}")
        z = inp @ u + h_prev @ w + b
        h, c = cell_forward(z, c_prev, d)
        new_h.append(h[0] if squeeze else h)
        new_c.append(c[0] if squeeze else c)
        inp = h
    y = inp @ w_y_t + b_y
    if squeeze:
        y = y[0]
    return y, new_h, new_c


def zero_state(params: LstmParams, batch: int | None = None):
    """Initial (h, c) lists of zeros, per cell."""
    shapes = [
        (d,) if batch is None else (batch, d) for d in params.dims[1:-1]
    ]
    return [np.zeros(s) for s in shapes], [np.zeros(s) for s in shapes]


def policy_positions(y, spec: InstrumentSpec) -> np.ndarray:
    """Map network output to the risky position vector (stock first).

    Stock hedging: the single output is the stock holding.  Option hedging:
    outputs are the call and put holdings and the stock position is zero.
    """
    y = np.asarray(y, dtype=np.float64)
    flat = y.ndim == 1
    width = y.shape[-1] if not flat else y.shape[0]
    if width != spec.n_traded:
        raise ShapeError(
            f"network emits {width} outputs, instruments need {spec.n_traded}"
        )
    y2 = np.atleast_2d(y)
    out = np.zeros((y2.shape[0], 1 + spec.n_options))
    if spec.uses_options:
        out[:, 1:] = y2
    else:
        out[:, 0] = y2[:, 0]
    return out[0] if flat else out


def save_checkpoint(params: LstmParams, path, seed: int | None = None) -> None:
    """Versioned text container; doubles are written with full round-trip reprs."""
    lines = [f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}"]
    lines.append("seed " + (repr(int(seed)) if seed is not None else "none"))
    lines.append("dims " + " ".join(str(d) for d in params.dims))
    names = _tensor_names(params.dims)
    for name, arr in zip(names, params.flat_list()):
        shape = " ".join(str(s) for s in arr.shape)
        lines.append(f"tensor {name} {arr.ndim} {shape}")
        lines.append(" ".join(repr(float(v)) for v in arr.ravel()))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> tuple[LstmParams, int | None]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(CHECKPOINT_MAGIC):
        raise ParameterError("not a policy checkpoint file")
    seed_tok = lines[1].split()[1]
    seed = None if seed_tok == "none" else int(seed_tok)
    dims = tuple(int(t) for t in lines[2].split()[1:])
    params = glorot_init(dims, 0)  # shapes only; values overwritten below
    arrays = params.flat_list()
    names = _tensor_names(dims)
    ln = 3
    for name, arr in zip(names, arrays):
        head = lines[ln].split()
        if head[0] != "tensor" or head[1] != name:
            raise ParameterError(f"checkpoint tensor order mismatch at {name}")
        vals = np.array([float(t) for t in lines[ln + 1].split()])
        arr[...] = vals.reshape(arr.shape)
        ln += 2
    return params, seed


def _tensor_names(dims) -> list[str]:
    names = []
    for j in range(1, len(dims) - 1):
        names.extend(f"U_{g}_{j}" for g in GATE_NAMES)
        names.extend(f"W_{g}_{j}" for g in GATE_NAMES)
        names.extend(f"b_{g}_{j}" for g in GATE_NAMES)
    names.extend(["W_y", "b_y"])
    return names
