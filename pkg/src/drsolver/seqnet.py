"""A small from-scratch LSTM with exact backpropagation through time.

All parameters of a model live in one flat float64 vector; a layout map of
named blocks gives out views into it. Gates are stacked in the order
input, forget, output, candidate. Batches are arrays of shape (B, T, D).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import StructuralError, TrainingError

CHECKPOINT_FORMAT = "drsolver-seqnet"
CHECKPOINT_VERSION = 1
INIT_RANGE = 0.08
FORGET_BIAS = 1.0


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# --- parameter layout ---------------------------------------------------------


@dataclass(frozen=True)
class Block:
    name: str
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


def make_layout(entries: Sequence[tuple[str, tuple[int, ...]]]) -> tuple[Block, ...]:
    out = []
    offset = 0
    for name, shape in entries:
        b = Block(name, tuple(int(s) for s in shape), offset)
        out.append(b)
        offset += b.size
    return tuple(out)


def layout_size(layout: Sequence[Block]) -> int:
    return sum(b.size for b in layout)


def lstm_param_count(input_dim: int, hidden_dim: int) -> int:
    return 4 * hidden_dim * (input_dim + hidden_dim + 1)


@dataclass
class LstmParams:
    """Views onto the weights of one LSTM layer.

    ``W`` has shape (4H, D + H) acting on the concatenation [x, h]; ``b`` is (4H,).
    """

    input_dim: int
    hidden_dim: int
    W: np.ndarray
    b: np.ndarray

    @property
    def n_params(self) -> int:
        return self.W.size + self.b.size


# --- one LSTM layer -----------------------------------------------------------


@dataclass
class _StepCache:
    xh: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    tc: np.ndarray


def lstm_layer_forward(p: LstmParams, xs: np.ndarray, h0: np.ndarray, c0: np.ndarray):
    """Run a layer over xs (B, T, D). Returns (hs (B, T, H), h_T, c_T, caches)."""
    B, T, D = xs.shape
    if D != p.input_dim:
        raise StructuralError(f"input has dimension {D}, layer expects {p.input_dim}")
    H = p.hidden_dim
    h, c = h0, c0
    hs = np.zeros((B, T, H))
    caches = []
    for t in range(T):
        xh = np.concatenate([xs[:, t, :], h], axis=1)
        z = xh @ p.W.T + p.b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        o = _sigmoid(z[:, 2 * H : 3 * H])
        g = np.tanh(z[:, 3 * H :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        caches.append(_StepCache(xh, c, i, f, o, g, tc))
        c = c_new
        h = o * tc
        hs[:, t, :] = h
    return hs, h, c, caches


def lstm_layer_backward(p: LstmParams, caches, dhs: Optional[np.ndarray], dh_T: np.ndarray, dc_T: np.ndarray):
    """Gradients (dW, db, dxs, dh0, dc0) given upstream dL/dh_t and dL/d(final state)."""
    D = p.input_dim
    T = len(caches)
    B = dh_T.shape[0]
    dW = np.zeros_like(p.W)
    db = np.zeros_like(p.b)
    dxs = np.zeros((B, T, D))
    dh = dh_T.copy()
    dc = dc_T.copy()
    for t in reversed(range(T)):
        k = caches[t]
        if dhs is not None:
            dh = dh + dhs[:, t, :]
        do = dh * k.tc
        dc = dc + dh * k.o * (1.0 - k.tc * k.tc)
        di = dc * k.g
        dg = dc * k.i
        df = dc * k.c_prev
        dz = np.concatenate(
            [
                di * k.i * (1.0 - k.i),
                df * k.f * (1.0 - k.f),
                do * k.o * (1.0 - k.o),
                dg * (1.0 - k.g * k.g),
            ],
            axis=1,
        )
        dW += dz.T @ k.xh
        db += dz.sum(axis=0)
        dxh = dz @ p.W
        dxs[:, t, :] = dxh[:, :D]
        dh = dxh[:, D:]
        dc = dc * k.f
    return dW, db, dxs, dh, dc


# --- models -------------------------------------------------------------------


def _as_batch(seqs, input_dim: int) -> np.ndarray:
    x = np.asarray(seqs, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise StructuralError(f"expected a (B, T, D) batch, got shape {x.shape}")
    if x.shape[2] != input_dim and x.shape[1] > 0:
        raise StructuralError(f"input vectors have length {x.shape[2]}, model expects {input_dim}")
    return x


class SeqModel:
    """Base class: flat parameters, layout map, loss and gradient."""

    kind = "base"

    def __init__(self, dims: dict, layout: tuple[Block, ...], theta: Optional[np.ndarray] = None):
        self.dims = dict(dims)
        self.layout = layout
        self._blocks = {b.name: b for b in layout}
        n = layout_size(layout)
        if theta is None:
            theta = np.zeros(n)
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (n,):
            raise StructuralError(f"parameter vector has shape {theta.shape}, layout needs ({n},)")
        self.theta = theta.copy()

    @property
    def n_params(self) -> int:
        return self.theta.size

    def view(self, name: str, theta: Optional[np.ndarray] = None) -> np.ndarray:
        b = self._blocks[name]
        t = self.theta if theta is None else theta
        return t[b.offset : b.offset + b.size].reshape(b.shape)

    def lstm(self, prefix: str, theta: Optional[np.ndarray] = None) -> LstmParams:
        W = self.view(prefix + ".W", theta)
        return LstmParams(W.shape[1] - W.shape[0] // 4, W.shape[0] // 4, W, self.view(prefix + ".b", theta))

    def init_params(self, seed: int) -> "SeqModel":
        rng = np.random.default_rng(seed)
        self.theta = rng.uniform(-INIT_RANGE, INIT_RANGE, size=self.n_params)
        for b in self.layout:
            if b.name.endswith(".b") and b.name != "readout.b":
                H = b.shape[0] // 4
                self.view(b.name)[H : 2 * H] += FORGET_BIAS
        return self

    def copy(self) -> "SeqModel":
        return type(self)(**self.dims, theta=self.theta)

    # subclasses implement _forward(theta, x) -> (pred, cache) and _backward(theta, cache, dpred) -> grad
    def predict(self, seqs) -> np.ndarray:
        x = _as_batch(seqs, self.dims["input_dim"])
        pred, _ = self._forward(self.theta, x)
        return pred

    def loss(self, seqs, targets, scale: float = 1.0, theta: Optional[np.ndarray] = None) -> float:
        x = _as_batch(seqs, self.dims["input_dim"])
        y = self._targets(targets, len(x))
        pred, _ = self._forward(self.theta if theta is None else theta, x)
        return float(scale * 0.5 * np.sum((pred - y) ** 2) / len(x))

    def loss_and_grad(self, seqs, targets, scale: float = 1.0) -> tuple[float, np.ndarray]:
        x = _as_batch(seqs, self.dims["input_dim"])
        y = self._targets(targets, len(x))
        pred, cache = self._forward(self.theta, x)
        diff = pred - y
        loss = float(scale * 0.5 * np.sum(diff * diff) / len(x))
        grad = self._backward(self.theta, cache, scale * diff / len(x))
        return loss, grad

    def _targets(self, targets, batch: int) -> np.ndarray:
        y = np.asarray(targets, dtype=np.float64)
        if y.ndim == 1:
            y = y[None]
        if y.shape != (batch, self.dims["output_dim"]):
            raise StructuralError(f"targets have shape {y.shape}, expected ({batch}, {self.dims['output_dim']})")
        return y


class SequenceRegressor(SeqModel):
    """LSTM over the sequence, linear readout of the final hidden state."""

    kind = "sequence_regressor"

    def __init__(self, input_dim: int, hidden_dim: int, output_dim: int, theta=None):
        if min(input_dim, hidden_dim, output_dim) < 1:
            raise StructuralError("model dimensions must be >= 1")
        layout = make_layout(
            [
                ("lstm.W", (4 * hidden_dim, input_dim + hidden_dim)),
                ("lstm.b", (4 * hidden_dim,)),
                ("readout.W", (output_dim, hidden_dim)),
                ("readout.b", (output_dim,)),
            ]
        )
        super().__init__(dict(input_dim=input_dim, hidden_dim=hidden_dim, output_dim=output_dim), layout, theta)

    def hidden_states(self, seqs) -> np.ndarray:
        x = _as_batch(seqs, self.dims["input_dim"])
        H = self.dims["hidden_dim"]
        zeros = np.zeros((len(x), H))
        hs, _, _, _ = lstm_layer_forward(self.lstm("lstm"), x, zeros, zeros)
        return hs

    def _forward(self, theta, x):
        H = self.dims["hidden_dim"]
        p = self.lstm("lstm", theta)
        zeros = np.zeros((len(x), H))
        _, h, c, caches = lstm_layer_forward(p, x, zeros, zeros)
        Wr, br = self.view("readout.W", theta), self.view("readout.b", theta)
        return h @ Wr.T + br, (p, caches, h, Wr)

    def _backward(self, theta, cache, dpred):
        p, caches, h, Wr = cache
        grad = np.zeros_like(theta)
        self.view("readout.W", grad)[...] = dpred.T @ h
        self.view("readout.b", grad)[...] = dpred.sum(axis=0)
        dh = dpred @ Wr
        dW, db, _, _, _ = lstm_layer_backward(p, caches, None, dh, np.zeros_like(dh))
        self.view("lstm.W", grad)[...] = dW
        self.view("lstm.b", grad)[...] = db
        return grad


class EncoderDecoder(SeqModel):
    """Encoder LSTM reads the whole sequence; a decoder LSTM, started from the
    encoder state, is fed the last step once; a linear readout gives the output.
    """

    kind = "encoder_decoder"

    def __init__(self, input_dim: int, hidden_dim: int, output_dim: int, theta=None):
        if min(input_dim, hidden_dim, output_dim) < 1:
            raise StructuralError("model dimensions must be >= 1")
        layout = make_layout(
            [
                ("encoder.W", (4 * hidden_dim, input_dim + hidden_dim)),
                ("encoder.b", (4 * hidden_dim,)),
                ("decoder.W", (4 * hidden_dim, input_dim + hidden_dim)),
                ("decoder.b", (4 * hidden_dim,)),
                ("readout.W", (output_dim, hidden_dim)),
                ("readout.b", (output_dim,)),
            ]
        )
        super().__init__(dict(input_dim=input_dim, hidden_dim=hidden_dim, output_dim=output_dim), layout, theta)

    def _forward(self, theta, x):
        if x.shape[1] < 1:
            raise StructuralError("encoder-decoder needs at least one step")
        H = self.dims["hidden_dim"]
        enc, dec = self.lstm("encoder", theta), self.lstm("decoder", theta)
        zeros = np.zeros((len(x), H))
        _, he, ce, enc_caches = lstm_layer_forward(enc, x, zeros, zeros)
        _, hd, _, dec_caches = lstm_layer_forward(dec, x[:, -1:, :], he, ce)
        Wr, br = self.view("readout.W", theta), self.view("readout.b", theta)
        return hd @ Wr.T + br, (enc, dec, enc_caches, dec_caches, hd, Wr)

    def _backward(self, theta, cache, dpred):
        enc, dec, enc_caches, dec_caches, hd, Wr = cache
        grad = np.zeros_like(theta)
        self.view("readout.W", grad)[...] = dpred.T @ hd
        self.view("readout.b", grad)[...] = dpred.sum(axis=0)
        dh = dpred @ Wr
        dWd, dbd, _, dhe, dce = lstm_layer_backward(dec, dec_caches, None, dh, np.zeros_like(dh))
        self.view("decoder.W", grad)[...] = dWd
        self.view("decoder.b", grad)[...] = dbd
        dWe, dbe, _, _, _ = lstm_layer_backward(enc, enc_caches, None, dhe, dce)
        self.view("encoder.W", grad)[...] = dWe
        self.view("encoder.b", grad)[...] = dbe
        return grad


MODEL_TYPES = {cls.kind: cls for cls in (SequenceRegressor, EncoderDecoder)}


def lstm_forward(model: SequenceRegressor, sequence) -> tuple[np.ndarray, np.ndarray]:
    """Single-sequence forward pass: (hidden states (T, H), prediction (K,))."""
    x = np.asarray(sequence, dtype=np.float64).reshape(-1, model.dims["input_dim"])
    return model.hidden_states(x[None])[0], model.predict(x[None])[0]


def lstm_backward(model: SeqModel, sequence, target, scale: float = 1.0) -> np.ndarray:
    """Gradient of scale * 0.5 * ||prediction - target||^2 for one sequence."""
    x = np.asarray(sequence, dtype=np.float64).reshape(-1, model.dims["input_dim"])
    return model.loss_and_grad(x[None], np.asarray(target, dtype=np.float64)[None], scale)[1]


# --- gradient check -------------------------------------------------------------


def relative_error(a, b, floor: float = 1e-6) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numeric_gradient(model: SeqModel, seqs, targets, h: float = 1e-5, scale: float = 1.0) -> np.ndarray:
    theta = model.theta.copy()
    out = np.zeros_like(theta)
    for k in range(theta.size):
        old = theta[k]
        theta[k] = old + h
        up = model.loss(seqs, targets, scale, theta)
        theta[k] = old - h
        down = model.loss(seqs, targets, scale, theta)
        theta[k] = old
        out[k] = (up - down) / (2.0 * h)
    return out


def gradcheck(model: SeqModel, seqs, targets, h: float = 1e-5, scale: float = 1.0) -> float:
    """Max relative error between analytic and central-difference gradients."""
    _, analytic = model.loss_and_grad(seqs, targets, scale)
    numeric = numeric_gradient(model, seqs, targets, h, scale)
    return float(relative_error(analytic, numeric).max())


@dataclass(frozen=True)
class GradcheckCase:
    model: str
    input_dim: int
    hidden_dim: int
    output_dim: int
    steps: int
    batch: int
    seed: int
    max_rel_error: float


def gradcheck_suite(n_configs: int = 10, seed: int = 0, h: float = 1e-5) -> list[GradcheckCase]:
    """Gradient checks over random shapes; both model types are covered."""
    rng = np.random.default_rng(seed)
    cases = []
    for k in range(n_configs):
        cls = (SequenceRegressor, EncoderDecoder)[k % 2]
        D = int(rng.choice([1, 2, 4]))
        H = int(rng.choice([2, 4, 8]))
        K = int(rng.integers(1, 4))
        T = int(rng.integers(2, 5))
        B = int(rng.integers(1, 4))
        s = int(rng.integers(0, 2**31 - 1))
        model = cls(D, H, K).init_params(s)
        # Larger weights than the default init exercise the nonlinearities.
        model.theta = np.random.default_rng(s).normal(0.0, 0.5, model.n_params)
        x = rng.normal(0.0, 1.0, (B, T, D))
        y = rng.normal(0.0, 1.0, (B, K))
        err = gradcheck(model, x, y, h)
        cases.append(GradcheckCase(cls.kind, D, H, K, T, B, s, err))
    return cases


# --- training -------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 200
    batch_size: int = 16
    seed: int = 0
    clip_norm: float = 5.0
    loss_scale: float = 1.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "clip_norm": self.clip_norm,
            "loss_scale": self.loss_scale,
        }


@dataclass
class TrainResult:
    model: SeqModel
    losses: list[float] = field(default_factory=list)  # full-dataset loss after each epoch
    initial_loss: float = math.nan

    def smoothed_losses(self, alpha: float = 0.1) -> list[float]:
        return smoothed(self.losses, alpha, start=self.initial_loss)


def smoothed(losses: Sequence[float], alpha: float = 0.1, start: Optional[float] = None) -> list[float]:
    """Exponential moving average of a loss curve, optionally seeded with ``start``."""
    out = []
    acc = start
    for v in losses:
        acc = v if acc is None else alpha * v + (1.0 - alpha) * acc
        out.append(acc)
    return out


def train(model: SeqModel, seqs, targets, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Mini-batch SGD with global-norm clipping; works on a copy of ``model``.

    ``seqs`` is (N, T, D) and ``targets`` (N, K). Deterministic for a given seed.
    """
    x = _as_batch(seqs, model.dims["input_dim"])
    y = model._targets(targets, len(x)) if len(x) else None
    if len(x) == 0:
        raise StructuralError("cannot train on an empty dataset")
    m = model.copy()
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult(m, initial_loss=m.loss(x, y, cfg.loss_scale))
    n = len(x)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grad = m.loss_and_grad(x[idx], y[idx], cfg.loss_scale)
            norm = float(np.sqrt(np.sum(grad * grad)))
            if not (math.isfinite(loss) and math.isfinite(norm)):
                raise TrainingError(
                    f"training diverged at epoch {epoch}",
                    {"epoch": epoch, "batch_start": int(start), "loss": loss, "grad_norm": norm,
                     "recent_losses": result.losses[-5:]},
                )
            if norm > cfg.clip_norm:
                grad *= cfg.clip_norm / norm
            m.theta -= cfg.learning_rate * grad
        full = m.loss(x, y, cfg.loss_scale)
        if not math.isfinite(full):
            raise TrainingError(
                f"training diverged at epoch {epoch}",
                {"epoch": epoch, "loss": full, "recent_losses": result.losses[-5:]},
            )
        result.losses.append(full)
    return result


# --- checkpoints ------------------------------------------------------------------


def checkpoint_bytes(model: SeqModel, meta: Optional[dict] = None) -> bytes:
    """One JSON header line (format, version, layout) then raw little-endian float64."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": model.kind,
        "dims": model.dims,
        "layout": [[b.name, list(b.shape), b.offset] for b in model.layout],
        "n_params": model.n_params,
        "meta": meta or {},
    }
    line = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n"
    return line + model.theta.astype("<f8").tobytes()


def model_from_bytes(data: bytes) -> tuple[SeqModel, dict]:
    nl = data.find(b"\n")
    if nl < 0:
        raise StructuralError("checkpoint has no header line")
    try:
        header = json.loads(data[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise StructuralError("checkpoint header is not valid JSON") from exc
    if header.get("format") != CHECKPOINT_FORMAT:
        raise StructuralError(f"not a checkpoint: format {header.get('format')!r}")
    if header.get("version") != CHECKPOINT_VERSION:
        raise StructuralError(f"unsupported checkpoint version {header.get('version')!r}")
    cls = MODEL_TYPES.get(header.get("model"))
    if cls is None:
        raise StructuralError(f"unknown model type {header.get('model')!r}")
    body = data[nl + 1 :]
    n = int(header["n_params"])
    if len(body) != 8 * n:
        raise StructuralError(f"checkpoint body has {len(body)} bytes, expected {8 * n}")
    theta = np.frombuffer(body, dtype="<f8").astype(np.float64)
    model = cls(**header["dims"], theta=theta)
    expected = [[b.name, list(b.shape), b.offset] for b in model.layout]
    if header["layout"] != expected:
        raise StructuralError("checkpoint layout does not match the model type")
    return model, header.get("meta", {})


def save_checkpoint(path, model: SeqModel, meta: Optional[dict] = None) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model, meta))


def load_checkpoint(path) -> tuple[SeqModel, dict]:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
