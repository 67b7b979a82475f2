"""Small, exact numerics for the fixed tagger architectures.

Every layer exposes ``forward`` returning ``(output, cache)`` and
``backward(d_output, cache)`` returning the input gradient while
accumulating parameter gradients.  Everything runs in float64.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class NumericalError(FloatingPointError):
    """A NaN/Inf showed up where finite values are required."""


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent PCG64 stream for one stochastic site, keyed by name."""
    seq = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(zlib.crc32(name.encode()),))
    return np.random.Generator(np.random.PCG64(seq))


class Parameter:
    def __init__(self, name: str, value, trainable: bool = True, group: str = "main"):
        self.name = name
        self.value = np.array(value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)
        self.trainable = trainable
        self.group = group

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def check_finite(self) -> None:
        if not np.all(np.isfinite(self.value)):
            raise NumericalError(f"non-finite value in parameter {self.name}")
        if not np.all(np.isfinite(self.grad)):
            raise NumericalError(f"non-finite gradient in parameter {self.name}")

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, group={self.group!r})"


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    """Affine map ``y = x W^T + b`` over the last axis."""

    def __init__(self, name: str, in_dim: int, out_dim: int, rng: np.random.Generator, group: str = "main"):
        self.W = Parameter(f"{name}.W", uniform_init(rng, (out_dim, in_dim), in_dim), group=group)
        self.b = Parameter(f"{name}.b", np.zeros(out_dim), group=group)

    @property
    def params(self) -> list[Parameter]:
        return [self.W, self.b]

    def forward(self, X: np.ndarray):
        if X.shape[-1] != self.W.shape[1]:
            raise ValueError(f"{self.W.name}: input dim {X.shape[-1]} != {self.W.shape[1]}")
        return X @ self.W.value.T + self.b.value, X

    def backward(self, dY: np.ndarray, X: np.ndarray) -> np.ndarray:
        if dY.shape[-1] != self.W.shape[0]:
            raise ValueError(f"{self.W.name}: grad dim {dY.shape[-1]} != {self.W.shape[0]}")
        dY2 = dY.reshape(-1, dY.shape[-1])
        self.W.grad += dY2.T @ X.reshape(-1, X.shape[-1])
        self.b.grad += dY2.sum(axis=0)
        return dY @ self.W.value


def relu(X: np.ndarray):
    mask = X > 0
    return np.where(mask, X, 0.0), mask


def relu_backward(dY: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.where(mask, dY, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class LstmDirection:
    """One unidirectional LSTM; gate order in the stacked weights is i, f, g, o."""

    def __init__(self, name: str, in_dim: int, hidden: int, rng: np.random.Generator, group: str = "main"):
        self.hidden = hidden
        self.W_ih = Parameter(f"{name}.W_ih", uniform_init(rng, (4 * hidden, in_dim), in_dim), group=group)
        self.W_hh = Parameter(f"{name}.W_hh", uniform_init(rng, (4 * hidden, hidden), hidden), group=group)
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0
        self.b = Parameter(f"{name}.b", b, group=group)

    @property
    def params(self) -> list[Parameter]:
        return [self.W_ih, self.W_hh, self.b]

    def forward(self, X: np.ndarray):
        """X: (B, T, d) with valid steps first in every row."""
        B, T, _ = X.shape
        h = self.hidden
        Z_in = X @ self.W_ih.value.T + self.b.value
        W_hh_T = self.W_hh.value.T
        H = np.zeros((B, T, h))
        C = np.zeros((B, T, h))
        gates = np.zeros((B, T, 4 * h))
        h_prev = np.zeros((B, h))
        c_prev = np.zeros((B, h))
        for t in range(T):
            z = Z_in[:, t] + h_prev @ W_hh_T
            g = np.empty_like(z)
            g[:, :2 * h] = sigmoid(z[:, :2 * h])
            g[:, 2 * h:3 * h] = np.tanh(z[:, 2 * h:3 * h])
            g[:, 3 * h:] = sigmoid(z[:, 3 * h:])
            c_prev = g[:, h:2 * h] * c_prev + g[:, :h] * g[:, 2 * h:3 * h]
            h_prev = g[:, 3 * h:] * np.tanh(c_prev)
            gates[:, t] = g
            C[:, t] = c_prev
            H[:, t] = h_prev
        return H, (X, H, C, gates)

    def backward(self, dH: np.ndarray, cache) -> np.ndarray:
        X, H, C, gates = cache
        B, T, _ = X.shape
        h = self.hidden
        W_hh = self.W_hh.value
        dZ = np.zeros((B, T, 4 * h))
        dh_next = np.zeros((B, h))
        dc_next = np.zeros((B, h))
        for t in range(T - 1, -1, -1):
            g = gates[:, t]
            i, f, gg, o = g[:, :h], g[:, h:2 * h], g[:, 2 * h:3 * h], g[:, 3 * h:]
            tanh_c = np.tanh(C[:, t])
            dh = dH[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tanh_c**2)
            c_prev = C[:, t - 1] if t > 0 else np.zeros((B, h))
            dz = dZ[:, t]
            dz[:, :h] = dc * gg * i * (1.0 - i)
            dz[:, h:2 * h] = dc * c_prev * f * (1.0 - f)
            dz[:, 2 * h:3 * h] = dc * i * (1.0 - gg**2)
            dz[:, 3 * h:] = dh * tanh_c * o * (1.0 - o)
            dh_next = dz @ W_hh
            dc_next = dc * f
        dZ2 = dZ.reshape(-1, 4 * h)
        self.W_ih.grad += dZ2.T @ X.reshape(-1, X.shape[-1])
        H_prev = np.concatenate([np.zeros((B, 1, h)), H[:, :-1]], axis=1)
        self.W_hh.grad += dZ2.T @ H_prev.reshape(-1, h)
        self.b.grad += dZ2.sum(axis=0)
        return dZ @ self.W_ih.value


def _reverse_index(lengths: np.ndarray, T: int) -> np.ndarray:
    """Per-row index reversing the first ``length`` steps and fixing padding.

    The map is an involution, so it also undoes itself.
    """
    t = np.arange(T)[None, :]
    L = np.asarray(lengths)[:, None]
    return np.where(t < L, L - 1 - t, t)


class BiLstm:
    def __init__(self, name: str, in_dim: int, hidden: int, rng: np.random.Generator, group: str = "main"):
        self.in_dim = in_dim
        self.hidden = hidden
        self.fwd = LstmDirection(f"{name}.fwd", in_dim, hidden, rng, group)
        self.bwd = LstmDirection(f"{name}.bwd", in_dim, hidden, rng, group)

    @property
    def params(self) -> list[Parameter]:
        return self.fwd.params + self.bwd.params

    @property
    def output_dim(self) -> int:
        return 2 * self.hidden

    def forward(self, X: np.ndarray, lengths: Sequence[int]):
        """X: (B, T, d), zero-padded past each row's length. Returns (B, T, 2h)."""
        B, T, d = X.shape
        if T == 0:
            raise ValueError("BiLSTM needs at least one time step")
        if d != self.in_dim:
            raise ValueError(f"BiLSTM input dim {d} != {self.in_dim}")
        rev = _reverse_index(lengths, T)
        rows = np.arange(B)[:, None]
        Hf, cf = self.fwd.forward(X)
        Hb_rev, cb = self.bwd.forward(X[rows, rev])
        H = np.concatenate([Hf, Hb_rev[rows, rev]], axis=2)
        return H, (rev, cf, cb)

    def backward(self, dH: np.ndarray, cache) -> np.ndarray:
        rev, cf, cb = cache
        rows = np.arange(dH.shape[0])[:, None]
        h = self.hidden
        dX = self.fwd.backward(dH[:, :, :h], cf)
        dX_rev = self.bwd.backward(dH[:, :, h:][rows, rev], cb)
        return dX + dX_rev[rows, rev]


def bilstm_forward(enc: BiLstm, X: np.ndarray):
    """Single sentence convenience: X is (T, d); returns ((T, 2h), cache)."""
    if X.shape[0] == 0:
        raise ValueError("BiLSTM needs at least one time step")
    H, cache = enc.forward(X[None], [X.shape[0]])
    return H[0], cache


def bilstm_backward(enc: BiLstm, dH: np.ndarray, cache) -> np.ndarray:
    return enc.backward(dH[None], cache)[0]


def dropout(X: np.ndarray, p: float, rng: np.random.Generator | None):
    """Inverted dropout; identity when ``p == 0`` or no rng is given."""
    if p <= 0.0 or rng is None:
        return X, None
    keep = (rng.random(X.shape) >= p) / (1.0 - p)
    return X * keep, keep


def dropout_backward(dY: np.ndarray, keep) -> np.ndarray:
    return dY if keep is None else dY * keep


def clip_grad_norm(params: Iterable[Parameter], max_norm: float) -> float:
    params = [p for p in params if p.trainable]
    total = float(np.sqrt(sum(float(np.sum(p.grad**2)) for p in params)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            p.grad *= scale
    return total


def sgd_step(params: Iterable[Parameter], lr: float) -> None:
    """Plain SGD update, then zero the gradients."""
    params = list(params)
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericalError(f"non-finite gradient in parameter {p.name}")
    for p in params:
        if p.trainable and lr != 0.0:
            p.value -= lr * p.grad
        p.zero_grad()


@dataclass
class GradCheckReport:
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def worst(self) -> tuple[str, float]:
        return max(self.errors.items(), key=lambda kv: kv[1])


def grad_check(
    closure: Callable[[], float],
    params: Sequence[Parameter],
    eps: float = 1e-5,
    tolerance: float = 1e-4,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``closure`` must compute the loss from the current parameter values and
    accumulate its gradients into ``Parameter.grad``.  With ``max_entries``,
    a random subset of each parameter's entries is probed.  The per-entry
    error is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    for p in params:
        p.zero_grad()
    closure()
    analytic = {p.name: p.grad.copy() for p in params}
    report = GradCheckReport(tolerance)
    for p in params:
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
        worst = 0.0
        a_flat = analytic[p.name].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = closure()
            flat[i] = orig - eps
            down = closure()
            flat[i] = orig
            num = (up - down) / (2 * eps)
            a = a_flat[i]
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), 1e-8))
        report.errors[p.name] = worst
    for p in params:
        p.zero_grad()
    return report


CHECKPOINT_MAGIC = b"DJCKPT\x00\x00"
CHECKPOINT_VERSION = 1


def dumps_checkpoint(params: Sequence[Parameter]) -> bytes:
    """Binary layout: magic, u32 version, u32 count, then per record
    u32 name length, utf-8 name, u32 ndim, u64 dims, little-endian f64 values."""
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(params))]
    for p in params:
        name = p.name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name)) + name)
        chunks.append(struct.pack("<I", p.value.ndim) + struct.pack(f"<{p.value.ndim}Q", *p.value.shape))
        chunks.append(np.ascontiguousarray(p.value, dtype="<f8").tobytes())
    return b"".join(chunks)


def loads_checkpoint(data: bytes) -> list[tuple[str, np.ndarray]]:
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", data, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 16
    records = []
    for _ in range(count):
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + n].decode("utf-8")
        pos += n
        (ndim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", data, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape)
        pos += 8 * size
        records.append((name, values.astype(DTYPE)))
    if pos != len(data):
        raise ValueError("trailing bytes in checkpoint")
    return records


def load_into(params: Sequence[Parameter], data: bytes) -> None:
    """Restore values in place, validating names and shapes against ``params``."""
    records = loads_checkpoint(data)
    by_name = {p.name: p for p in params}
    if [r[0] for r in records] != [p.name for p in params]:
        missing = set(by_name) ^ {r[0] for r in records}
        raise ValueError(f"checkpoint parameters do not match the model: {sorted(missing)[:5]}")
    for name, values in records:
        p = by_name[name]
        if values.shape != p.shape:
            raise ValueError(f"shape mismatch for {name}: checkpoint {values.shape}, model {p.shape}")
        p.value[...] = values
