"""Named parameter tensors with paired gradient accumulators.

A :class:`ParamStore` owns every learnable array in a model.  Graphs read
parameter values and add into the gradient accumulators during backward;
:func:`sgd_step` consumes the accumulators.  Checkpoints are a simple
length-prefixed binary format (see :func:`save_checkpoint`).
"""

from __future__ import annotations

import math
import struct

import numpy as np

CHECKPOINT_MAGIC = b"MCTSNET1"
_STEP_ENTRY = "trainer.step"  # reserved rank-0 entry holding the step counter


class GradientError(RuntimeError):
    """Raised when a gradient accumulator contains NaN or Inf."""


def assert_finite(array: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(array)):
        raise GradientError(f"non-finite values in {name}")


class ParamStore:
    """Map of name -> (value, gradient) pairs plus an optimizer step counter."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.values:
            raise ValueError(f"parameter {name!r} already exists")
        arr = np.asarray(value, dtype=self.dtype)
        self.values[name] = arr
        self.grads[name] = np.zeros_like(arr)

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def names(self) -> list[str]:
        return sorted(self.values)

    def n_scalars(self) -> int:
        return sum(v.size for v in self.values.values())

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def grad_norm(self) -> float:
        total = 0.0
        for g in self.grads.values():
            total += float(np.sum(g * g))
        return math.sqrt(total)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.values.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, arr in values.items():
            if name not in self.values:
                raise KeyError(f"unknown parameter {name!r}")
            if self.values[name].shape != arr.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: store has {self.values[name].shape}, got {arr.shape}"
                )
            self.values[name][...] = arr

    # -- parameter initializers ------------------------------------------

    def add_linear(self, name: str, fan_in: int, fan_out: int, rng: np.random.Generator) -> None:
        a = math.sqrt(6.0 / (fan_in + fan_out))
        self.add(f"{name}.W", rng.uniform(-a, a, size=(fan_in, fan_out)))
        self.add(f"{name}.b", np.zeros(fan_out))

    def add_linear_zero(self, name: str, fan_in: int, fan_out: int) -> None:
        """Zero-initialized output layer; gives a uniform initial distribution."""
        self.add(f"{name}.W", np.zeros((fan_in, fan_out)))
        self.add(f"{name}.b", np.zeros(fan_out))

    def add_conv(self, name: str, c_in: int, c_out: int, ksize: int, rng: np.random.Generator) -> None:
        fan_in = c_in * ksize * ksize
        fan_out = c_out * ksize * ksize
        a = math.sqrt(6.0 / (fan_in + fan_out))
        self.add(f"{name}.K", rng.uniform(-a, a, size=(c_out, c_in, ksize, ksize)))
        self.add(f"{name}.b", np.zeros(c_out))

    def add_scalar(self, name: str, value: float) -> None:
        self.add(name, np.asarray(value))


def sgd_step(store: ParamStore, lr: float) -> None:
    """value <- value - lr * grad for every entry; zeroes grads; bumps step."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for name in store.values:
        g = store.grads[name]
        if not np.all(np.isfinite(g)):
            raise GradientError(f"NaN/Inf gradient in parameter {name!r}")
        store.values[name] -= lr * g
        g[...] = 0.0
    store.step += 1


# ---------------------------------------------------------------------------
# Checkpoint format: magic, then per entry (lexicographic by name):
#   u64 name length | name utf-8 | u64 rank | u64 dims... | float64 data (LE)
# The optimizer step counter travels as the reserved rank-0 entry
# "trainer.step" so a resumed run continues its step numbering.


def save_checkpoint(store: ParamStore, path: str) -> None:
    entries = {name: np.asarray(value, dtype="<f8") for name, value in store.values.items()}
    entries[_STEP_ENTRY] = np.asarray(float(store.step), dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for name in sorted(entries):
            arr = entries[name]
            raw = name.encode("utf-8")
            fh.write(struct.pack("<Q", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<Q", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(arr.tobytes(order="C"))


def read_checkpoint(path: str) -> tuple[dict[str, np.ndarray], int]:
    """Raw checkpoint contents: (entries, step)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint (bad magic)")
    off = len(CHECKPOINT_MAGIC)
    entries: dict[str, np.ndarray] = {}
    while off < len(blob):
        (name_len,) = struct.unpack_from("<Q", blob, off)
        off += 8
        name = blob[off : off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<Q", blob, off)
        off += 8
        shape = []
        for _ in range(rank):
            (dim,) = struct.unpack_from("<Q", blob, off)
            off += 8
            shape.append(dim)
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape)
        off += count * 8
        entries[name] = arr.copy()
    step = int(entries.pop(_STEP_ENTRY, np.asarray(0.0)))
    return entries, step


def load_checkpoint(store: ParamStore, path: str) -> None:
    """Load values into an existing store; shapes must match exactly."""
    entries, step = read_checkpoint(path)
    missing = set(store.values) - set(entries)
    extra = set(entries) - set(store.values)
    if missing or extra:
        raise ValueError(
            f"checkpoint does not match model: missing={sorted(missing)} unexpected={sorted(extra)}"
        )
    for name, arr in entries.items():
        if store.values[name].shape != arr.shape:
            raise ValueError(
                f"shape mismatch for {name!r}: model has {store.values[name].shape}, "
                f"checkpoint has {arr.shape}"
            )
        store.values[name][...] = arr.astype(store.dtype)
    store.step = step
