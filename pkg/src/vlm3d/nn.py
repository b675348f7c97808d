"""Neural-net building blocks over the autodiff engine.

Modules register Parameters through plain attribute assignment; nested
modules and lists of modules are walked recursively, so ``state_dict``
names look like ``blocks.2.attn.wq.weight``.

Checkpoint format (named-tensor binary, little-endian throughout):
    magic   4 bytes  b"NTV1"
    count   uint32   number of tensors
    per tensor:
        name_len uint32, name utf-8,
        dtype    uint8 (0=float32, 1=float64, 2=uint8, 3=int64),
        ndim     uint8, dims ndim x uint32,
        payload  row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CKPT_MAGIC = b"NTV1"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1"), 3: np.dtype("<i8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("uint8"): 2, np.dtype("int64"): 3}


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data):
        super().__init__(np.ascontiguousarray(data), requires_grad=True)


class Module:
    """Base class with recursive parameter discovery."""

    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{name}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def param_count(self, trainable_only: bool = False) -> int:
        return sum(p.data.size for p in self.parameters()
                   if p.requires_grad or not trainable_only)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def requires_grad_(self, flag: bool):
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True):
        mine = dict(self.named_parameters())
        missing = set(mine) - set(state)
        extra = set(state) - set(mine)
        if strict and (missing or extra):
            raise KeyError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in mine.items():
            if name in state:
                arr = np.asarray(state[name])
                if arr.shape != p.data.shape:
                    raise ValueError(f"{name}: shape {arr.shape} != {p.data.shape}")
                p.data = np.ascontiguousarray(arr, dtype=p.data.dtype)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 bias: bool = True, std: float = 0.02, dtype=np.float32):
        self.weight = Parameter(rng.normal(0.0, std, size=(d_in, d_out)).astype(dtype))
        self.bias = Parameter(np.zeros(d_out, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out

    @property
    def d_in(self) -> int:
        return self.weight.data.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.data.shape[1]


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        self.weight = Parameter(np.ones(dim, dtype=dtype))
        self.bias = Parameter(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.eps) * self.weight + self.bias


class Embedding(Module):
    def __init__(self, n: int, dim: int, rng: np.random.Generator,
                 std: float = 0.02, dtype=np.float32):
        self.weight = Parameter(rng.normal(0.0, std, size=(n, dim)).astype(dtype))

    def __call__(self, ids: np.ndarray) -> Tensor:
        return ad.take_rows(self.weight, ids)


class SelfAttention(Module):
    """Multi-head self-attention; mask is additive on the score matrix."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        if dim % heads:
            raise ValueError(f"width {dim} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(dim, dim, rng, dtype=dtype)
        self.wk = Linear(dim, dim, rng, dtype=dtype)
        self.wv = Linear(dim, dim, rng, dtype=dtype)
        self.wo = Linear(dim, dim, rng, dtype=dtype)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        b, n, d = x.shape
        h, hd = self.heads, self.head_dim

        def split(t):  # (B, n, d) -> (B, h, n, hd)
            return t.reshape(b, n, h, hd).transpose(0, 2, 1, 3)

        q, k, v = split(self.wq(x)), split(self.wk(x)), split(self.wv(x))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(hd))
        if mask is not None:
            scores = scores + mask.astype(x.dtype)
        att = ad.softmax(scores, axis=-1)
        out = (att @ v).transpose(0, 2, 1, 3).reshape(b, n, d)
        return self.wo(out)


class Mlp(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        self.fc1 = Linear(dim, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, dim, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self.fc1(x).gelu())


class TransformerBlock(Module):
    """Pre-norm block: x + attn(ln(x)), then x + mlp(ln(x))."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 mlp_ratio: int = 4, dtype=np.float32):
        self.ln1 = LayerNorm(dim, dtype=dtype)
        self.attn = SelfAttention(dim, heads, rng, dtype=dtype)
        self.ln2 = LayerNorm(dim, dtype=dtype)
        self.mlp = Mlp(dim, dim * mlp_ratio, rng, dtype=dtype)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        x = x + self.attn(self.ln1(x), mask)
        return x + self.mlp(self.ln2(x))


def causal_mask(n: int) -> np.ndarray:
    """(1, 1, n, n) additive mask: position t may attend to positions <= t."""
    m = np.triu(np.full((n, n), -1e9, dtype=np.float32), k=1)
    return m[None, None]


def key_padding_mask(lengths: np.ndarray, n: int) -> np.ndarray:
    """(B, 1, 1, n) additive mask hiding key positions >= each row's length."""
    cols = np.arange(n)[None, :]
    blocked = cols >= np.asarray(lengths)[:, None]
    return np.where(blocked, -1e9, 0.0).astype(np.float32)[:, None, None, :]


# ---- checkpoint IO ----------------------------------------------------


def save_tensors(state: dict[str, np.ndarray], path) -> None:
    chunks = [CKPT_MAGIC, struct.pack("<I", len(state))]
    for name, arr in state.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _CODES:
            raise ValueError(f"{name}: unsupported checkpoint dtype {arr.dtype}")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype(arr.dtype.newbyteorder("<")).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_tensors(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (count,) = struct.unpack("<I", raw[4:8])
    off = 8
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off:off + name_len].decode("utf-8")
        off += name_len
        code, ndim = struct.unpack_from("<BB", raw, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        dt = _DTYPES[code]
        n_bytes = int(np.prod(shape)) * dt.itemsize if ndim else dt.itemsize
        out[name] = np.frombuffer(raw[off:off + n_bytes], dtype=dt).reshape(shape).copy()
        off += n_bytes
    return out
