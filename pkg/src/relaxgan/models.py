"""Generator and discriminator networks: peephole LSTM and residual 1-D CNN.

Samples are (batch, length, k) arrays of probability rows.  Generators map
noise of shape (batch, length, d) to such rows; discriminators map them to one
score per sample.  Parameters live in plain ordered dicts of Tensors so the
optimizer and the checkpoint code can treat every model the same way.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ModelParams = dict  # name -> Tensor, insertion ordered

LSTM_INIT = 0.08
BN_MOMENTUM = 0.9


class UnsupportedConfigError(ValueError):
    pass


def _param(arr, name) -> Tensor:
    return Tensor(arr, requires_grad=True, name=name)


def _check_width(kind, x, width, what):
    if x.shape[-1] != width:
        raise ad.ShapeError(f"{kind}: {what} has width {x.shape[-1]}, expected {width}")


# ---------------------------------------------------------------------------
# LSTM

def init_lstm(rng: np.random.Generator, n_in: int, hidden: int, k: int | None,
              peephole: bool, n_out: int | None = None, head: bool = False) -> ModelParams:
    """Fused gate weights in order [i, f, o, c], uniform in [-0.08, 0.08]."""
    u = lambda *s: rng.uniform(-LSTM_INIT, LSTM_INIT, size=s)
    p = {"W_x": _param(u(n_in, 4 * hidden), "W_x"),
         "W_h": _param(u(hidden, 4 * hidden), "W_h")}
    if peephole:
        p["W_p"] = _param(u(k, 4 * hidden), "W_p")
    p["b"] = _param(np.zeros(4 * hidden), "b")
    if n_out is not None:
        p["W_out"] = _param(u(hidden, n_out), "W_out")
        p["b_out"] = _param(np.zeros(n_out), "b_out")
    if head:
        p["W_pred"] = _param(u(hidden, 1), "W_pred")
        p["b_pred"] = _param(np.zeros(1), "b_pred")
    return p


def lstm_step(params: ModelParams, x_t, h_prev, c_prev, y_prev=None, x_proj=None):
    """One LSTM update with an optional output peephole.

    ``x_proj`` may carry a precomputed ``x_t @ W_x`` so sequence loops can do the
    input projection for all steps at once.  Returns (h_t, c_t).
    """
    hidden = params["W_h"].shape[0]
    _check_width("lstm_step", h_prev, hidden, "h")
    _check_width("lstm_step", c_prev, hidden, "c")
    if x_proj is None:
        _check_width("lstm_step", x_t, params["W_x"].shape[0], "x")
        x_proj = ad.matmul(x_t, params["W_x"])
    pre = x_proj + ad.matmul(h_prev, params["W_h"]) + params["b"]
    if "W_p" in params and y_prev is not None:
        _check_width("lstm_step", y_prev, params["W_p"].shape[0], "y")
        pre = pre + ad.matmul(y_prev, params["W_p"])
    gates = ad.sigmoid(pre[..., :3 * hidden])
    i = gates[..., :hidden]
    f = gates[..., hidden:2 * hidden]
    o = gates[..., 2 * hidden:]
    cand = ad.tanh(pre[..., 3 * hidden:])
    c = f * c_prev + i * cand
    h = o * ad.tanh(c)
    return h, c


class LstmGenerator:
    kind = "lstm"

    def __init__(self, noise_dim: int, hidden: int, k: int, peephole: bool = True,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.noise_dim, self.hidden, self.k, self.peephole = noise_dim, hidden, k, peephole
        self.params = init_lstm(rng, noise_dim, hidden, k, peephole, n_out=k)
        self.buffers: dict = {}

    def config(self) -> dict:
        return {"arch": "lstm", "noise_dim": self.noise_dim, "hidden": self.hidden,
                "k": self.k, "peephole": self.peephole}

    def __call__(self, z, train: bool = True, condition=None) -> Tensor:
        if condition is not None:
            raise UnsupportedConfigError("conditioning is only supported for convolutional models")
        z = ad.as_tensor(z)
        _check_width("lstm generator", z, self.noise_dim, "noise")
        p = self.params
        bsz, n, _ = z.shape
        xp = ad.matmul(z, p["W_x"])
        h = c = Tensor(np.zeros((bsz, self.hidden)))
        y = Tensor(np.zeros((bsz, self.k)))  # y_0: the peephole starts switched off
        outs = []
        for t in range(n):
            h, c = lstm_step(p, None, h, c, y, x_proj=xp[:, t])
            y = ad.softmax(ad.matmul(h, p["W_out"]) + p["b_out"])
            outs.append(y)
        return ad.stack(outs, axis=1)


class LstmDiscriminator:
    kind = "lstm"

    def __init__(self, k: int, hidden: int, peephole: bool = False,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.k, self.hidden, self.peephole = k, hidden, peephole
        # a discriminator peephole feeds back its own input row
        self.params = init_lstm(rng, k, hidden, k, peephole, head=True)
        self.buffers: dict = {}

    def config(self) -> dict:
        return {"arch": "lstm", "k": self.k, "hidden": self.hidden, "peephole": self.peephole}

    def __call__(self, x, train: bool = True, condition=None) -> Tensor:
        """Raw logit per sample, shape (batch,)."""
        if condition is not None:
            raise UnsupportedConfigError("conditioning is only supported for convolutional models")
        x = ad.as_tensor(x)
        _check_width("lstm discriminator", x, self.k, "sample")
        p = self.params
        bsz, n, _ = x.shape
        xp = ad.matmul(x, p["W_x"])
        h = c = Tensor(np.zeros((bsz, self.hidden)))
        y = Tensor(np.zeros((bsz, self.k)))
        for t in range(n):
            h, c = lstm_step(p, None, h, c, y, x_proj=xp[:, t])
            y = x[:, t]
        return ad.reshape(ad.matmul(h, p["W_pred"]) + p["b_pred"], (bsz,))


# ---------------------------------------------------------------------------
# residual CNN

@dataclass(frozen=True)
class ConditionSpec:
    attribute: int = 0
    present: bool = True


def apply_condition(activations, spec: ConditionSpec | None, arch: str = "cnn"):
    """Append one constant channel: all ones when the attribute is present."""
    if arch != "cnn":
        raise UnsupportedConfigError("conditioning is only supported for convolutional models")
    if spec is None:
        return activations
    x = ad.as_tensor(activations)
    if isinstance(spec, ConditionSpec):
        plane = np.full(x.shape[:-1] + (1,), 1.0 if spec.present else 0.0)
    else:  # per-sample 0/1 labels
        lab = np.asarray(spec, dtype=np.float64).reshape(-1, 1, 1)
        plane = np.broadcast_to(lab, x.shape[:-1] + (1,)).copy()
    return ad.concat([x, Tensor(plane)], axis=-1)


class ResidualCnn:
    """Input projection, ``n_blocks`` residual blocks of two same-convolutions,
    and a final convolution to ``n_out`` channels."""

    kind = "cnn"

    def __init__(self, n_in: int, n_out: int, channels: int = 128, width: int = 5,
                 n_blocks: int = 5, batch_norm: bool = True, conditional: bool = False,
                 rng: np.random.Generator | None = None):
        if width % 2 == 0:
            raise ValueError("kernel width must be odd")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.n_out, self.channels, self.width = n_in, n_out, channels, width
        self.n_blocks, self.use_bn, self.conditional = n_blocks, batch_norm, conditional
        extra = 1 if conditional else 0

        def he(kw, cin, cout, name):
            std = np.sqrt(2.0 / (kw * cin))
            return _param(rng.normal(0.0, std, size=(kw, cin, cout)), name)

        p = {"proj": he(1, n_in + extra, channels, "proj"),
             "proj_b": _param(np.zeros(channels), "proj_b")}
        self.buffers = {}
        for b in range(n_blocks):
            for j in (1, 2):
                key = f"block{b}.conv{j}"
                p[key] = he(width, channels + extra, channels, key)
                p[key + "_b"] = _param(np.zeros(channels), key + "_b")
                if batch_norm:
                    p[key + ".gamma"] = _param(np.ones(channels), key + ".gamma")
                    p[key + ".beta"] = _param(np.zeros(channels), key + ".beta")
                    self.buffers[key + ".mean"] = np.zeros(channels)
                    self.buffers[key + ".var"] = np.ones(channels)
        p["out"] = he(width, channels + extra, n_out, "out")
        p["out_b"] = _param(np.zeros(n_out), "out_b")
        self.params = p

    def config(self) -> dict:
        return {"arch": "cnn", "n_in": self.n_in, "n_out": self.n_out, "channels": self.channels,
                "width": self.width, "n_blocks": self.n_blocks, "batch_norm": self.use_bn,
                "conditional": self.conditional}

    def _cond(self, x, condition):
        if not self.conditional:
            return x
        if condition is None:
            raise ValueError("conditional model needs a condition")
        return apply_condition(x, condition)

    def _norm(self, x, key, train):
        if not self.use_bn:
            return x
        g, b = self.params[key + ".gamma"], self.params[key + ".beta"]
        if train:
            out = ad.batch_norm(x, g, b)
            mu = x.data.mean(axis=(0, 1))
            var = x.data.var(axis=(0, 1))
            self.buffers[key + ".mean"] = BN_MOMENTUM * self.buffers[key + ".mean"] + (1 - BN_MOMENTUM) * mu
            self.buffers[key + ".var"] = BN_MOMENTUM * self.buffers[key + ".var"] + (1 - BN_MOMENTUM) * var
            return out
        inv = 1.0 / np.sqrt(self.buffers[key + ".var"] + 1e-5)
        return (x - self.buffers[key + ".mean"]) * Tensor(inv) * g + b

    def block(self, x, b: int, train: bool = True, condition=None):
        p = self.params
        h = x
        for j in (1, 2):
            key = f"block{b}.conv{j}"
            h = ad.relu(h)
            h = ad.conv1d_same(self._cond(h, condition), p[key]) + p[key + "_b"]
            h = self._norm(h, key, train)
        return x + h

    def features(self, x, train: bool = True, condition=None):
        p = self.params
        x = ad.as_tensor(x)
        _check_width("cnn", x, self.n_in, "input")
        h = ad.conv1d_same(self._cond(x, condition), p["proj"]) + p["proj_b"]
        for b in range(self.n_blocks):
            h = self.block(h, b, train, condition)
        h = ad.relu(h)
        return ad.conv1d_same(self._cond(h, condition), p["out"]) + p["out_b"]


class CnnGenerator(ResidualCnn):
    def __init__(self, noise_dim: int, k: int, **kw):
        super().__init__(noise_dim, k, **kw)
        self.noise_dim, self.k = noise_dim, k

    def config(self) -> dict:
        return {**super().config(), "noise_dim": self.noise_dim, "k": self.k}

    def __call__(self, z, train: bool = True, condition=None) -> Tensor:
        return ad.softmax(self.features(z, train, condition))


class CnnDiscriminator(ResidualCnn):
    def __init__(self, k: int, **kw):
        super().__init__(k, 1, **kw)
        self.k = k

    def config(self) -> dict:
        return {**super().config(), "k": self.k}

    def __call__(self, x, train: bool = True, condition=None) -> Tensor:
        """Raw score per sample: mean over positions of the single output channel."""
        f = self.features(x, train, condition)
        return ad.mean(ad.reshape(f, f.shape[:2]), axis=1)


# ---------------------------------------------------------------------------
# convenience wrappers

def generate_sequence(generator, z, train: bool = False, condition=None) -> Tensor:
    """Noise (n, d) or (batch, n, d) to probability rows of matching rank."""
    z = ad.as_tensor(z)
    single = z.ndim == 2
    if single:
        z = ad.reshape(z, (1,) + z.shape)
    y = generator(z, train=train, condition=condition)
    return ad.reshape(y, y.shape[1:]) if single else y


def greedy_decode(distributions) -> np.ndarray:
    """Row-wise argmax; numpy's argmax already picks the lowest index on ties."""
    d = distributions.data if isinstance(distributions, Tensor) else np.asarray(distributions)
    return np.argmax(d, axis=-1)


def discriminate(discriminator, sample, head: str = "sigmoid", train: bool = False,
                 condition=None) -> Tensor:
    """Score samples; ``head`` is ``sigmoid`` for probability heads, ``raw`` for critics."""
    x = ad.as_tensor(sample)
    single = x.ndim == 2
    if single:
        x = ad.reshape(x, (1,) + x.shape)
    s = discriminator(x, train=train, condition=condition)
    if head == "sigmoid":
        s = ad.sigmoid(s)
    elif head != "raw":
        raise ValueError(f"unknown head {head!r}")
    return ad.reshape(s, ()) if single else s


def build_generator(cfg: dict, k: int, rng) -> LstmGenerator | CnnGenerator:
    cfg = dict(cfg)
    arch = cfg.pop("arch")
    if arch == "lstm":
        if cfg.get("conditional"):
            raise UnsupportedConfigError("conditioning is only supported for convolutional models")
        return LstmGenerator(cfg["noise_dim"], cfg["hidden"], k, cfg.get("peephole", True), rng=rng)
    if arch == "cnn":
        return CnnGenerator(cfg["noise_dim"], k, channels=cfg.get("channels", 128),
                            width=cfg.get("width", 5), n_blocks=cfg.get("n_blocks", 5),
                            batch_norm=cfg.get("batch_norm", True),
                            conditional=cfg.get("conditional", False), rng=rng)
    raise ValueError(f"unknown generator architecture {arch!r}")


def build_discriminator(cfg: dict, k: int, rng) -> LstmDiscriminator | CnnDiscriminator:
    cfg = dict(cfg)
    arch = cfg.pop("arch")
    if arch == "lstm":
        if cfg.get("conditional"):
            raise UnsupportedConfigError("conditioning is only supported for convolutional models")
        return LstmDiscriminator(k, cfg["hidden"], cfg.get("peephole", False), rng=rng)
    if arch == "cnn":
        return CnnDiscriminator(k, channels=cfg.get("channels", 128), width=cfg.get("width", 5),
                                n_blocks=cfg.get("n_blocks", 5),
                                batch_norm=cfg.get("batch_norm", True),
                                conditional=cfg.get("conditional", False), rng=rng)
    raise ValueError(f"unknown discriminator architecture {arch!r}")


# ---------------------------------------------------------------------------
# checkpoint files
#
# layout: 8-byte magic, u32 version, u64 header length, UTF-8 JSON header,
# then the float64 little-endian payload of every array in header order.

MAGIC = b"RLXGANCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: dict, meta: dict | None = None):
    names = list(arrays)
    blobs = [np.asarray(arrays[n], dtype="<f8", order="C") for n in names]
    header = json.dumps({"arrays": [[n, list(b.shape)] for n, b in zip(names, blobs)],
                         "meta": meta or {}}, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b.tobytes())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if len(raw) < 20:
        raise CheckpointError(f"{path}: truncated header")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    if len(raw) < 20 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[20:20 + hlen].decode("utf-8"))
        specs = header["arrays"]
    except (ValueError, KeyError, UnicodeDecodeError) as e:
        raise CheckpointError(f"{path}: corrupted header ({e})") from None
    off = 20 + hlen
    arrays = {}
    for name, shape in specs:
        n = int(np.prod(shape, dtype=np.int64)) * 8
        if off + n > len(raw):
            raise CheckpointError(f"{path}: truncated payload at array {name!r}")
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=n // 8, offset=off).reshape(shape).copy()
        off += n
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return arrays, header["meta"]


def model_arrays(model, prefix: str) -> dict:
    out = {f"{prefix}/{n}": t.data for n, t in model.params.items()}
    out.update({f"{prefix}#{n}": np.asarray(v) for n, v in model.buffers.items()})
    return out


def load_model_arrays(model, arrays: dict, prefix: str):
    for n, t in model.params.items():
        key = f"{prefix}/{n}"
        if key not in arrays or arrays[key].shape != t.shape:
            raise CheckpointError(f"checkpoint has no matching array for {key}")
        t.data = arrays[key].copy()
    for n in list(model.buffers):
        model.buffers[n] = arrays[f"{prefix}#{n}"].copy()
