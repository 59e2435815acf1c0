"""The tiny sequence model: flat-parameter storage and exact forward/backward.

Two architectures share the same parameter-vector contract:

* ``gated-recurrent`` (default): stacked gated recurrent layers; the
  per-timestep scan runs on the selected kernel backend.
* ``small-attention``: single-head causal attention blocks with a tanh MLP,
  entirely in numpy (no per-step scan to accelerate).

All arithmetic is float64; training runs are pure functions of
(config, seed).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from clpd import rng
from clpd.errors import ConfigError, DataFormatError
from clpd.model import backend as backend_mod
from clpd.model.workspace import Workspace, default_workspace

ARCHS = ("gated-recurrent", "small-attention")

_CKPT_MAGIC = b"CLPDCKPT"


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    embed_dim: int
    hidden_dim: int
    num_layers: int
    context_len: int
    arch: str = "gated-recurrent"

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "hidden_dim", "num_layers", "context_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown arch {self.arch!r}, expected one of {ARCHS}")
        if self.arch == "small-attention" and self.embed_dim != self.hidden_dim:
            raise ConfigError("small-attention requires embed_dim == hidden_dim")


def _layout_entries(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    v, e, h, c = cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim, cfg.context_len
    entries: list[tuple[str, tuple[int, ...]]] = [("embed", (v, e))]
    if cfg.arch == "gated-recurrent":
        for layer in range(cfg.num_layers):
            d_in = e if layer == 0 else h
            entries += [
                (f"layer{layer}.wx", (3 * h, d_in)),
                (f"layer{layer}.u", (3 * h, h)),
                (f"layer{layer}.b", (3 * h,)),
            ]
    else:
        d = h
        f = 2 * d
        entries.append(("pos", (c, d)))
        for layer in range(cfg.num_layers):
            entries += [
                (f"layer{layer}.wq", (d, d)),
                (f"layer{layer}.wk", (d, d)),
                (f"layer{layer}.wv", (d, d)),
                (f"layer{layer}.wo", (d, d)),
                (f"layer{layer}.w1", (f, d)),
                (f"layer{layer}.b1", (f,)),
                (f"layer{layer}.w2", (d, f)),
                (f"layer{layer}.b2", (d,)),
            ]
    entries += [("out.w", (v, h)), ("out.b", (v,))]
    return entries


@dataclass
class StudentModel:
    """Architecture config plus one flat float64 weight vector."""

    config: ModelConfig
    params: np.ndarray
    param_layout: dict[str, tuple[int, tuple[int, ...]]] = field(repr=False)

    def __post_init__(self):
        total = sum(int(np.prod(shape)) for _, (_, shape) in self.param_layout.items())
        if self.params.shape != (total,):
            raise ConfigError(
                f"params length {self.params.shape} does not match layout total {total}"
            )

    def view(self, name: str) -> np.ndarray:
        offset, shape = self.param_layout[name]
        size = int(np.prod(shape))
        return self.params[offset : offset + size].reshape(shape)

    def slice_of(self, grad: np.ndarray, name: str) -> np.ndarray:
        offset, shape = self.param_layout[name]
        size = int(np.prod(shape))
        return grad[offset : offset + size].reshape(shape)

    def zeros_grad(self) -> np.ndarray:
        return np.zeros_like(self.params)

    def copy(self) -> "StudentModel":
        return StudentModel(self.config, self.params.copy(), dict(self.param_layout))

    @property
    def num_params(self) -> int:
        return self.params.size


def build_layout(cfg: ModelConfig) -> dict[str, tuple[int, tuple[int, ...]]]:
    layout = {}
    offset = 0
    for name, shape in _layout_entries(cfg):
        layout[name] = (offset, shape)
        offset += int(np.prod(shape))
    return layout


def init_model(cfg: ModelConfig, seed: int) -> StudentModel:
    """Deterministic init: N(0, 1/fan_in) weights per named slice, zero biases."""
    layout = build_layout(cfg)
    total = sum(int(np.prod(shape)) for _, shape in layout.values())
    params = np.zeros(total)
    model = StudentModel(cfg, params, layout)
    for name, (_, shape) in layout.items():
        if name.endswith((".b", ".b1", ".b2", "out.b")) or name == "out.b":
            continue
        gen = rng.stream(seed, "init", name)
        if name in ("embed", "pos"):
            scale = 1.0 / np.sqrt(shape[1])
        else:
            scale = 1.0 / np.sqrt(shape[-1])
        model.view(name)[...] = gen.normal(0.0, scale, size=shape)
    return model


def _check_tokens(cfg: ModelConfig, tokens: np.ndarray) -> None:
    if tokens.ndim != 2:
        raise ValueError(f"expected (batch, time) token array, got shape {tokens.shape}")
    if tokens.shape[1] > cfg.context_len:
        raise ValueError(
            f"sequence length {tokens.shape[1]} exceeds context_len {cfg.context_len}"
        )
    if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab_size):
        raise ValueError("token index out of vocabulary range")


# --- gated-recurrent engine --------------------------------------------------


def _gru_forward(model: StudentModel, tokens: np.ndarray, kernels, ws: Workspace):
    batch, steps = tokens.shape
    cfg = model.config
    x = ws.get("fwd.emb", (batch, steps, cfg.embed_dim))
    np.take(
        model.view("embed"), tokens.ravel(), axis=0,
        out=x.reshape(batch * steps, cfg.embed_dim),
    )
    layer_caches = []
    h0 = np.zeros((batch, cfg.hidden_dim))
    for layer in range(cfg.num_layers):
        wx = model.view(f"layer{layer}.wx")
        u = model.view(f"layer{layer}.u")
        b = model.view(f"layer{layer}.b")
        xproj = ws.get(f"fwd.l{layer}.xproj", (batch, steps, 3 * cfg.hidden_dim))
        flat = xproj.reshape(batch * steps, -1)
        np.matmul(x.reshape(batch * steps, -1), wx.T, out=flat)
        flat += b
        h = ws.get(f"fwd.l{layer}.h", (batch, steps, cfg.hidden_dim))
        stash = tuple(
            ws.get(f"fwd.l{layer}.{name}", (batch, steps, cfg.hidden_dim))
            for name in ("z", "r", "c", "ahc")
        )
        kernels.scan_forward(u, xproj, h0, h, *stash)
        layer_caches.append((x, xproj, h, stash))
        x = h
    logits = ws.get("fwd.logits", (batch, steps, cfg.vocab_size))
    np.matmul(
        x.reshape(batch * steps, -1), model.view("out.w").T,
        out=logits.reshape(batch * steps, -1),
    )
    logits += model.view("out.b")
    return logits, (tokens, layer_caches, x)


def _gru_backward(
    model: StudentModel, cache, dlogits: np.ndarray, kernels, ws: Workspace
) -> np.ndarray:
    tokens, layer_caches, top = cache
    batch, steps = tokens.shape
    cfg = model.config
    grad = ws.zeros("bwd.grad", (model.num_params,))
    flat_top = top.reshape(batch * steps, -1)
    flat_dlog = dlogits.reshape(batch * steps, -1)
    model.slice_of(grad, "out.w")[...] = flat_dlog.T @ flat_top
    model.slice_of(grad, "out.b")[...] = flat_dlog.sum(axis=0)
    dx = ws.get(f"bwd.dh{cfg.num_layers - 1}", (batch, steps, cfg.hidden_dim))
    np.matmul(flat_dlog, model.view("out.w"), out=dx.reshape(batch * steps, -1))
    h0 = np.zeros((batch, cfg.hidden_dim))
    du = np.empty((3 * cfg.hidden_dim, cfg.hidden_dim))
    dh = np.empty((batch, cfg.hidden_dim))
    for layer in range(cfg.num_layers - 1, -1, -1):
        x_in, xproj, h, stash = layer_caches[layer]
        u = model.view(f"layer{layer}.u")
        wx = model.view(f"layer{layer}.wx")
        dxproj = ws.get(f"bwd.l{layer}.dxproj", (batch, steps, 3 * cfg.hidden_dim))
        kernels.scan_backward(u, h0, h, *stash, dx, dxproj, du, dh)
        flat_dxp = dxproj.reshape(batch * steps, -1)
        flat_xin = x_in.reshape(batch * steps, -1)
        model.slice_of(grad, f"layer{layer}.u")[...] = du
        model.slice_of(grad, f"layer{layer}.wx")[...] = flat_dxp.T @ flat_xin
        model.slice_of(grad, f"layer{layer}.b")[...] = flat_dxp.sum(axis=0)
        d_in = cfg.embed_dim if layer == 0 else cfg.hidden_dim
        name = "bwd.demb" if layer == 0 else f"bwd.dh{layer - 1}"
        dx = ws.get(name, (batch, steps, d_in))
        np.matmul(flat_dxp, wx, out=dx.reshape(batch * steps, -1))
    demb = model.slice_of(grad, "embed")
    np.add.at(demb, tokens.ravel(), dx.reshape(batch * steps, -1))
    return grad


# --- small-attention engine --------------------------------------------------


def _attn_forward(model: StudentModel, tokens: np.ndarray):
    batch, steps = tokens.shape
    d = model.config.hidden_dim
    x = model.view("embed")[tokens] + model.view("pos")[:steps]
    neg = np.triu(np.full((steps, steps), -1e30), k=1)
    layer_caches = []
    for layer in range(model.config.num_layers):
        wq, wk = model.view(f"layer{layer}.wq"), model.view(f"layer{layer}.wk")
        wv, wo = model.view(f"layer{layer}.wv"), model.view(f"layer{layer}.wo")
        q, k, v = x @ wq.T, x @ wk.T, x @ wv.T
        scores = q @ k.transpose(0, 2, 1) / np.sqrt(d) + neg
        scores -= scores.max(axis=-1, keepdims=True)
        att = np.exp(scores)
        att /= att.sum(axis=-1, keepdims=True)
        ctx = att @ v
        a = x + ctx @ wo.T
        w1, b1 = model.view(f"layer{layer}.w1"), model.view(f"layer{layer}.b1")
        w2, b2 = model.view(f"layer{layer}.w2"), model.view(f"layer{layer}.b2")
        t1 = np.tanh(a @ w1.T + b1)
        out = a + t1 @ w2.T + b2
        layer_caches.append((x, q, k, v, att, ctx, a, t1))
        x = out
    logits = x @ model.view("out.w").T + model.view("out.b")
    return logits, (tokens, layer_caches, x)


def _attn_backward(model: StudentModel, cache, dlogits: np.ndarray) -> np.ndarray:
    tokens, layer_caches, top = cache
    batch, steps = tokens.shape
    d = model.config.hidden_dim
    grad = model.zeros_grad()
    flat_top = top.reshape(batch * steps, -1)
    flat_dlog = dlogits.reshape(batch * steps, -1)
    model.slice_of(grad, "out.w")[...] = flat_dlog.T @ flat_top
    model.slice_of(grad, "out.b")[...] = flat_dlog.sum(axis=0)
    dout = (flat_dlog @ model.view("out.w")).reshape(batch, steps, d)
    for layer in range(model.config.num_layers - 1, -1, -1):
        x, q, k, v, att, ctx, a, t1 = layer_caches[layer]
        wo = model.view(f"layer{layer}.wo")
        w1, w2 = model.view(f"layer{layer}.w1"), model.view(f"layer{layer}.w2")

        # mlp: out = a + tanh(a w1^T + b1) w2^T + b2
        da = dout.copy()
        dt1 = dout @ w2
        model.slice_of(grad, f"layer{layer}.w2")[...] = np.einsum("btd,btf->df", dout, t1)
        model.slice_of(grad, f"layer{layer}.b2")[...] = dout.sum(axis=(0, 1))
        dpre1 = dt1 * (1.0 - t1 * t1)
        model.slice_of(grad, f"layer{layer}.w1")[...] = np.einsum("btf,btd->fd", dpre1, a)
        model.slice_of(grad, f"layer{layer}.b1")[...] = dpre1.sum(axis=(0, 1))
        da += dpre1 @ w1

        # attention: a = x + (att @ v) wo^T
        dattn_out = da
        model.slice_of(grad, f"layer{layer}.wo")[...] = np.einsum(
            "btd,bte->de", dattn_out, ctx
        )
        dctx = dattn_out @ wo
        datt = dctx @ v.transpose(0, 2, 1)
        dv = att.transpose(0, 2, 1) @ dctx
        dscores = att * (datt - (att * datt).sum(axis=-1, keepdims=True))
        dq = dscores @ k / np.sqrt(d)
        dk = dscores.transpose(0, 2, 1) @ q / np.sqrt(d)
        dx = da.copy()
        for name, dmat, src in (("wq", dq, x), ("wk", dk, x), ("wv", dv, x)):
            model.slice_of(grad, f"layer{layer}.{name}")[...] = np.einsum(
                "btd,bte->de", dmat, src
            )
        dx += dq @ model.view(f"layer{layer}.wq")
        dx += dk @ model.view(f"layer{layer}.wk")
        dx += dv @ model.view(f"layer{layer}.wv")
        dout = dx
    model.slice_of(grad, "pos")[:steps] = dout.sum(axis=0)
    demb = model.slice_of(grad, "embed")
    np.add.at(demb, tokens.ravel(), dout.reshape(batch * steps, d))
    return grad


# --- public engine -----------------------------------------------------------


def forward_batch(model: StudentModel, tokens: np.ndarray, kernels=None, ws=None):
    """Logits (B, T, V) plus the cache needed by backward_batch.

    Logits and cache live in workspace buffers: they are valid until the
    next forward_batch call on the same workspace.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    _check_tokens(model.config, tokens)
    if model.config.arch == "gated-recurrent":
        return _gru_forward(
            model, tokens, kernels or backend_mod.get_backend(),
            ws or default_workspace(),
        )
    return _attn_forward(model, tokens)


def backward_batch(
    model: StudentModel, cache, dlogits: np.ndarray, kernels=None, ws=None
) -> np.ndarray:
    """Exact parameter gradient for a loss whose dL/dlogits is given."""
    if model.config.arch == "gated-recurrent":
        return _gru_backward(
            model, cache, dlogits, kernels or backend_mod.get_backend(),
            ws or default_workspace(),
        )
    return _attn_backward(model, cache, dlogits)


def forward_logits(model: StudentModel, tokens) -> np.ndarray:
    """Next-token logits for one sequence: (T, V), causal by construction."""
    arr = np.asarray(tokens, dtype=np.int64).reshape(1, -1)
    logits, _ = forward_batch(model, arr)
    return logits[0]


# --- recurrent state helpers (used by the incremental decoder) ---------------


def gru_states_from_forward(model: StudentModel, cache) -> list[np.ndarray]:
    """Per-layer hidden states (B, T, H) captured during forward_batch."""
    _, layer_caches, _ = cache
    return [h for (_, _, h, _) in layer_caches]


def gru_step(model: StudentModel, token_ids: np.ndarray, states: list[np.ndarray], kernels=None):
    """Advance all layers one step; returns (logits (B, V), new states)."""
    kernels = kernels or backend_mod.get_backend()
    hid = model.config.hidden_dim
    batch = len(token_ids)
    x = model.view("embed")[token_ids]
    new_states = []
    for layer in range(model.config.num_layers):
        wx = model.view(f"layer{layer}.wx")
        u = model.view(f"layer{layer}.u")
        b = model.view(f"layer{layer}.b")
        xproj = np.ascontiguousarray((x @ wx.T + b)[:, None, :])
        h = np.empty((batch, 1, hid))
        stash = tuple(np.empty((batch, 1, hid)) for _ in range(4))
        kernels.scan_forward(u, xproj, np.ascontiguousarray(states[layer]), h, *stash)
        new_states.append(h[:, 0])
        x = h[:, 0]
    logits = x @ model.view("out.w").T + model.view("out.b")
    return logits, new_states


# --- checkpoints --------------------------------------------------------------


def save_checkpoint(model: StudentModel, path) -> None:
    """Header (config + layout) followed by the little-endian float64 vector."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps(
        {
            "config": asdict(model.config),
            "layout": [[n, list(shape)] for n, (_, shape) in model.param_layout.items()],
            "param_count": int(model.num_params),
        },
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(model.params.astype("<f8", copy=False).tobytes())


def load_checkpoint(path) -> StudentModel:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise DataFormatError(f"{path}: not a model checkpoint")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        cfg = ModelConfig(**header["config"])
        raw = fh.read(8 * header["param_count"])
    params = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    layout = build_layout(cfg)
    expected = [[n, list(shape)] for n, (_, shape) in layout.items()]
    if expected != header["layout"]:
        raise DataFormatError(f"{path}: layout does not match config")
    return StudentModel(cfg, params, layout)
