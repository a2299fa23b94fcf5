"""Decoder-only transformer LM with hand-written forward/backward in numpy.

Pre-norm GPT-2-style blocks (causal self-attention + GELU MLP), learned
positional embeddings, untied output projection. The backward pass is
derived by hand so gradients can be audited against finite differences;
training runs in float32, tests in float64. Hot spots (masked softmax,
fused cross-entropy, embedding scatter-add, Adam) go through
``xfercomplete.kernels`` which picks the compiled extension when built.

Inference has a KV-cache path (``prefill`` + ``extend``) so the ranker can
score many single-token continuations of one shared context without
re-running it.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import kernels

_LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715

MAGIC = b"XFERCKPT"
FORMAT_VERSION = 1


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    context_len: int = 256
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 4
    d_ff: int = 512
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ModelError("d_model must be divisible by n_heads")
        if self.context_len < 2:
            raise ModelError("context_len must be >= 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelError("dropout must lie in [0, 1)")
        if self.vocab_size < 4:
            raise ModelError("vocab_size too small")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


def init_params(cfg: ModelConfig, dtype=np.float32) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    std = 0.02
    resid_std = std / math.sqrt(2.0 * cfg.n_layers)

    def normal(shape, s):
        return rng.normal(0.0, s, size=shape).astype(dtype)

    p: dict[str, np.ndarray] = {
        "wte": normal((cfg.vocab_size, cfg.d_model), std),
        "wpe": normal((cfg.context_len, cfg.d_model), std),
        "lnf.g": np.ones(cfg.d_model, dtype=dtype),
        "lnf.b": np.zeros(cfg.d_model, dtype=dtype),
        "head.w": normal((cfg.d_model, cfg.vocab_size), std),
    }
    for l in range(cfg.n_layers):
        p[f"h{l}.ln1.g"] = np.ones(cfg.d_model, dtype=dtype)
        p[f"h{l}.ln1.b"] = np.zeros(cfg.d_model, dtype=dtype)
        p[f"h{l}.attn.wqkv"] = normal((cfg.d_model, 3 * cfg.d_model), std)
        p[f"h{l}.attn.bqkv"] = np.zeros(3 * cfg.d_model, dtype=dtype)
        p[f"h{l}.attn.wo"] = normal((cfg.d_model, cfg.d_model), resid_std)
        p[f"h{l}.attn.bo"] = np.zeros(cfg.d_model, dtype=dtype)
        p[f"h{l}.ln2.g"] = np.ones(cfg.d_model, dtype=dtype)
        p[f"h{l}.ln2.b"] = np.zeros(cfg.d_model, dtype=dtype)
        p[f"h{l}.mlp.w1"] = normal((cfg.d_model, cfg.d_ff), std)
        p[f"h{l}.mlp.b1"] = np.zeros(cfg.d_ff, dtype=dtype)
        p[f"h{l}.mlp.w2"] = normal((cfg.d_ff, cfg.d_model), resid_std)
        p[f"h{l}.mlp.b2"] = np.zeros(cfg.d_model, dtype=dtype)
    return p


# -- primitive layers ----------------------------------------------------------


def _layernorm_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def _layernorm_bwd(dy, g, cache):
    xhat, rstd = cache
    lead = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axis=lead)
    db = dy.sum(axis=lead)
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = rstd * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def _gelu_fwd(x):
    """Flattens to 2D for the kernels; returns (y, tanh_cache) in x's shape."""
    shape = x.shape
    x2 = np.ascontiguousarray(x.reshape(-1, shape[-1]))
    y2, t2 = kernels.gelu_fwd(x2)
    return y2.reshape(shape), (x2, t2)


def _gelu_bwd(dy, cache):
    x2, t2 = cache
    shape = dy.shape
    dy2 = np.ascontiguousarray(dy.reshape(-1, shape[-1]))
    return kernels.gelu_bwd(dy2, x2, t2).reshape(shape)


def _split_heads(x, n_heads):
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def _dropout_mask(rng, shape, p, dtype):
    return (rng.random(shape) >= p).astype(dtype) / dtype.type(1.0 - p)


# -- forward / backward --------------------------------------------------------


def forward_batch(cfg: ModelConfig, params: dict, ids: np.ndarray,
                  train: bool = False, rng: np.random.Generator | None = None,
                  collect_kv: bool = False):
    """Batched forward pass.

    Returns (logits, cache). ``cache`` carries everything backward needs; in
    infer mode with ``collect_kv`` it also carries per-layer K/V tensors for
    incremental decoding.
    """
    ids = np.asarray(ids)
    if ids.ndim != 2:
        raise ModelError("forward_batch expects (batch, time) ids")
    b, t = ids.shape
    if t > cfg.context_len:
        raise ModelError(f"sequence length {t} exceeds context_len {cfg.context_len}")
    if t == 0:
        raise ModelError("empty input sequence")
    if int(ids.max()) >= cfg.vocab_size or int(ids.min()) < 0:
        raise ModelError("token id out of range")
    dtype = params["wte"].dtype
    drop = cfg.dropout if train else 0.0
    if drop > 0.0 and rng is None:
        raise ModelError("train-mode dropout requires an rng")
    scale = dtype.type(1.0 / math.sqrt(cfg.d_head))

    cache: dict = {"ids": ids, "layers": [], "train": train, "masks": {}}
    x = params["wte"][ids] + params["wpe"][:t]
    if drop > 0.0:
        m = _dropout_mask(rng, x.shape, drop, dtype)
        cache["masks"]["emb"] = m
        x = x * m

    kv = [] if collect_kv else None
    for l in range(cfg.n_layers):
        lc: dict = {"x_in": x}
        a, lc["ln1"] = _layernorm_fwd(x, params[f"h{l}.ln1.g"], params[f"h{l}.ln1.b"])
        lc["a"] = a
        qkv = a @ params[f"h{l}.attn.wqkv"] + params[f"h{l}.attn.bqkv"]
        q, k, v = np.split(qkv, 3, axis=-1)
        q = _split_heads(q, cfg.n_heads)
        k = _split_heads(k, cfg.n_heads)
        v = _split_heads(v, cfg.n_heads)
        lc["q"], lc["k"], lc["v"] = q, k, v
        scores = np.matmul(q, k.transpose(0, 1, 3, 2)) * scale
        probs = kernels.causal_softmax(np.ascontiguousarray(scores))
        if drop > 0.0:
            pm = _dropout_mask(rng, probs.shape, drop, dtype)
            cache["masks"][f"attn{l}"] = pm
            probs_used = probs * pm
        else:
            probs_used = probs
        lc["probs"] = probs
        o = _merge_heads(np.matmul(probs_used, v))
        lc["o_merged"] = o
        proj = o @ params[f"h{l}.attn.wo"] + params[f"h{l}.attn.bo"]
        if drop > 0.0:
            rm = _dropout_mask(rng, proj.shape, drop, dtype)
            cache["masks"][f"resid1_{l}"] = rm
            proj = proj * rm
        x = x + proj
        lc["x_mid"] = x
        mnorm, lc["ln2"] = _layernorm_fwd(x, params[f"h{l}.ln2.g"], params[f"h{l}.ln2.b"])
        lc["m"] = mnorm
        pre = mnorm @ params[f"h{l}.mlp.w1"] + params[f"h{l}.mlp.b1"]
        act, gelu_cache = _gelu_fwd(pre)
        lc["gelu"] = gelu_cache
        lc["act"] = act
        out = act @ params[f"h{l}.mlp.w2"] + params[f"h{l}.mlp.b2"]
        if drop > 0.0:
            rm2 = _dropout_mask(rng, out.shape, drop, dtype)
            cache["masks"][f"resid2_{l}"] = rm2
            out = out * rm2
        x = x + out
        cache["layers"].append(lc)
        if collect_kv:
            kv.append((k, v))

    xf, cache["lnf"] = _layernorm_fwd(x, params["lnf.g"], params["lnf.b"])
    cache["xf"] = xf
    cache["x_last"] = x
    logits = xf @ params["head.w"]
    if collect_kv:
        cache["kv"] = kv
    return logits, cache


def backward_batch(cfg: ModelConfig, params: dict, cache: dict,
                   dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss with upstream ``dlogits``; mirrors forward_batch."""
    dtype = params["wte"].dtype
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    masks = cache["masks"]
    scale = dtype.type(1.0 / math.sqrt(cfg.d_head))
    b, t = cache["ids"].shape

    xf = cache["xf"]
    grads["head.w"] = xf.reshape(-1, cfg.d_model).T @ dlogits.reshape(-1, cfg.vocab_size)
    dxf = dlogits @ params["head.w"].T
    dx, grads["lnf.g"], grads["lnf.b"] = _layernorm_bwd(dxf, params["lnf.g"], cache["lnf"])

    for l in reversed(range(cfg.n_layers)):
        lc = cache["layers"][l]
        dout = dx
        if f"resid2_{l}" in masks:
            dout = dout * masks[f"resid2_{l}"]
        grads[f"h{l}.mlp.w2"] = lc["act"].reshape(-1, cfg.d_ff).T @ dout.reshape(-1, cfg.d_model)
        grads[f"h{l}.mlp.b2"] = dout.sum(axis=(0, 1))
        dact = dout @ params[f"h{l}.mlp.w2"].T
        dpre = _gelu_bwd(dact, lc["gelu"])
        grads[f"h{l}.mlp.w1"] = lc["m"].reshape(-1, cfg.d_model).T @ dpre.reshape(-1, cfg.d_ff)
        grads[f"h{l}.mlp.b1"] = dpre.sum(axis=(0, 1))
        dm = dpre @ params[f"h{l}.mlp.w1"].T
        dmid, grads[f"h{l}.ln2.g"], grads[f"h{l}.ln2.b"] = _layernorm_bwd(
            dm, params[f"h{l}.ln2.g"], lc["ln2"])
        dx = dx + dmid

        dproj = dx
        if f"resid1_{l}" in masks:
            dproj = dproj * masks[f"resid1_{l}"]
        grads[f"h{l}.attn.wo"] = lc["o_merged"].reshape(-1, cfg.d_model).T @ \
            dproj.reshape(-1, cfg.d_model)
        grads[f"h{l}.attn.bo"] = dproj.sum(axis=(0, 1))
        do = dproj @ params[f"h{l}.attn.wo"].T
        do_heads = _split_heads(do, cfg.n_heads)

        probs = lc["probs"]
        if f"attn{l}" in masks:
            probs_used = probs * masks[f"attn{l}"]
        else:
            probs_used = probs
        dv = np.matmul(probs_used.transpose(0, 1, 3, 2), do_heads)
        dprobs_used = np.matmul(do_heads, lc["v"].transpose(0, 1, 3, 2))
        if f"attn{l}" in masks:
            dprobs = dprobs_used * masks[f"attn{l}"]
        else:
            dprobs = dprobs_used
        # softmax backward; masked entries have probs == 0 so they drop out
        row = (dprobs * probs).sum(axis=-1, keepdims=True)
        dscores = probs * (dprobs - row) * scale
        dq = np.matmul(dscores, lc["k"])
        dk = np.matmul(dscores.transpose(0, 1, 3, 2), lc["q"])
        dqkv = np.concatenate(
            [_merge_heads(dq), _merge_heads(dk), _merge_heads(dv)], axis=-1)
        grads[f"h{l}.attn.wqkv"] = lc["a"].reshape(-1, cfg.d_model).T @ \
            dqkv.reshape(-1, 3 * cfg.d_model)
        grads[f"h{l}.attn.bqkv"] = dqkv.sum(axis=(0, 1))
        da = dqkv @ params[f"h{l}.attn.wqkv"].T
        dx_ln1, grads[f"h{l}.ln1.g"], grads[f"h{l}.ln1.b"] = _layernorm_bwd(
            da, params[f"h{l}.ln1.g"], lc["ln1"])
        dx = dx + dx_ln1

    if "emb" in masks:
        dx = dx * masks["emb"]
    ids = cache["ids"]
    kernels.embedding_grad(
        grads["wte"],
        np.ascontiguousarray(ids.reshape(-1), dtype=np.int64),
        np.ascontiguousarray(dx.reshape(-1, cfg.d_model)))
    grads["wpe"][:t] = dx.sum(axis=0)
    return grads


def loss_from_logits(logits: np.ndarray, targets: np.ndarray,
                     weights: np.ndarray | None = None) -> float:
    """Mean token-level cross-entropy over unmasked positions."""
    v = logits.shape[-1]
    flat = np.ascontiguousarray(logits.reshape(-1, v))
    tgt = np.ascontiguousarray(np.asarray(targets).reshape(-1), dtype=np.int64)
    if weights is None:
        w = np.ones(len(tgt), dtype=flat.dtype)
    else:
        w = np.ascontiguousarray(np.asarray(weights).reshape(-1), dtype=flat.dtype)
    loss_sum, wsum, _ = kernels.softmax_xent(flat, tgt, w)
    if wsum == 0.0:
        raise ModelError("all positions masked; loss undefined")
    return loss_sum / wsum


# -- inference cache -----------------------------------------------------------


@dataclass
class KVCache:
    keys: list[np.ndarray]    # per layer, (H, T, d_head)
    values: list[np.ndarray]
    length: int


# -- the model object ----------------------------------------------------------


class TransformerLM:
    """Config + parameters + the operations the rest of the system needs."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray] | None = None,
                 dtype=np.float32):
        self.config = config
        self.params = params if params is not None else init_params(config, dtype)

    @property
    def dtype(self):
        return self.params["wte"].dtype

    def astype(self, dtype) -> "TransformerLM":
        return TransformerLM(self.config,
                             {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "TransformerLM":
        return TransformerLM(self.config, {k: v.copy() for k, v in self.params.items()})

    def forward(self, ids, mode: str = "infer",
                rng: np.random.Generator | None = None) -> np.ndarray:
        """Logits for one sequence, shape (len(ids), vocab_size)."""
        if mode not in ("train", "infer"):
            raise ModelError(f"unknown mode {mode!r}")
        arr = np.asarray(ids, dtype=np.int64).reshape(1, -1)
        logits, _ = forward_batch(self.config, self.params, arr,
                                  train=(mode == "train"), rng=rng)
        return logits[0]

    def loss_and_grads(self, ids, targets, weights=None,
                       rng: np.random.Generator | None = None,
                       train: bool = True):
        """(mean loss, gradient dict) for a (B,T) batch with masked targets."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None, :]
        targets = np.asarray(targets, dtype=np.int64).reshape(ids.shape)
        logits, cache = forward_batch(self.config, self.params, ids,
                                      train=train, rng=rng)
        v = self.config.vocab_size
        flat = np.ascontiguousarray(logits.reshape(-1, v))
        tgt = np.ascontiguousarray(targets.reshape(-1))
        if weights is None:
            w = np.ones(len(tgt), dtype=flat.dtype)
        else:
            w = np.ascontiguousarray(np.asarray(weights).reshape(-1), dtype=flat.dtype)
        loss_sum, wsum, dflat = kernels.softmax_xent(flat, tgt, w)
        if wsum == 0.0:
            raise ModelError("all positions masked; loss undefined")
        dlogits = (dflat / wsum).reshape(logits.shape)
        grads = backward_batch(self.config, self.params, cache, dlogits)
        return loss_sum / wsum, grads

    def next_token_logprobs(self, context_ids) -> np.ndarray:
        """Log-softmax over the vocabulary at the final context position."""
        ids = np.asarray(context_ids, dtype=np.int64)
        if ids.size == 0:
            raise ModelError("empty context")
        ids = ids[-self.config.context_len:]
        logits = self.forward(ids, mode="infer")[-1]
        return _log_softmax(logits)

    # incremental decoding ------------------------------------------------

    def prefill(self, context_ids) -> tuple[np.ndarray, KVCache]:
        """Run the context once; returns final-position log-probs and the KV cache."""
        ids = np.asarray(context_ids, dtype=np.int64)
        if ids.size == 0:
            raise ModelError("empty context")
        ids = ids[-(self.config.context_len - 1):]
        logits, cache = forward_batch(self.config, self.params, ids[None, :],
                                      train=False, collect_kv=True)
        kv = KVCache(keys=[k[0] for k, _ in cache["kv"]],
                     values=[v[0] for _, v in cache["kv"]],
                     length=ids.size)
        return _log_softmax(logits[0, -1]), kv

    def extend(self, cache: KVCache, next_ids) -> np.ndarray:
        """Log-probs after appending one token per root; shape (roots, vocab)."""
        cfg = self.config
        p = self.params
        nxt = np.asarray(next_ids, dtype=np.int64).reshape(-1)
        r = nxt.size
        t = cache.length
        dtype = self.dtype
        scale = dtype.type(1.0 / math.sqrt(cfg.d_head))

        x = p["wte"][nxt] + p["wpe"][t]
        for l in range(cfg.n_layers):
            a, _ = _layernorm_fwd(x, p[f"h{l}.ln1.g"], p[f"h{l}.ln1.b"])
            qkv = a @ p[f"h{l}.attn.wqkv"] + p[f"h{l}.attn.bqkv"]
            q, k_new, v_new = np.split(qkv, 3, axis=-1)
            q = q.reshape(r, cfg.n_heads, cfg.d_head)
            k_new = k_new.reshape(r, cfg.n_heads, cfg.d_head)
            v_new = v_new.reshape(r, cfg.n_heads, cfg.d_head)
            s_ctx = np.einsum("rhd,htd->rht", q, cache.keys[l]) * scale
            s_self = (q * k_new).sum(axis=-1, keepdims=True) * scale
            s = np.concatenate([s_ctx, s_self], axis=-1)
            s -= s.max(axis=-1, keepdims=True)
            np.exp(s, out=s)
            s /= s.sum(axis=-1, keepdims=True)
            o = np.einsum("rht,htd->rhd", s[:, :, :t], cache.values[l]) + \
                s[:, :, t:] * v_new
            o = o.reshape(r, cfg.d_model)
            x = x + (o @ p[f"h{l}.attn.wo"] + p[f"h{l}.attn.bo"])
            m, _ = _layernorm_fwd(x, p[f"h{l}.ln2.g"], p[f"h{l}.ln2.b"])
            act, _ = _gelu_fwd(m @ p[f"h{l}.mlp.w1"] + p[f"h{l}.mlp.b1"])
            x = x + (act @ p[f"h{l}.mlp.w2"] + p[f"h{l}.mlp.b2"])
        xf, _ = _layernorm_fwd(x, p["lnf.g"], p["lnf.b"])
        logits = xf @ p["head.w"]
        return _log_softmax_rows(logits)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max()
    z = np.log(np.exp(logits - m).sum())
    return logits - m - z


def _log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    z = np.log(np.exp(logits - m).sum(axis=-1, keepdims=True))
    return logits - m - z


# -- optimizer -----------------------------------------------------------------


class AdamOptimizer:
    """Adam with bias correction; state lives here, params update in place."""

    def __init__(self, params: dict[str, np.ndarray], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        for name, p in params.items():
            if not p.flags.c_contiguous:
                raise ModelError(f"parameter {name} must be C-contiguous for in-place updates")
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr: float) -> None:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise ModelError(f"non-finite gradient in {name}; step aborted")
        self.t += 1
        for name, p in params.items():
            kernels.adam_step(p.reshape(-1), np.ascontiguousarray(grads[name].reshape(-1)),
                              self.m[name].reshape(-1), self.v[name].reshape(-1),
                              lr, self.beta1, self.beta2, self.eps, self.t)


# -- checkpoints ---------------------------------------------------------------


@dataclass
class ModelCheckpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    provenance: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def model(self, dtype=None) -> TransformerLM:
        params = self.params
        if dtype is not None and params["wte"].dtype != dtype:
            params = {k: v.astype(dtype) for k, v in params.items()}
        else:
            params = {k: v.copy() for k, v in params.items()}
        return TransformerLM(self.config, params)

    def with_provenance(self, entry: dict) -> "ModelCheckpoint":
        return ModelCheckpoint(self.config, self.params,
                               self.provenance + [entry], dict(self.meta))


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    """Versioned container: JSON header + raw little-endian float payloads."""
    names = sorted(ckpt.params)
    manifest = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(ckpt.params[name])
        code = "<f4" if arr.dtype == np.float32 else "<f8"
        raw = arr.astype(code, copy=False).tobytes()
        manifest.append({"name": name, "shape": list(arr.shape),
                         "dtype": code, "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({
        "format_version": ckpt.format_version,
        "config": asdict(ckpt.config),
        "provenance": ckpt.provenance,
        "meta": ckpt.meta,
        "tensors": manifest,
    }).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path) -> ModelCheckpoint:
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ModelError(f"{path}: not a model checkpoint (bad magic)")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        if header["format_version"] > FORMAT_VERSION:
            raise ModelError(f"{path}: unsupported checkpoint version")
        payload = f.read()
    params = {}
    for spec in header["tensors"]:
        a, b = spec["offset"], spec["offset"] + spec["nbytes"]
        arr = np.frombuffer(payload[a:b], dtype=spec["dtype"]).reshape(spec["shape"])
        params[spec["name"]] = arr.copy()
    cfg = ModelConfig(**header["config"])
    return ModelCheckpoint(cfg, params, header.get("provenance", []),
                           header.get("meta", {}), header["format_version"])
