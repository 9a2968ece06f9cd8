"""Transformer encoder in numpy with a hand-written backward pass.

Post-layer-norm BERT layout: learned token + position embeddings, then per
layer ``LN(x + Attn(x))`` followed by ``LN(y + FFN(y))`` with a GELU FFN.
Two heads are supported.  The MLM head scores hidden states against the
token embedding matrix itself (weights are tied, not copied).  The
classification head is an affine map of the first ([CLS]) position.

All arithmetic is float64 so gradients can be checked by finite differences.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import erf

from ._backend import kernels

IGNORE = -100
CHECKPOINT_VERSION = 1
LN_EPS = 1e-12
HEADS = ("mlm", "classifier")

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int = 8000
    d_model: int = 128
    n_layers: int = 2
    n_heads: int = 4
    d_ffn: int = 512
    max_len: int = 128
    dropout_prob: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ffn"):
            if getattr(self, name) < 1:
                raise ModelError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.max_len < 3:
            raise ModelError(f"max_len must be >= 3, got {self.max_len}")
        if self.d_model % self.n_heads:
            raise ModelError(
                f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}"
            )
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ModelError(f"dropout_prob must be in [0, 1), got {self.dropout_prob}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


LAYER_PARAMS = (
    "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
    "w1", "b1", "w2", "b2", "ln1_g", "ln1_b", "ln2_g", "ln2_b",
)


def parameter_count(cfg: EncoderConfig, head: str = "mlm", n_classes: int = 0) -> int:
    d, f = cfg.d_model, cfg.d_ffn
    per_layer = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 4 * d
    total = cfg.vocab_size * d + cfg.max_len * d + cfg.n_layers * per_layer
    if head == "classifier":
        total += d * n_classes + n_classes
    return total


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) truncated to two standard deviations, by redrawing."""
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2.0
    return x * std


@dataclass
class EncoderModel:
    config: EncoderConfig
    params: dict[str, np.ndarray]
    head: str = "mlm"
    n_classes: int = 0

    @property
    def mlm_weight(self) -> np.ndarray:
        """The MLM output projection: the token embedding matrix itself."""
        return self.params["tok_emb"]

    def encoder_param_names(self) -> list[str]:
        return [k for k in self.params if not k.startswith("cls_")]

    def head_param_names(self) -> list[str]:
        return [k for k in self.params if k.startswith("cls_")]

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "EncoderModel":
        return EncoderModel(self.config, {k: v.copy() for k, v in self.params.items()},
                            self.head, self.n_classes)

    def with_classifier(self, n_classes: int, seed: int | None = None) -> "EncoderModel":
        """Copy of the encoder topped with a freshly initialised classifier."""
        if n_classes < 2:
            raise ModelError(f"a classifier needs >= 2 classes, got {n_classes}")
        rng = np.random.default_rng(self.config.seed + 1 if seed is None else seed)
        params = {k: v.copy() for k, v in self.params.items() if not k.startswith("cls_")}
        params["cls_w"] = _trunc_normal(rng, (self.config.d_model, n_classes))
        params["cls_b"] = np.zeros(n_classes)
        return EncoderModel(self.config, params, "classifier", n_classes)

    def with_mlm_head(self) -> "EncoderModel":
        params = {k: v.copy() for k, v in self.params.items() if not k.startswith("cls_")}
        return EncoderModel(self.config, params, "mlm", 0)


def init(config: EncoderConfig, head: str = "mlm", n_classes: int = 0) -> EncoderModel:
    if head not in HEADS:
        raise ModelError(f"unknown head {head!r}; expected one of {HEADS}")
    if head == "classifier" and n_classes < 2:
        raise ModelError(f"a classifier needs >= 2 classes, got {n_classes}")
    rng = np.random.default_rng(config.seed)
    d, f = config.d_model, config.d_ffn
    p: dict[str, np.ndarray] = {
        "tok_emb": _trunc_normal(rng, (config.vocab_size, d)),
        "pos_emb": _trunc_normal(rng, (config.max_len, d)),
    }
    for i in range(config.n_layers):
        for w in ("wq", "wk", "wv", "wo"):
            p[f"l{i}.{w}"] = _trunc_normal(rng, (d, d))
            p[f"l{i}.b{w[1]}"] = np.zeros(d)
        p[f"l{i}.w1"] = _trunc_normal(rng, (d, f))
        p[f"l{i}.b1"] = np.zeros(f)
        p[f"l{i}.w2"] = _trunc_normal(rng, (f, d))
        p[f"l{i}.b2"] = np.zeros(d)
        for ln in ("ln1", "ln2"):
            p[f"l{i}.{ln}_g"] = np.ones(d)
            p[f"l{i}.{ln}_b"] = np.zeros(d)
    # canonical key order so checkpoints and optimiser state iterate identically
    p = {k: p[k] for k in _ordered_names(config)}
    if head == "classifier":
        p["cls_w"] = _trunc_normal(rng, (d, n_classes))
        p["cls_b"] = np.zeros(n_classes)
    return EncoderModel(config, p, head, n_classes)


def _ordered_names(cfg: EncoderConfig) -> list[str]:
    names = ["tok_emb", "pos_emb"]
    for i in range(cfg.n_layers):
        names += [f"l{i}.{n}" for n in LAYER_PARAMS]
    return names


# ---------------------------------------------------------------------------
# forward / backward

@dataclass
class ForwardTrace:
    hidden: np.ndarray            # [B, T, d] final hidden states
    cls: np.ndarray               # [B, d]
    logits: np.ndarray | None     # [B, C] classifier or [N, V] at MLM positions
    attention: list[np.ndarray]   # per layer [B, H, T, T]
    cache: dict = field(default_factory=dict, repr=False)


def _as_batch(batch, mask=None):
    """Accept an Encoding, a list of Encodings or id/mask arrays."""
    if hasattr(batch, "ids") and hasattr(batch, "attention_mask"):
        batch = [batch]
    if isinstance(batch, (list, tuple)) and batch and hasattr(batch[0], "ids"):
        ids = np.stack([np.asarray(e.ids) for e in batch])
        mask = np.stack([np.asarray(e.attention_mask) for e in batch])
    else:
        ids = np.atleast_2d(np.asarray(batch, dtype=np.int64))
        mask = (ids != 0).astype(np.int64) if mask is None else np.atleast_2d(np.asarray(mask))
    return ids.astype(np.int64), mask.astype(np.int64)


def _trim(ids, mask, targets=None):
    """Drop trailing columns that are padding in every row (exact: they are masked)."""
    cols = np.flatnonzero(mask.any(axis=0))
    t = int(cols[-1]) + 1 if cols.size else 1
    if targets is not None and targets.ndim == 2:
        if np.any(targets[:, t:] != IGNORE):
            raise ModelError("MLM targets set on padding positions")
        targets = targets[:, :t]
    return ids[:, :t], mask[:, :t], targets


def _dropout_mask(rng, shape, p):
    return (rng.random(shape) >= p) / (1.0 - p)


def _layer_norm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layer_norm_back(dy, g, cache):
    xhat, inv = cache
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    dg = (dy * xhat).reshape(-1, dy.shape[-1]).sum(0)
    db = dy.reshape(-1, dy.shape[-1]).sum(0)
    return dx, dg, db


def _gelu(u):
    return 0.5 * u * (1.0 + erf(u / _SQRT2))


def _gelu_grad(u):
    return 0.5 * (1.0 + erf(u / _SQRT2)) + u * _INV_SQRT_2PI * np.exp(-0.5 * u * u)


def _softmax(s):
    s = s - s.max(-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(-1, keepdims=True)


def _check_ids(m: EncoderModel, ids):
    if ids.size and (ids.min() < 0 or ids.max() >= m.config.vocab_size):
        bad = ids[(ids < 0) | (ids >= m.config.vocab_size)][0]
        raise ModelError(f"token id {int(bad)} out of range for vocab_size {m.config.vocab_size}")
    if ids.shape[1] > m.config.max_len:
        raise ModelError(f"sequence length {ids.shape[1]} exceeds max_len {m.config.max_len}")


def _encode(m: EncoderModel, ids, mask, train_mode, rng):
    cfg = m.config
    P = m.params
    B, T = ids.shape
    H, dh, d = cfg.n_heads, cfg.d_head, cfg.d_model
    p_drop = cfg.dropout_prob if train_mode else 0.0
    if p_drop > 0.0 and rng is None:
        raise ModelError("train_mode with dropout needs an rng")
    scale = 1.0 / np.sqrt(dh)
    key_bias = np.where(mask[:, None, None, :] > 0, 0.0, -np.inf)

    x = P["tok_emb"][ids] + P["pos_emb"][:T]
    m0 = _dropout_mask(rng, x.shape, p_drop) if p_drop else None
    h = x * m0 if m0 is not None else x
    layers = []
    attn_all = []
    for i in range(cfg.n_layers):
        pre = f"l{i}."
        q = (h @ P[pre + "wq"] + P[pre + "bq"]).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        k = (h @ P[pre + "wk"] + P[pre + "bk"]).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        v = (h @ P[pre + "wv"] + P[pre + "bv"]).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        a = _softmax(q @ k.transpose(0, 1, 3, 2) * scale + key_bias)
        mA = _dropout_mask(rng, a.shape, p_drop) if p_drop else None
        ad = a * mA if mA is not None else a
        ctx = (ad @ v).transpose(0, 2, 1, 3).reshape(B, T, d)
        o = ctx @ P[pre + "wo"] + P[pre + "bo"]
        mO = _dropout_mask(rng, o.shape, p_drop) if p_drop else None
        od = o * mO if mO is not None else o
        y1, ln1 = _layer_norm(h + od, P[pre + "ln1_g"], P[pre + "ln1_b"])
        u = y1 @ P[pre + "w1"] + P[pre + "b1"]
        g = _gelu(u)
        f = g @ P[pre + "w2"] + P[pre + "b2"]
        mF = _dropout_mask(rng, f.shape, p_drop) if p_drop else None
        fd = f * mF if mF is not None else f
        h_out, ln2 = _layer_norm(y1 + fd, P[pre + "ln2_g"], P[pre + "ln2_b"])
        layers.append(dict(h_in=h, q=q, k=k, v=v, a=a, mA=mA, ad=ad, ctx=ctx, mO=mO,
                           y1=y1, ln1=ln1, u=u, g=g, mF=mF, ln2=ln2))
        attn_all.append(a)
        h = h_out
    return h, attn_all, dict(ids=ids, m0=m0, layers=layers, p_drop=p_drop, scale=scale)


def forward(
    m: EncoderModel,
    enc,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    mask=None,
    positions: tuple[np.ndarray, np.ndarray] | None = None,
) -> ForwardTrace:
    """Run the encoder and the attached head.

    ``enc`` is an Encoding, a list of Encodings, or an id array (with
    ``mask``).  For the MLM head, logits are computed at ``positions``
    (a pair of row/column index arrays), or at every position if omitted.
    """
    ids, mask = _as_batch(enc, mask)
    _check_ids(m, ids)
    hidden, attn, cache = _encode(m, ids, mask, train_mode, rng)
    cls = hidden[:, 0]
    logits = None
    if m.head == "classifier":
        mC = _dropout_mask(rng, cls.shape, cache["p_drop"]) if cache["p_drop"] else None
        cls_in = cls * mC if mC is not None else cls
        logits = cls_in @ m.params["cls_w"] + m.params["cls_b"]
        cache.update(mC=mC, cls_in=cls_in)
    else:
        if positions is None:
            hs = hidden.reshape(-1, hidden.shape[-1])
        else:
            hs = hidden[positions]
        logits = hs @ m.mlm_weight.T
        cache.update(hs=hs, positions=positions)
    return ForwardTrace(hidden=hidden, cls=cls, logits=logits, attention=attn, cache=cache)


def _cross_entropy(logits, targets):
    z = logits - logits.max(-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(-1, keepdims=True))
    n = len(targets)
    loss = -logp[np.arange(n), targets].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(n), targets] -= 1.0
    return float(loss), dlogits / n


def loss_and_grads(
    m: EncoderModel,
    batch,
    targets,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    mask=None,
    param_names: Sequence[str] | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy and its exact gradient for every parameter.

    Classifier targets are one class index per row.  MLM targets are an
    array shaped like the ids with the original id at predicted positions
    and ``IGNORE`` elsewhere.  With ``param_names`` only those gradients are
    returned (the encoder backward is skipped when only head parameters are
    requested).
    """
    ids, mask = _as_batch(batch, mask)
    targets = np.asarray(targets, dtype=np.int64)
    _check_ids(m, ids)
    if m.head == "classifier":
        if targets.shape != (ids.shape[0],):
            raise ModelError(f"classifier targets must have shape ({ids.shape[0]},), "
                             f"got {targets.shape}")
        if targets.min() < 0 or targets.max() >= m.n_classes:
            raise ModelError(f"class target outside 0..{m.n_classes - 1}")
        ids, mask, _ = _trim(ids, mask)
        tr = forward(m, ids, train_mode, rng, mask=mask)
        loss, dlogits = _cross_entropy(tr.logits, targets)
    else:
        if targets.shape != ids.shape:
            raise ModelError(f"MLM targets must match ids shape {ids.shape}, got {targets.shape}")
        ids, mask, targets = _trim(ids, mask, targets)
        positions = np.nonzero(targets != IGNORE)
        if positions[0].size == 0:
            raise ModelError("no masked positions in MLM batch")
        tr = forward(m, ids, train_mode, rng, mask=mask, positions=positions)
        loss, dlogits = _cross_entropy(tr.logits, targets[positions])
    want = set(m.params if param_names is None else param_names)
    grads = _backward(m, tr, dlogits, want)
    return loss, {k: grads[k] for k in m.params if k in want}


def _backward(m: EncoderModel, tr: ForwardTrace, dlogits, want) -> dict[str, np.ndarray]:
    cfg = m.config
    P = m.params
    c = tr.cache
    B, T, d = tr.hidden.shape
    H, dh = cfg.n_heads, cfg.d_head
    G: dict[str, np.ndarray] = {}
    dh_out = np.zeros_like(tr.hidden)
    dE = np.zeros_like(P["tok_emb"]) if "tok_emb" in want else None

    if m.head == "classifier":
        G["cls_w"] = c["cls_in"].T @ dlogits
        G["cls_b"] = dlogits.sum(0)
        if not (want - {"cls_w", "cls_b"}):
            return G
        dcls = dlogits @ P["cls_w"].T
        if c["mC"] is not None:
            dcls = dcls * c["mC"]
        dh_out[:, 0] = dcls
    else:
        if dE is not None:
            dE += dlogits.T @ c["hs"]
        dhs = dlogits @ m.mlm_weight
        if c["positions"] is None:
            dh_out = dhs.reshape(B, T, d)
        else:
            dh_out[c["positions"]] = dhs  # positions are distinct

    dh_ = dh_out
    scale = c["scale"]
    for i in reversed(range(cfg.n_layers)):
        pre = f"l{i}."
        L = c["layers"][i]
        dr2, G[pre + "ln2_g"], G[pre + "ln2_b"] = _layer_norm_back(dh_, P[pre + "ln2_g"], L["ln2"])
        dy1 = dr2.copy()
        df = dr2 * L["mF"] if L["mF"] is not None else dr2
        G[pre + "w2"] = L["g"].reshape(-1, cfg.d_ffn).T @ df.reshape(-1, d)
        G[pre + "b2"] = df.reshape(-1, d).sum(0)
        du = (df @ P[pre + "w2"].T) * _gelu_grad(L["u"])
        G[pre + "w1"] = L["y1"].reshape(-1, d).T @ du.reshape(-1, cfg.d_ffn)
        G[pre + "b1"] = du.reshape(-1, cfg.d_ffn).sum(0)
        dy1 += du @ P[pre + "w1"].T
        dr1, G[pre + "ln1_g"], G[pre + "ln1_b"] = _layer_norm_back(dy1, P[pre + "ln1_g"], L["ln1"])
        dh_in = dr1.copy()
        do = dr1 * L["mO"] if L["mO"] is not None else dr1
        G[pre + "wo"] = L["ctx"].reshape(-1, d).T @ do.reshape(-1, d)
        G[pre + "bo"] = do.reshape(-1, d).sum(0)
        dctx = (do @ P[pre + "wo"].T).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        dad = dctx @ L["v"].transpose(0, 1, 3, 2)
        dv = L["ad"].transpose(0, 1, 3, 2) @ dctx
        da = dad * L["mA"] if L["mA"] is not None else dad
        a = L["a"]
        ds = a * (da - (da * a).sum(-1, keepdims=True))
        dq = (ds @ L["k"]) * scale
        dk = (ds.transpose(0, 1, 3, 2) @ L["q"]) * scale
        h_in = L["h_in"].reshape(-1, d)
        for name, dx in (("q", dq), ("k", dk), ("v", dv)):
            dx = dx.transpose(0, 2, 1, 3).reshape(-1, d)
            G[pre + "w" + name] = h_in.T @ dx
            G[pre + "b" + name] = dx.sum(0)
            dh_in += (dx @ P[pre + "w" + name].T).reshape(B, T, d)
        dh_ = dh_in

    dx0 = dh_ * c["m0"] if c["m0"] is not None else dh_
    G["pos_emb"] = np.zeros_like(P["pos_emb"])
    G["pos_emb"][:T] = dx0.sum(0)
    if dE is not None:
        kernels.scatter_add_rows(
            dE, np.ascontiguousarray(c["ids"].ravel()), np.ascontiguousarray(dx0.reshape(-1, d))
        )
        G["tok_emb"] = dE
    return G


def predict_proba(m: EncoderModel, ids, mask, batch_size: int = 64) -> np.ndarray:
    """Class probabilities for each row, evaluation mode."""
    if m.head != "classifier":
        raise ModelError("predict_proba needs a classifier head")
    out = []
    for s in range(0, len(ids), batch_size):
        bi, bm, _ = _trim(np.asarray(ids[s:s + batch_size]), np.asarray(mask[s:s + batch_size]))
        out.append(_softmax(forward(m, bi, mask=bm).logits))
    if not out:
        return np.zeros((0, m.n_classes))
    return np.concatenate(out)


# ---------------------------------------------------------------------------
# checkpoints

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _zip_write(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(m: EncoderModel, path: str | Path) -> None:
    """Zip archive of ``meta.json`` plus one ``.npy`` per parameter.

    Entry timestamps are fixed so identical models give identical bytes.
    """
    meta = {
        "format": "sexism_detect.encoder",
        "version": CHECKPOINT_VERSION,
        "config": asdict(m.config),
        "head": m.head,
        "n_classes": m.n_classes,
        "parameters": {k: list(v.shape) for k, v in m.params.items()},
    }
    with zipfile.ZipFile(path, "w") as zf:
        _zip_write(zf, "meta.json", json.dumps(meta, indent=2, sort_keys=True).encode())
        for k, v in m.params.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(v), allow_pickle=False)
            _zip_write(zf, f"{k}.npy", buf.getvalue())


def load_checkpoint(path: str | Path) -> EncoderModel:
    path = Path(path)
    if not path.exists():
        raise ModelError(f"no such checkpoint: {path}")
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ModelError(f"unsupported checkpoint version {meta.get('version')!r}")
        cfg = EncoderConfig(**meta["config"])
        params = {}
        for k, shape in meta["parameters"].items():
            arr = np.lib.format.read_array(io.BytesIO(zf.read(f"{k}.npy")), allow_pickle=False)
            if list(arr.shape) != shape:
                raise ModelError(f"parameter {k} has shape {arr.shape}, expected {shape}")
            params[k] = arr
    return EncoderModel(cfg, params, meta["head"], meta["n_classes"])
