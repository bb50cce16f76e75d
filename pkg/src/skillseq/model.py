"""Transformer encoder-decoder conditioned on a latent skill vector.

The skill vector z is concatenated to every token embedding (encoder and
decoder side), projected into the model width, and the shared token
embedding doubles as the output softmax layer. All four variants run
through one code path: `base` hard-wires z to zero, `nolatent` looks z up
in a per-dataset table, `nodataset` and `full` draw it from the latent
machinery.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .tensor import MASK_NEG, Tensor, apply, scaled_dot_product_attention
from .tokenizer import BOS, EOS

VARIANTS = ("full", "nodataset", "nolatent", "base")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "full"
    layers: int = 2
    embed_dim: int = 128
    model_dim: int = 128
    heads: int = 4
    latent_dim: int = 16
    ffn_dim: int = 256
    dataset_count: int = 1
    max_positions: int = 512
    vocab_size: int = 0
    activation: str = "relu"
    inference_hidden: int = 0   # 0 -> 4 * latent_dim

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.model_dim % self.heads != 0:
            raise ValueError(f"heads ({self.heads}) must divide model_dim ({self.model_dim})")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.activation not in ("relu", "gelu"):
            raise ValueError("activation must be relu or gelu")

    @property
    def n_components(self):
        return self.dataset_count + 1

    @property
    def q_hidden(self):
        return self.inference_hidden or 4 * self.latent_dim

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _decoder_layer_names(i):
    base = [f"dec{i}_ln1_g", f"dec{i}_ln1_b"]
    base += [f"dec{i}_self_{p}_{s}" for p in "qkvo" for s in "wb"]
    base += [f"dec{i}_ln2_g", f"dec{i}_ln2_b"]
    base += [f"dec{i}_cross_{p}_{s}" for p in "qkvo" for s in "wb"]
    base += [f"dec{i}_ln3_g", f"dec{i}_ln3_b"]
    base += [f"dec{i}_ffn_w1", f"dec{i}_ffn_b1", f"dec{i}_ffn_w2", f"dec{i}_ffn_b2"]
    return base


def parameter_shapes(config):
    """Canonical name -> shape map for every trainable array of a variant."""
    e, m, f, l = config.embed_dim, config.model_dim, config.ffn_dim, config.latent_dim
    v, p, c = config.vocab_size, config.max_positions, config.n_components
    shapes = {
        "tok_embed": (v, e),
        "pos_embed": (p, e),
        "proj_in_w": (e + l, m),
        "proj_in_b": (m,),
        "proj_out_w": (m, e),
        "proj_out_b": (e,),
    }
    for i in range(config.layers):
        shapes[f"enc{i}_ln1_g"] = (m,)
        shapes[f"enc{i}_ln1_b"] = (m,)
        for proj in "qkvo":
            shapes[f"enc{i}_attn_{proj}_w"] = (m, m)
            shapes[f"enc{i}_attn_{proj}_b"] = (m,)
        shapes[f"enc{i}_ln2_g"] = (m,)
        shapes[f"enc{i}_ln2_b"] = (m,)
        shapes[f"enc{i}_ffn_w1"] = (m, f)
        shapes[f"enc{i}_ffn_b1"] = (f,)
        shapes[f"enc{i}_ffn_w2"] = (f, m)
        shapes[f"enc{i}_ffn_b2"] = (m,)
    shapes["enc_lnf_g"] = (m,)
    shapes["enc_lnf_b"] = (m,)
    for i in range(config.layers):
        for name in _decoder_layer_names(i):
            if name.endswith(("_w",)) and ("_self_" in name or "_cross_" in name):
                shapes[name] = (m, m)
            elif name.endswith("_b") and ("_self_" in name or "_cross_" in name):
                shapes[name] = (m,)
            elif name.endswith(("ln1_g", "ln1_b", "ln2_g", "ln2_b", "ln3_g", "ln3_b")):
                shapes[name] = (m,)
            elif name.endswith("ffn_w1"):
                shapes[name] = (m, f)
            elif name.endswith("ffn_b1"):
                shapes[name] = (f,)
            elif name.endswith("ffn_w2"):
                shapes[name] = (f, m)
            elif name.endswith("ffn_b2"):
                shapes[name] = (m,)
    shapes["dec_lnf_g"] = (m,)
    shapes["dec_lnf_b"] = (m,)

    if config.variant == "nolatent":
        shapes["task_embed"] = (c, l)
    if config.variant in ("full", "nodataset"):
        h = config.q_hidden
        shapes["inf_w1"] = (e + c, h)
        shapes["inf_b1"] = (h,)
        shapes["inf_w2"] = (h, 2 * l)
        shapes["inf_b2"] = (2 * l,)
    if config.variant == "full":
        shapes["prior_mean"] = (c, l)
        shapes["prior_logvar"] = (c, l)
    return shapes


def parameter_count(config):
    return sum(int(np.prod(s)) for s in parameter_shapes(config).values())


def init_params(config, rng, dtype=np.float32):
    """Fresh parameter set; q's output layer and the prior start at N(0, I)."""
    if config.vocab_size <= 0:
        raise ValueError("config.vocab_size must be set before init")
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith("_g"):
            arr = np.ones(shape)
        elif name.endswith("_b") or name in ("inf_w2", "inf_b2", "prior_logvar"):
            arr = np.zeros(shape)
        elif name in ("prior_mean", "task_embed"):
            arr = rng.normal(0.0, 0.01, size=shape)
        else:
            arr = rng.normal(0.0, 0.02, size=shape)
        params[name] = Tensor(arr.astype(dtype), requires_grad=True)
    return params


def params_to_arrays(params):
    return {k: t.data for k, t in params.items()}


def arrays_to_params(arrays, requires_grad=True):
    return {k: Tensor(np.array(v), requires_grad=requires_grad) for k, v in arrays.items()}


# -- forward pieces ----------------------------------------------------------


def _linear(h, params, name):
    return apply("add", apply("matmul", h, params[f"{name}_w"]), params[f"{name}_b"])


def _ln(h, params, name):
    normed = apply("layer-normalize", h)
    return apply("add", apply("multiply", normed, params[f"{name}_g"]), params[f"{name}_b"])


def _split_heads(h, heads):
    b, s, m = h.shape
    return h.reshape(b, s, heads, m // heads).transpose((0, 2, 1, 3))


def _merge_heads(h):
    b, nh, s, dh = h.shape
    return h.transpose((0, 2, 1, 3)).reshape(b, s, nh * dh)


def _mha(params, prefix, config, h, kv=None, mask_add=None):
    kv = h if kv is None else kv
    q = _split_heads(_linear(h, params, f"{prefix}_q"), config.heads)
    k = _split_heads(_linear(kv, params, f"{prefix}_k"), config.heads)
    v = _split_heads(_linear(kv, params, f"{prefix}_v"), config.heads)
    ctx = scaled_dot_product_attention(q, k, v, mask_add)
    return _linear(_merge_heads(ctx), params, f"{prefix}_o")


def _ffn(params, prefix, config, h):
    inner = apply(config.activation, apply("add", apply("matmul", h, params[f"{prefix}_w1"]),
                                           params[f"{prefix}_b1"]))
    return apply("add", apply("matmul", inner, params[f"{prefix}_w2"]), params[f"{prefix}_b2"])


def _key_pad_mask(mask, dtype):
    # [B, S] validity -> additive [B, 1, 1, S]
    return Tensor(((1.0 - mask) * MASK_NEG).astype(dtype)[:, None, None, :])


def _causal_mask(s, dtype):
    tri = np.triu(np.full((s, s), MASK_NEG), k=1)
    return tri.astype(dtype)[None, None, :, :]


def _as_z_tensor(z, config, batch, dtype):
    if z is None:
        if config.variant != "base":
            raise ValueError(f"variant {config.variant} requires a skill vector")
        return Tensor(np.zeros((batch, config.latent_dim), dtype=dtype))
    zt = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=dtype))
    if zt.ndim == 1:
        zt = zt.reshape(1, zt.shape[0])
    if zt.shape[-1] != config.latent_dim:
        raise ValueError(f"skill vector dim {zt.shape[-1]} does not match "
                         f"latent_dim {config.latent_dim}")
    return zt


def _embed_with_skill(params, config, ids, z):
    b, s = ids.shape
    emb = apply("embedding-gather", params["tok_embed"], ids=ids)
    if s > config.max_positions:
        raise ValueError(f"sequence length {s} exceeds max_positions {config.max_positions}")
    pos = params["pos_embed"][:s].reshape(1, s, config.embed_dim)
    emb = apply("add", emb, pos)
    if z.shape[0] == 1 and b > 1:
        z = apply("add", z, Tensor(np.zeros((b, 1), dtype=z.dtype)))
    zb = apply("add", z.reshape(z.shape[0], 1, config.latent_dim),
               Tensor(np.zeros((1, s, 1), dtype=z.dtype)))
    joint = apply("concat-last-axis", emb, zb)
    return _linear(joint, params, "proj_in")


def encode(params, config, x_ids, x_mask, z=None):
    """Contextual encoder states [B, Sx, model_dim]; PAD keys masked."""
    x_ids = np.asarray(x_ids)
    if x_ids.ndim == 1:
        x_ids = x_ids[None, :]
        x_mask = np.ones_like(x_ids, dtype=np.float64) if x_mask is None else np.asarray(x_mask)[None, :]
    if x_mask is None:
        x_mask = np.ones_like(x_ids, dtype=np.float64)
    dtype = params["tok_embed"].dtype
    z = _as_z_tensor(z, config, x_ids.shape[0], dtype)
    h = _embed_with_skill(params, config, x_ids, z)
    pad = _key_pad_mask(np.asarray(x_mask), dtype)
    for i in range(config.layers):
        h = apply("add", h, _mha(params, f"enc{i}_attn", config, _ln(h, params, f"enc{i}_ln1"),
                                 mask_add=pad))
        h = apply("add", h, _ffn(params, f"enc{i}_ffn", config, _ln(h, params, f"enc{i}_ln2")))
    return _ln(h, params, "enc_lnf")


def decode_logits(params, config, enc_states, x_mask, prefix_ids, prefix_mask, z=None):
    """Next-token logits [B, S, V] under causal self-attention and cross-attention."""
    prefix_ids = np.asarray(prefix_ids)
    if prefix_ids.ndim == 1:
        prefix_ids = prefix_ids[None, :]
        prefix_mask = None if prefix_mask is None else np.asarray(prefix_mask)[None, :]
    if prefix_mask is None:
        prefix_mask = np.ones_like(prefix_ids, dtype=np.float64)
    if not np.all(prefix_ids[:, 0] == BOS):
        raise ValueError("decoder prefix must begin with BOS")
    dtype = params["tok_embed"].dtype
    b, s = prefix_ids.shape
    z = _as_z_tensor(z, config, b, dtype)
    h = _embed_with_skill(params, config, prefix_ids, z)
    self_mask = Tensor(_causal_mask(s, dtype)
                       + ((1.0 - np.asarray(prefix_mask)) * MASK_NEG).astype(dtype)[:, None, None, :])
    cross_mask = _key_pad_mask(np.asarray(x_mask), dtype)
    for i in range(config.layers):
        h = apply("add", h, _mha(params, f"dec{i}_self", config, _ln(h, params, f"dec{i}_ln1"),
                                 mask_add=self_mask))
        h = apply("add", h, _mha(params, f"dec{i}_cross", config, _ln(h, params, f"dec{i}_ln2"),
                                 kv=enc_states, mask_add=cross_mask))
        h = apply("add", h, _ffn(params, f"dec{i}_ffn", config, _ln(h, params, f"dec{i}_ln3")))
    h = _ln(h, params, "dec_lnf")
    out_e = _linear(h, params, "proj_out")
    return apply("matmul", out_e, params["tok_embed"].transpose((1, 0)))


def sequence_logprob(params, config, x_ids, x_mask, y_ids, y_mask, z=None):
    """Teacher-forced sum of token log-probs per example.

    Returns (logprob [B] Tensor, token_counts [B] array); y rows are
    BOS ... EOS wrapped and PAD-masked.
    """
    x_ids = np.asarray(x_ids)
    if x_ids.ndim == 1:
        x_ids = x_ids[None, :]
        x_mask = None if x_mask is None else np.asarray(x_mask).reshape(1, -1)
    if x_mask is None:
        x_mask = np.ones_like(x_ids, dtype=np.float64)
    y_ids = np.asarray(y_ids)
    if y_ids.ndim == 1:
        y_ids = y_ids[None, :]
        y_mask = None if y_mask is None else np.asarray(y_mask).reshape(1, -1)
    if y_mask is None:
        y_mask = np.ones_like(y_ids, dtype=np.float64)
    y_mask = np.asarray(y_mask)
    enc = encode(params, config, x_ids, x_mask, z)
    prefix, targets, tmask = y_ids[:, :-1], y_ids[:, 1:], y_mask[:, 1:]
    logits = decode_logits(params, config, enc, x_mask, prefix, y_mask[:, :-1], z)
    nll = apply("cross-entropy-with-logits", logits, targets=targets)
    dtype = params["tok_embed"].dtype
    masked = apply("multiply", nll, Tensor(tmask.astype(dtype)))
    logprob = apply("negate", masked.sum(axis=1))
    return logprob, tmask.sum(axis=1)


def greedy_decode(params, config, x_ids, x_mask=None, z=None, max_len=64):
    """Argmax decoding from BOS until EOS or max_len; ties resolve to lowest id.

    Returns generated token ids per row, BOS/EOS excluded.
    """
    x_ids = np.asarray(x_ids)
    single = x_ids.ndim == 1
    if single:
        x_ids = x_ids[None, :]
        x_mask = None if x_mask is None else np.asarray(x_mask)[None, :]
    if x_mask is None:
        x_mask = np.ones_like(x_ids, dtype=np.float64)
    b = x_ids.shape[0]
    dtype = params["tok_embed"].dtype
    z = _as_z_tensor(z, config, b, dtype)
    enc = encode(params, config, x_ids, x_mask, z)
    enc = Tensor(enc.data)  # decoding needs no gradients
    zc = Tensor(z.data)
    prefix = np.full((b, 1), BOS, dtype=np.int64)
    done = np.zeros(b, dtype=bool)
    for _ in range(max_len):
        logits = decode_logits(params, config, enc, x_mask, prefix, None, zc)
        nxt = np.argmax(logits.data[:, -1, :], axis=-1)
        nxt = np.where(done, EOS, nxt)
        prefix = np.concatenate([prefix, nxt[:, None]], axis=1)
        done |= nxt == EOS
        if done.all():
            break
    outs = []
    for row in prefix[:, 1:]:
        ids = []
        for t in row:
            if t == EOS:
                break
            ids.append(int(t))
        outs.append(ids)
    return outs[0] if single else outs


def skill_vector(params, config, component_id, rows=1):
    """The deterministic z used for prediction with a given component id."""
    if not 1 <= component_id <= config.n_components:
        raise ValueError(f"component id {component_id} out of range "
                         f"[1, {config.n_components}]")
    if config.variant == "full":
        z = params["prior_mean"].data[component_id - 1]
    elif config.variant == "nolatent":
        z = params["task_embed"].data[component_id - 1]
    else:
        z = np.zeros(config.latent_dim, dtype=params["tok_embed"].dtype)
    return np.repeat(z[None, :], rows, axis=0)
