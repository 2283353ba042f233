"""Two-tower transformer: forward, manual backward, incremental decoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InputError, TrainingError
from .config import ModelConfig

CONTENT = 0
CONDITION = 1

_NEG = -1e30  # additive mask value; exp() underflows to exactly 0
_LN_EPS = 1e-5
_GELU_K = np.sqrt(2.0 / np.pi)

STREAMS = ("A", "B")


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f, v, p = config.embed_dim, config.ffn_dim, config.vocab_size, config.max_positions
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (v, d),
        "pos_content": (p, d),
        "pos_condition": (p, d),
    }
    for i in range(config.layers):
        for blk in ("self", "cross"):
            for w in ("wq", "wk", "wv", "wo"):
                shapes[f"l{i}.{blk}.{w}"] = (d, d)
            for b in ("bq", "bk", "bv", "bo"):
                shapes[f"l{i}.{blk}.{b}"] = (d,)
        for ln in ("ln1", "ln2", "ln3"):
            shapes[f"l{i}.{ln}.g"] = (d,)
            shapes[f"l{i}.{ln}.b"] = (d,)
        shapes[f"l{i}.ffn.w1"] = (d, f)
        shapes[f"l{i}.ffn.b1"] = (f,)
        shapes[f"l{i}.ffn.w2"] = (f, d)
        shapes[f"l{i}.ffn.b2"] = (d,)
    shapes["lnf.g"] = (d,)
    shapes["lnf.b"] = (d,)
    shapes["head.w"] = (d, v)
    shapes["head.b"] = (v,)
    shapes["dur.w"] = (d, 1)
    shapes["dur.b"] = (1,)
    return shapes


def init_params(config: ModelConfig) -> dict[str, np.ndarray]:
    """Seeded initialization; embeddings N(0, 0.02), weights Xavier-uniform,
    norms identity."""
    rng = np.random.default_rng(config.seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if name in ("tok_emb", "pos_content", "pos_condition"):
            params[name] = rng.normal(0.0, 0.02, shape)
        elif leaf == "g":
            params[name] = np.ones(shape)
        elif len(shape) == 2:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-limit, limit, shape)
        else:
            params[name] = np.zeros(shape)
    # the two positional tables start correlated (distinct, but sharing the
    # dominant component): attention can then open the condition-to-content
    # position correspondence along a single scaling direction instead of
    # learning one association per position
    params["pos_condition"] = params["pos_content"] + rng.normal(0.0, 0.005, params["pos_content"].shape)
    return params


def zeros_like_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def parameter_count(params: dict[str, np.ndarray]) -> int:
    return sum(int(v.size) for v in params.values())


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def cross_entropy(
    logits: np.ndarray, targets: np.ndarray, mask: np.ndarray | None = None
) -> tuple[float, np.ndarray]:
    """Mean next-token cross-entropy over masked positions.

    Returns (loss in nats/token, dloss/dlogits). With an all-false mask the
    loss is 0 and the gradient is zero.
    """
    t = logits.shape[0]
    if mask is None:
        mask = np.ones(t, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        return 0.0, np.zeros_like(logits)
    logp = log_softmax(logits)
    loss = -logp[mask, targets[mask]].sum() / count
    dlogits = np.zeros_like(logits)
    probs = np.exp(logp[mask])
    probs[np.arange(count), targets[mask]] -= 1.0
    dlogits[mask] = probs / count
    return float(loss), dlogits


def _ln_forward(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + _LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _ln_backward(dy, cache, g, grads, gname, bname):
    xhat, inv = cache
    grads[gname] += (dy * xhat).sum(axis=0)
    grads[bname] += dy.sum(axis=0)
    dxhat = dy * g
    return inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )


def _gelu_forward(x):
    t = np.tanh(_GELU_K * (x + 0.044715 * x**3))
    return 0.5 * x * (1.0 + t), t


def _gelu_backward(dy, x, t):
    dt = _GELU_K * (1.0 + 3 * 0.044715 * x * x) * (1.0 - t * t)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


def _split_heads(x, heads):
    t, d = x.shape
    return x.reshape(t, heads, d // heads).transpose(1, 0, 2)


def _merge_heads(x):
    h, t, dh = x.shape
    return x.transpose(1, 0, 2).reshape(t, h * dh)


def _attn_forward(q_in, kv_in, params, prefix, mask, heads):
    q = q_in @ params[f"{prefix}.wq"] + params[f"{prefix}.bq"]
    k = kv_in @ params[f"{prefix}.wk"] + params[f"{prefix}.bk"]
    v = kv_in @ params[f"{prefix}.wv"] + params[f"{prefix}.bv"]
    qh, kh, vh = (_split_heads(a, heads) for a in (q, k, v))
    scale = 1.0 / np.sqrt(qh.shape[-1])
    scores = qh @ kh.transpose(0, 2, 1) * scale + mask
    w = softmax(scores)
    ctx = _merge_heads(w @ vh)
    out = ctx @ params[f"{prefix}.wo"] + params[f"{prefix}.bo"]
    return out, (q_in, kv_in, qh, kh, vh, w, ctx)


def _attn_backward(dout, cache, params, prefix, grads, heads):
    q_in, kv_in, qh, kh, vh, w, ctx = cache
    scale = 1.0 / np.sqrt(qh.shape[-1])
    grads[f"{prefix}.wo"] += ctx.T @ dout
    grads[f"{prefix}.bo"] += dout.sum(axis=0)
    dctx = _split_heads(dout @ params[f"{prefix}.wo"].T, heads)
    dw = dctx @ vh.transpose(0, 2, 1)
    dvh = w.transpose(0, 2, 1) @ dctx
    dscores = w * (dw - (dw * w).sum(axis=-1, keepdims=True))
    dscores *= scale
    dqh = dscores @ kh
    dkh = dscores.transpose(0, 2, 1) @ qh
    dq, dk, dv = (_merge_heads(a) for a in (dqh, dkh, dvh))
    grads[f"{prefix}.wq"] += q_in.T @ dq
    grads[f"{prefix}.bq"] += dq.sum(axis=0)
    grads[f"{prefix}.wk"] += kv_in.T @ dk
    grads[f"{prefix}.bk"] += dk.sum(axis=0)
    grads[f"{prefix}.wv"] += kv_in.T @ dv
    grads[f"{prefix}.bv"] += dv.sum(axis=0)
    dq_in = dq @ params[f"{prefix}.wq"].T
    dkv_in = dk @ params[f"{prefix}.wk"].T + dv @ params[f"{prefix}.wv"].T
    return dq_in, dkv_in


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

@dataclass
class ForwardResult:
    logits: dict[str, np.ndarray]  # per stream: (T, vocab)
    durations: dict[str, np.ndarray]  # per stream: (T,)
    cache: dict | None


def _validate_tokens(tokens, config, name):
    tokens = np.ascontiguousarray(tokens, dtype=np.int64)
    if tokens.ndim != 1:
        raise InputError(f"{name} must be 1-d, got shape {tokens.shape}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= config.vocab_size):
        raise InputError(
            f"{name} contains ids outside [0, {config.vocab_size}): "
            f"[{tokens.min()}, {tokens.max()}]"
        )
    return tokens


def _resolve_positions(t, config, pos_kind, positions):
    if pos_kind is None:
        pos_kind = np.zeros(t, dtype=np.int64)
    else:
        pos_kind = np.ascontiguousarray(pos_kind, dtype=np.int64)
        if pos_kind.shape != (t,) or not np.isin(pos_kind, (CONTENT, CONDITION)).all():
            raise InputError("pos_kind must be a length-T array of CONTENT/CONDITION")
    if positions is None:
        positions = np.arange(t, dtype=np.int64)
    else:
        positions = np.ascontiguousarray(positions, dtype=np.int64)
        if positions.shape != (t,):
            raise InputError("positions must have one entry per token")
    if t and positions.max() >= config.max_positions:
        raise InputError(
            f"position {positions.max()} exceeds max_positions {config.max_positions}"
        )
    return pos_kind, positions


def _embed(params, tokens, pos_kind, positions):
    x = params["tok_emb"][tokens].copy()
    cond = pos_kind == CONDITION
    x[~cond] += params["pos_content"][positions[~cond]]
    x[cond] += params["pos_condition"][positions[cond]]
    return x


def forward(
    params: dict[str, np.ndarray],
    config: ModelConfig,
    tokens_a,
    tokens_b,
    pos_kind=None,
    positions=None,
    want_cache: bool = False,
) -> ForwardResult:
    """Run both towers over synchronized streams.

    Causality holds for both streams: outputs at position t depend only on
    positions <= t of either stream (cross-attention is causally masked too).
    """
    ta = _validate_tokens(tokens_a, config, "tokens_a")
    tb = _validate_tokens(tokens_b, config, "tokens_b")
    if ta.shape != tb.shape:
        raise InputError(f"stream lengths differ: {ta.shape[0]} vs {tb.shape[0]}")
    t = ta.shape[0]
    # position indices (default arange) must fit the tables; explicit per-half
    # indices allow sequences longer than max_positions
    pos_kind, positions = _resolve_positions(t, config, pos_kind, positions)

    mask = np.triu(np.full((t, t), _NEG), k=1)
    heads = config.heads
    x = {"A": _embed(params, ta, pos_kind, positions), "B": _embed(params, tb, pos_kind, positions)}
    layer_caches = []
    for i in range(config.layers):
        lc: dict = {}
        n1, s = {}, {}
        for st in STREAMS:
            n, c = _ln_forward(x[st], params[f"l{i}.ln1.g"], params[f"l{i}.ln1.b"])
            lc[f"ln1.{st}"] = c
            out, ac = _attn_forward(n, n, params, f"l{i}.self", mask, heads)
            lc[f"self.{st}"] = ac
            s[st] = x[st] + out
        n2 = {}
        for st in STREAMS:
            n2[st], lc[f"ln2.{st}"] = _ln_forward(s[st], params[f"l{i}.ln2.g"], params[f"l{i}.ln2.b"])
        x2 = {}
        for st, other in (("A", "B"), ("B", "A")):
            out, ac = _attn_forward(n2[st], n2[other], params, f"l{i}.cross", mask, heads)
            lc[f"cross.{st}"] = ac
            x2[st] = s[st] + out
        for st in STREAMS:
            n3, c = _ln_forward(x2[st], params[f"l{i}.ln3.g"], params[f"l{i}.ln3.b"])
            lc[f"ln3.{st}"] = c
            h1 = n3 @ params[f"l{i}.ffn.w1"] + params[f"l{i}.ffn.b1"]
            act, tanh_c = _gelu_forward(h1)
            lc[f"ffn.{st}"] = (n3, h1, tanh_c, act)
            x[st] = x2[st] + act @ params[f"l{i}.ffn.w2"] + params[f"l{i}.ffn.b2"]
        layer_caches.append(lc)

    hf, logits, durs = {}, {}, {}
    lnf_cache = {}
    for st in STREAMS:
        hf[st], lnf_cache[st] = _ln_forward(x[st], params["lnf.g"], params["lnf.b"])
        logits[st] = hf[st] @ params["head.w"] + params["head.b"]
        durs[st] = (hf[st] @ params["dur.w"] + params["dur.b"])[:, 0]

    cache = None
    if want_cache:
        cache = {
            "tokens": {"A": ta, "B": tb},
            "pos_kind": pos_kind,
            "positions": positions,
            "layers": layer_caches,
            "lnf": lnf_cache,
            "hf": hf,
        }
    return ForwardResult(logits=logits, durations=durs, cache=cache)


def backward(
    params: dict[str, np.ndarray],
    config: ModelConfig,
    cache: dict,
    d_logits: dict[str, np.ndarray],
    d_durations: dict[str, np.ndarray] | None = None,
) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given dloss/dlogits (and optionally
    dloss/ddurations) for both streams."""
    if cache is None:
        raise InputError("backward requires a forward cache (want_cache=True)")
    grads = zeros_like_params(params)
    heads = config.heads
    hf = cache["hf"]

    dx = {}
    for st in STREAMS:
        dh = d_logits[st] @ params["head.w"].T
        grads["head.w"] += hf[st].T @ d_logits[st]
        grads["head.b"] += d_logits[st].sum(axis=0)
        if d_durations is not None and d_durations.get(st) is not None:
            dd = d_durations[st][:, None]
            dh += dd @ params["dur.w"].T
            grads["dur.w"] += hf[st].T @ dd
            grads["dur.b"] += dd.sum(axis=0)
        dx[st] = _ln_backward(dh, cache["lnf"][st], params["lnf.g"], grads, "lnf.g", "lnf.b")

    for i in reversed(range(config.layers)):
        lc = cache["layers"][i]
        # ffn block
        dx2 = {}
        for st in STREAMS:
            n3, h1, tanh_c, act = lc[f"ffn.{st}"]
            dout = dx[st]
            grads[f"l{i}.ffn.w2"] += act.T @ dout
            grads[f"l{i}.ffn.b2"] += dout.sum(axis=0)
            dact = dout @ params[f"l{i}.ffn.w2"].T
            dh1 = _gelu_backward(dact, h1, tanh_c)
            grads[f"l{i}.ffn.w1"] += n3.T @ dh1
            grads[f"l{i}.ffn.b1"] += dh1.sum(axis=0)
            dn3 = dh1 @ params[f"l{i}.ffn.w1"].T
            dx2[st] = dx[st] + _ln_backward(
                dn3, lc[f"ln3.{st}"], params[f"l{i}.ln3.g"], grads, f"l{i}.ln3.g", f"l{i}.ln3.b"
            )
        # cross block: n2 of each stream feeds its own queries and the other
        # stream's keys/values
        dn2 = {st: np.zeros_like(dx2[st]) for st in STREAMS}
        for st, other in (("A", "B"), ("B", "A")):
            dq_in, dkv_in = _attn_backward(
                dx2[st], lc[f"cross.{st}"], params, f"l{i}.cross", grads, heads
            )
            dn2[st] += dq_in
            dn2[other] += dkv_in
        ds = {}
        for st in STREAMS:
            ds[st] = dx2[st] + _ln_backward(
                dn2[st], lc[f"ln2.{st}"], params[f"l{i}.ln2.g"], grads, f"l{i}.ln2.g", f"l{i}.ln2.b"
            )
        # self block
        for st in STREAMS:
            dq_in, dkv_in = _attn_backward(
                ds[st], lc[f"self.{st}"], params, f"l{i}.self", grads, heads
            )
            dx[st] = ds[st] + _ln_backward(
                dq_in + dkv_in,
                lc[f"ln1.{st}"],
                params[f"l{i}.ln1.g"],
                grads,
                f"l{i}.ln1.g",
                f"l{i}.ln1.b",
            )

    pos_kind = cache["pos_kind"]
    positions = cache["positions"]
    cond = pos_kind == CONDITION
    for st in STREAMS:
        np.add.at(grads["tok_emb"], cache["tokens"][st], dx[st])
        np.add.at(grads["pos_content"], positions[~cond], dx[st][~cond])
        np.add.at(grads["pos_condition"], positions[cond], dx[st][cond])
    return grads


def backward_and_step(
    params: dict[str, np.ndarray],
    config: ModelConfig,
    cache: dict,
    d_logits: dict[str, np.ndarray],
    optimizer,
    d_durations: dict[str, np.ndarray] | None = None,
) -> None:
    """Backward pass plus one optimizer step, rejecting non-finite gradients."""
    grads = backward(params, config, cache, d_logits, d_durations)
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
    optimizer.step(params, grads)


# ---------------------------------------------------------------------------
# sampling / incremental decoding
# ---------------------------------------------------------------------------

def sample_token(
    logits: np.ndarray,
    temperature: float,
    rng: np.random.Generator,
    allowed: np.ndarray | None = None,
) -> int:
    """Ancestral sample from logits; temperature 0 means argmax."""
    if temperature < 0:
        raise InputError(f"temperature must be >= 0, got {temperature}")
    z = logits.astype(np.float64).copy()
    if allowed is not None:
        z[~allowed] = -np.inf
    if temperature == 0.0:
        return int(np.argmax(z))
    p = softmax(z / temperature)
    return int(rng.choice(p.shape[0], p=p))


class DecodeSession:
    """Incremental two-stream decoding with per-layer KV caches.

    Matches a full forward over the same prefix to float round-off, at O(T)
    cost per step instead of O(T^2).
    """

    def __init__(self, params, config: ModelConfig, max_len: int, pos_kind=None, positions=None):
        if max_len < 1:
            raise InputError("max_len must be >= 1")
        self.params = params
        self.config = config
        self.max_len = max_len
        kind, pos = _resolve_positions(
            max_len,
            config,
            None if pos_kind is None else np.asarray(pos_kind),
            None if positions is None else np.asarray(positions),
        )
        self.pos_kind = kind
        self.positions = pos
        self.t = 0
        hd = config.heads
        dh = config.embed_dim // hd
        shape = (config.layers, hd, max_len, dh)
        self._k_self = {st: np.empty(shape) for st in STREAMS}
        self._v_self = {st: np.empty(shape) for st in STREAMS}
        # cross keys/values derived FROM each stream (consumed by the other)
        self._k_cross = {st: np.empty(shape) for st in STREAMS}
        self._v_cross = {st: np.empty(shape) for st in STREAMS}

    def _attend_step(self, q, keys, values):
        # q: (heads, dh); keys/values: (heads, t+1, dh)
        scale = 1.0 / np.sqrt(q.shape[-1])
        scores = (keys @ q[:, :, None])[:, :, 0] * scale  # (heads, t+1)
        w = softmax(scores, axis=-1)
        return (w[:, None, :] @ values)[:, 0, :]  # (heads, dh)

    def step(self, token_a: int, token_b: int):
        """Feed one token per stream; returns logits and duration estimates
        for the next position."""
        if self.t >= self.max_len:
            raise InputError(f"decode session exhausted at max_len {self.max_len}")
        p, config, t = self.params, self.config, self.t
        heads = config.heads
        dh = config.embed_dim // heads
        kind = "pos_condition" if self.pos_kind[t] == CONDITION else "pos_content"
        toks = {"A": int(token_a), "B": int(token_b)}
        x = {}
        for st in STREAMS:
            if not 0 <= toks[st] < config.vocab_size:
                raise InputError(f"token id {toks[st]} outside vocabulary")
            x[st] = p["tok_emb"][toks[st]] + p[kind][self.positions[t]]
        for i in range(config.layers):
            s = {}
            for st in STREAMS:
                n = _ln_vec(x[st], p[f"l{i}.ln1.g"], p[f"l{i}.ln1.b"])
                q = (n @ p[f"l{i}.self.wq"] + p[f"l{i}.self.bq"]).reshape(heads, dh)
                self._k_self[st][i, :, t] = (n @ p[f"l{i}.self.wk"] + p[f"l{i}.self.bk"]).reshape(heads, dh)
                self._v_self[st][i, :, t] = (n @ p[f"l{i}.self.wv"] + p[f"l{i}.self.bv"]).reshape(heads, dh)
                ctx = self._attend_step(q, self._k_self[st][i, :, : t + 1], self._v_self[st][i, :, : t + 1])
                s[st] = x[st] + ctx.reshape(-1) @ p[f"l{i}.self.wo"] + p[f"l{i}.self.bo"]
            n2 = {}
            for st in STREAMS:
                n2[st] = _ln_vec(s[st], p[f"l{i}.ln2.g"], p[f"l{i}.ln2.b"])
                self._k_cross[st][i, :, t] = (n2[st] @ p[f"l{i}.cross.wk"] + p[f"l{i}.cross.bk"]).reshape(heads, dh)
                self._v_cross[st][i, :, t] = (n2[st] @ p[f"l{i}.cross.wv"] + p[f"l{i}.cross.bv"]).reshape(heads, dh)
            for st, other in (("A", "B"), ("B", "A")):
                q = (n2[st] @ p[f"l{i}.cross.wq"] + p[f"l{i}.cross.bq"]).reshape(heads, dh)
                ctx = self._attend_step(
                    q, self._k_cross[other][i, :, : t + 1], self._v_cross[other][i, :, : t + 1]
                )
                x[st] = s[st] + ctx.reshape(-1) @ p[f"l{i}.cross.wo"] + p[f"l{i}.cross.bo"]
            for st in STREAMS:
                n3 = _ln_vec(x[st], p[f"l{i}.ln3.g"], p[f"l{i}.ln3.b"])
                h1 = n3 @ p[f"l{i}.ffn.w1"] + p[f"l{i}.ffn.b1"]
                act, _ = _gelu_forward(h1)
                x[st] = x[st] + act @ p[f"l{i}.ffn.w2"] + p[f"l{i}.ffn.b2"]
        logits, durs = {}, {}
        for st in STREAMS:
            h = _ln_vec(x[st], p["lnf.g"], p["lnf.b"])
            logits[st] = h @ p["head.w"] + p["head.b"]
            durs[st] = float(h @ p["dur.w"] + p["dur.b"])
        self.t += 1
        return logits, durs


def _ln_vec(x, g, b):
    mu = x.mean()
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean() + _LN_EPS)
    return xc * inv * g + b
