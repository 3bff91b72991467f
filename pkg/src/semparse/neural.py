"""Attention-based copying sequence-to-sequence model, gradients included.

Bidirectional LSTM encoder over the utterance, attention decoder over the
logical form. At each output step the decoder takes one latent action: write a
token from the output vocabulary, or copy an input word; both logit families
are normalized by a single softmax, and training marginalizes the action out
of the log-likelihood. All gradients are computed by hand-rolled reverse-mode
accumulation (checked against finite differences in the test suite).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import EOS, UNK, DomainConfig


class NeuralError(Exception):
    pass


class UnreachableTargetError(NeuralError):
    """The gold token can be neither written nor copied."""


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


PARAM_NAMES = ("emb_in", "emb_out", "fwd_W", "fwd_b", "bwd_W", "bwd_b",
               "dec_W", "dec_b", "W_s", "W_a", "U")


@dataclass
class ModelParams:
    """All learnable tensors. LSTM weights are stacked gate blocks
    [input, forget, output, candidate], each acting on [x, h_prev]."""

    emb_in: np.ndarray   # (|V_in|, d)
    emb_out: np.ndarray  # (|V_out|, d)
    fwd_W: np.ndarray    # (4H, d + H)
    fwd_b: np.ndarray    # (4H,)
    bwd_W: np.ndarray
    bwd_b: np.ndarray
    dec_W: np.ndarray    # (4H, d + 2H + H)
    dec_b: np.ndarray
    W_s: np.ndarray      # (H, 2H)
    W_a: np.ndarray      # (H, 2H)
    U: np.ndarray        # (|V_out|, 3H)

    @property
    def hidden_dim(self):
        return self.W_s.shape[0]

    @property
    def embed_dim(self):
        return self.emb_in.shape[1]

    def items(self):
        for name in PARAM_NAMES:
            yield name, getattr(self, name)

    def zero_grads(self):
        return {name: np.zeros_like(arr) for name, arr in self.items()}

    def flatten(self):
        return np.concatenate([arr.ravel() for _, arr in self.items()])

    def set_flat(self, vec):
        off = 0
        for _, arr in self.items():
            arr.ravel()[:] = vec[off:off + arr.size]
            off += arr.size

    def copy(self):
        return ModelParams(**{name: arr.copy() for name, arr in self.items()})


def init_params(input_vocab_size, output_vocab_size, embed_dim, hidden_dim, rng):
    """Every parameter uniform in [-0.1, 0.1]."""
    d, H = embed_dim, hidden_dim

    def u(*shape):
        return rng.uniform(-0.1, 0.1, size=shape)

    return ModelParams(
        emb_in=u(input_vocab_size, d),
        emb_out=u(output_vocab_size, d),
        fwd_W=u(4 * H, d + H), fwd_b=u(4 * H),
        bwd_W=u(4 * H, d + H), bwd_b=u(4 * H),
        dec_W=u(4 * H, d + 2 * H + H), dec_b=u(4 * H),
        W_s=u(H, 2 * H),
        W_a=u(H, 2 * H),
        U=u(output_vocab_size, 3 * H),
    )


@dataclass
class Model:
    """Parameters plus everything needed to run them on token sequences."""

    params: ModelParams
    input_vocab: "Vocabulary"
    output_vocab: "Vocabulary"
    config: DomainConfig = field(default_factory=DomainConfig)
    use_copy: bool = True

    def copy_mask(self, surface_tokens):
        if not self.use_copy:
            return np.zeros(len(surface_tokens), dtype=bool)
        return np.array([self.config.copyable(t) for t in surface_tokens], dtype=bool)


def lstm_step(W, b, x, h_prev, c_prev):
    """One gated update; returns (h, c, cache for backward)."""
    H = h_prev.shape[0]
    xh = np.concatenate([x, h_prev])
    if W.shape[1] != xh.shape[0]:
        raise NeuralError("lstm_step: weight shape %s does not match input %d"
                          % (W.shape, xh.shape[0]))
    z = W @ xh + b
    i = sigmoid(z[:H])
    f = sigmoid(z[H:2 * H])
    o = sigmoid(z[2 * H:3 * H])
    g = np.tanh(z[3 * H:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (xh, i, f, o, g, c_prev, tc)


def lstm_backward(W, cache, dh, dc_in, dW, db):
    """Backward through one step; accumulates dW/db, returns (dx_h, dh_prev is
    the tail of dx_h, dc_prev)."""
    xh, i, f, o, g, c_prev, tc = cache
    do = dh * tc
    dc = dc_in + dh * o * (1.0 - tc * tc)
    di = dc * g
    df = dc * c_prev
    dg = dc * i
    dc_prev = dc * f
    dz = np.concatenate([di * i * (1 - i), df * f * (1 - f),
                         do * o * (1 - o), dg * (1 - g * g)])
    dW += np.outer(dz, xh)
    db += dz
    dxh = W.T @ dz
    return dxh, dc_prev


@dataclass
class EncoderStates:
    b: np.ndarray        # (m, 2H) context-sensitive embeddings
    h_last_fwd: np.ndarray
    h_first_bwd: np.ndarray
    caches: tuple = None
    input_ids: tuple = None


def encode(params, input_ids):
    """Bidirectional encoding; b_i concatenates forward and backward states."""
    if len(input_ids) == 0:
        raise NeuralError("cannot encode an empty input")
    H = params.hidden_dim
    m = len(input_ids)
    xs = params.emb_in[list(input_ids)]
    dtype = params.fwd_W.dtype
    hf = np.zeros(H, dtype=dtype)
    cf = np.zeros(H, dtype=dtype)
    fwd_h = np.empty((m, H), dtype=dtype)
    fwd_caches = []
    for i in range(m):
        hf, cf, cache = lstm_step(params.fwd_W, params.fwd_b, xs[i], hf, cf)
        fwd_h[i] = hf
        fwd_caches.append(cache)
    hb = np.zeros(H, dtype=dtype)
    cb = np.zeros(H, dtype=dtype)
    bwd_h = np.empty((m, H), dtype=dtype)
    bwd_caches = [None] * m
    for i in range(m - 1, -1, -1):
        hb, cb, cache = lstm_step(params.bwd_W, params.bwd_b, xs[i], hb, cb)
        bwd_h[i] = hb
        bwd_caches[i] = cache
    return EncoderStates(
        b=np.concatenate([fwd_h, bwd_h], axis=1),
        h_last_fwd=fwd_h[m - 1],
        h_first_bwd=bwd_h[0],
        caches=(fwd_caches, bwd_caches),
        input_ids=tuple(input_ids),
    )


def attend(params, s, enc):
    """Bilinear attention: scores e, softmax weights alpha, context c."""
    e = enc.b @ (params.W_a.T @ s)
    a = np.exp(e - e.max())
    alpha = a / a.sum()
    c = alpha @ enc.b
    return e, alpha, c


def action_distribution(params, s, enc, copy_mask):
    """Joint softmax over write logits and unmasked copy logits.

    Returns a probability vector of length |V_out| + m; masked copy entries
    are exactly zero.
    """
    e, alpha, c = attend(params, s, enc)
    write_logits = params.U @ np.concatenate([s, c])
    m = len(e)
    logits = np.concatenate([write_logits, np.where(copy_mask, e, -np.inf)])
    top = logits.max()
    if not np.isfinite(top):
        raise NeuralError("all actions masked")
    q = np.exp(logits - top)
    q /= q.sum()
    return q


def token_log_prob(dist, n_vocab, target_write_id, copy_positions):
    """Log of the marginal probability of emitting one surface token:
    its write probability plus all matching unmasked copy probabilities."""
    p = 0.0
    if target_write_id is not None:
        p += dist[target_write_id]
    for i in copy_positions:
        p += dist[n_vocab + i]
    if p <= 0.0:
        raise UnreachableTargetError("target token has zero probability")
    return np.log(p)


def _prepare_io(model, example):
    xin = [model.input_vocab.id(t) for t in example.utterance]
    surfaces = example.utterance
    targets = tuple(example.logical_form) + (EOS,)
    return xin, surfaces, targets


def sequence_log_likelihood(model, example, compute_grads=True):
    """Marginalized log-likelihood of the logical form (with </s> appended)
    given the utterance, and exact gradients for every parameter.

    Teacher forcing: each decoder step consumes the gold previous token.
    Returns (log_likelihood, grads dict or None).
    """
    params = model.params
    H = params.hidden_dim
    d = params.embed_dim
    V = params.emb_out.shape[0]
    xin, surfaces, targets = _prepare_io(model, example)
    m = len(xin)
    mask = model.copy_mask(surfaces)
    copy_pos = {}
    for j, tok in enumerate(targets):
        copy_pos[j] = [i for i in range(m) if mask[i] and surfaces[i] == tok]

    enc = encode(params, xin)
    B = enc.b
    u0 = np.concatenate([enc.h_last_fwd, enc.h_first_bwd])
    s = np.tanh(params.W_s @ u0)
    s0 = s
    cdec = np.zeros(H)

    n = len(targets)
    ll = 0.0
    steps = []
    for j in range(n):
        t = params.W_a.T @ s                      # (2H,)
        e = B @ t                                 # (m,)
        emax = e.max()
        a = np.exp(e - emax)
        alpha = a / a.sum()
        c = alpha @ B                             # (2H,)
        sc = np.concatenate([s, c])               # (3H,)
        write_logits = params.U @ sc              # (V,)
        logits = np.concatenate([write_logits, np.where(mask, e, -np.inf)])
        top = logits.max()
        q = np.exp(logits - top)
        q /= q.sum()

        tok = targets[j]
        wid = model.output_vocab.get(tok)
        p = (q[wid] if wid is not None else 0.0) + sum(q[V + i] for i in copy_pos[j])
        if p <= 0.0:
            raise UnreachableTargetError(
                "token %r is not in the output vocabulary and cannot be copied" % tok)
        ll += np.log(p)

        step = {"t": t, "e": e, "alpha": alpha, "c": c, "sc": sc, "q": q,
                "p": p, "wid": wid, "copies": copy_pos[j], "s": s}
        if j < n - 1:
            feed_id = model.output_vocab.id(tok)  # gold token; <unk> if out of vocab
            feed = np.concatenate([params.emb_out[feed_id], c])
            s, cdec, cache = lstm_step(params.dec_W, params.dec_b, feed, s, cdec)
            step["feed_id"] = feed_id
            step["cache"] = cache
        steps.append(step)

    if not compute_grads:
        return ll, None

    grads = params.zero_grads()
    dB = np.zeros_like(B)
    ds_next = np.zeros(H)
    dcdec_next = np.zeros(H)
    for j in range(n - 1, -1, -1):
        st = steps[j]
        ds = np.zeros(H)
        dc = np.zeros(2 * H)
        if j < n - 1:
            dxh, dc_prev = lstm_backward(params.dec_W, st["cache"], ds_next,
                                         dcdec_next, grads["dec_W"], grads["dec_b"])
            grads["emb_out"][st["feed_id"]] += dxh[:d]
            dc += dxh[d:d + 2 * H]
            ds += dxh[d + 2 * H:]
            dcdec = dc_prev
        else:
            dcdec = np.zeros(H)

        # marginalized softmax: dlogit_b = q_b * (1[b in targets]/p - 1)
        q = st["q"]
        dlogits = -q.copy()
        if st["wid"] is not None:
            dlogits[st["wid"]] += q[st["wid"]] / st["p"]
        for i in st["copies"]:
            dlogits[V + i] += q[V + i] / st["p"]
        gw = dlogits[:V]
        de = dlogits[V:].copy()   # masked entries are exactly zero already

        grads["U"] += np.outer(gw, st["sc"])
        dsc = params.U.T @ gw
        ds += dsc[:H]
        dc += dsc[H:]

        alpha = st["alpha"]
        dalpha = B @ dc
        dB += np.outer(alpha, dc)
        de += alpha * (dalpha - alpha @ dalpha)

        dt = B.T @ de
        dB += np.outer(de, st["t"])
        grads["W_a"] += np.outer(st["s"], dt)
        ds += params.W_a @ dt

        ds_next = ds
        dcdec_next = dcdec

    dpre = ds_next * (1.0 - s0 * s0)
    grads["W_s"] += np.outer(dpre, u0)
    du0 = params.W_s.T @ dpre

    # encoder backward
    dfwd_h = dB[:, :H].copy()
    dbwd_h = dB[:, H:].copy()
    dfwd_h[m - 1] += du0[:H]
    dbwd_h[0] += du0[H:]
    fwd_caches, bwd_caches = enc.caches

    dh = np.zeros(H)
    dcm = np.zeros(H)
    for i in range(m - 1, -1, -1):
        dxh, dcm = lstm_backward(params.fwd_W, fwd_caches[i], dh + dfwd_h[i],
                                 dcm, grads["fwd_W"], grads["fwd_b"])
        grads["emb_in"][xin[i]] += dxh[:d]
        dh = dxh[d:]
    dh = np.zeros(H)
    dcm = np.zeros(H)
    for i in range(m):
        dxh, dcm = lstm_backward(params.bwd_W, bwd_caches[i], dh + dbwd_h[i],
                                 dcm, grads["bwd_W"], grads["bwd_b"])
        grads["emb_in"][xin[i]] += dxh[:d]
        dh = dxh[d:]

    return ll, grads


def score_sequence(model, utterance, tokens):
    """Log probability the decoder assigns to emitting `tokens` (then </s>)
    for `utterance`, marginalizing write/copy at each step. This is the
    quantity beam search accumulates."""
    from .corpus import Example
    ll, _ = sequence_log_likelihood(model, Example(tuple(utterance), tuple(tokens)),
                                    compute_grads=False)
    return ll


def clip_gradients(grads, max_norm):
    """Scale gradients so their global L2 norm is at most max_norm."""
    if max_norm is None:
        return grads
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm and total > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return grads


def sgd_ascent_step(params, grads, lr):
    for name, arr in params.items():
        arr += lr * grads[name]
