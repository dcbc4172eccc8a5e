"""Transducer tail: LSTM predictor, additive joint, RNN-T and CTC losses,
greedy streaming decoding and word-error-rate scoring.

Losses run in double precision with full lattice forward-backward; gradients
are returned w.r.t. the joint (or frame) logits. Training is out of scope.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleAlignmentError, ShapeError, UndefinedMetricError
from .numerics import LstmWeights, init_lstm, lstm_step

NEG_INF = -np.inf


@dataclass
class TransducerTail:
    embed: np.ndarray        # [V+1, d_pred]; blank row doubles as start symbol
    lstm: LstmWeights
    w_enc: np.ndarray        # [d_joint, d_enc]
    w_pred: np.ndarray       # [d_joint, d_pred]
    b_joint: np.ndarray
    w_out: np.ndarray        # [V+1, d_joint]
    b_out: np.ndarray
    blank_id: int


def init_tail(rng, d_enc, d_pred, vocab, dtype=np.float64):
    j = d_pred
    return TransducerTail(
        embed=rng.glorot((vocab + 1, d_pred), vocab + 1, d_pred, dtype),
        lstm=init_lstm(rng, d_pred, d_pred, dtype),
        w_enc=rng.glorot((j, d_enc), d_enc, j, dtype),
        w_pred=rng.glorot((j, d_pred), d_pred, j, dtype),
        b_joint=np.zeros(j, dtype=dtype),
        w_out=rng.glorot((vocab + 1, j), j, vocab + 1, dtype),
        b_out=np.zeros(vocab + 1, dtype=dtype),
        blank_id=vocab,
    )


def predictor_states(targets, tail):
    """LSTM outputs for the blank-started label history: [U+1, d_pred]."""
    h = np.zeros(tail.lstm.w_hh.shape[1], dtype=tail.embed.dtype)
    c = np.zeros_like(h)
    states = [None] * (len(targets) + 1)
    h, c = lstm_step(tail.embed[tail.blank_id], h, c, tail.lstm)
    states[0] = h
    for u, label in enumerate(targets):
        h, c = lstm_step(tail.embed[label], h, c, tail.lstm)
        states[u + 1] = h
    return np.stack(states)


def joint_logits(enc, pred, tail):
    """Additive joint: tanh(W_e enc + W_p pred + b) projected to V+1 logits."""
    if enc.shape[1] != tail.w_enc.shape[1]:
        raise ShapeError(f"joint: encoder dim {enc.shape} vs {tail.w_enc.shape}")
    e = enc @ tail.w_enc.T          # [T, J]
    p = pred @ tail.w_pred.T        # [U+1, J]
    h = np.tanh(e[:, None, :] + p[None, :, :] + tail.b_joint)
    return h @ tail.w_out.T + tail.b_out  # [T, U+1, V+1]


def _log_softmax(logits):
    m = logits.max(axis=-1, keepdims=True)
    s = logits - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def rnnt_loss_from_logits(logits, targets, blank_id):
    """RNN-T loss and gradient w.r.t. the joint logits [T, U+1, V+1].

    Forward lattice over (t, u): blank consumes a frame, emit consumes a
    label. loss = -log P(targets); gradients via forward-backward occupancy.
    """
    logits = np.asarray(logits, dtype=np.float64)
    t_len, u_len1, _ = logits.shape
    u_len = u_len1 - 1
    if len(targets) != u_len:
        raise ShapeError(f"rnnt: logits U+1={u_len1} vs {len(targets)} targets")
    logp = _log_softmax(logits)
    lp_blank = logp[:, :, blank_id]                       # [T, U+1]
    lp_emit = np.full((t_len, u_len1), NEG_INF)
    if u_len:
        idx = np.broadcast_to(np.asarray(targets)[None, :, None], (t_len, u_len, 1))
        lp_emit[:, :u_len] = np.take_along_axis(logp[:, :u_len, :], idx, axis=2)[:, :, 0]

    alpha = np.full((t_len, u_len1), NEG_INF)
    alpha[0, 0] = 0.0
    for t in range(t_len):
        for u in range(u_len1):
            if t == 0 and u == 0:
                continue
            terms = []
            if t > 0:
                terms.append(alpha[t - 1, u] + lp_blank[t - 1, u])
            if u > 0:
                terms.append(alpha[t, u - 1] + lp_emit[t, u - 1])
            alpha[t, u] = np.logaddexp.reduce(terms)
    log_z = alpha[t_len - 1, u_len] + lp_blank[t_len - 1, u_len]
    loss = -log_z

    beta = np.full((t_len, u_len1), NEG_INF)
    beta[t_len - 1, u_len] = lp_blank[t_len - 1, u_len]
    for t in range(t_len - 1, -1, -1):
        for u in range(u_len, -1, -1):
            if t == t_len - 1 and u == u_len:
                continue
            terms = []
            if t < t_len - 1:
                terms.append(lp_blank[t, u] + beta[t + 1, u])
            if u < u_len:
                terms.append(lp_emit[t, u] + beta[t, u + 1])
            beta[t, u] = np.logaddexp.reduce(terms)

    # transition occupancies
    gamma = np.zeros_like(logits)
    blank_next = np.full((t_len, u_len1), NEG_INF)
    blank_next[:-1, :] = beta[1:, :]
    blank_next[t_len - 1, u_len] = 0.0  # terminal blank
    gamma[:, :, blank_id] = np.exp(alpha + lp_blank + blank_next - log_z)
    if u_len:
        emit_occ = np.exp(alpha[:, :u_len] + lp_emit[:, :u_len] + beta[:, 1:] - log_z)
        np.add.at(gamma, (slice(None), np.arange(u_len), np.asarray(targets)), emit_occ)
    node_mass = gamma.sum(axis=-1, keepdims=True)
    grad = np.exp(logp) * node_mass - gamma
    return loss, grad


def rnnt_loss(enc, targets, tail):
    """Loss and joint-logit gradient for encoder output enc [T, d_enc]."""
    pred = predictor_states(targets, tail)
    logits = joint_logits(enc, pred, tail)
    return rnnt_loss_from_logits(logits, targets, tail.blank_id)


def ctc_required_length(targets):
    reps = sum(1 for a, b in zip(targets, targets[1:]) if a == b)
    return len(targets) + reps


def ctc_loss(logits, targets, blank_id):
    """CTC loss and gradient over frame logits [T, V+1].

    Alpha/beta recursion over the blank-interleaved extended target; raises
    when T is too short to fit the labels.
    """
    logits = np.asarray(logits, dtype=np.float64)
    t_len = logits.shape[0]
    need = ctc_required_length(targets)
    if t_len < need:
        raise InfeasibleAlignmentError(
            f"CTC: {t_len} frames cannot align {len(targets)} labels"
            f" (minimum {need})", required_length=need)
    ext = []
    for label in targets:
        ext.extend([blank_id, label])
    ext.append(blank_id)
    ext = np.array(ext, dtype=np.int64)
    s_len = len(ext)
    logp = _log_softmax(logits)
    lp = logp[:, ext]  # [T, S]

    def allow_skip(s):
        return s >= 2 and ext[s] != blank_id and ext[s] != ext[s - 2]

    alpha = np.full((t_len, s_len), NEG_INF)
    alpha[0, 0] = lp[0, 0]
    if s_len > 1:
        alpha[0, 1] = lp[0, 1]
    for t in range(1, t_len):
        for s in range(s_len):
            terms = [alpha[t - 1, s]]
            if s >= 1:
                terms.append(alpha[t - 1, s - 1])
            if allow_skip(s):
                terms.append(alpha[t - 1, s - 2])
            alpha[t, s] = np.logaddexp.reduce(terms) + lp[t, s]

    log_z = np.logaddexp(alpha[t_len - 1, s_len - 1],
                         alpha[t_len - 1, s_len - 2] if s_len > 1 else NEG_INF)
    loss = -log_z

    beta = np.full((t_len, s_len), NEG_INF)
    beta[t_len - 1, s_len - 1] = lp[t_len - 1, s_len - 1]
    if s_len > 1:
        beta[t_len - 1, s_len - 2] = lp[t_len - 1, s_len - 2]
    for t in range(t_len - 2, -1, -1):
        for s in range(s_len):
            terms = [beta[t + 1, s]]
            if s + 1 < s_len:
                terms.append(beta[t + 1, s + 1])
            if s + 2 < s_len and allow_skip(s + 2):
                terms.append(beta[t + 1, s + 2])
            beta[t, s] = np.logaddexp.reduce(terms) + lp[t, s]

    # alpha*beta double-counts the emission at t; divide it out
    occ = alpha + beta - lp - log_z  # log occupancy of (t, s)
    grad = np.exp(logp)
    for s in range(s_len):
        grad[:, ext[s]] -= np.exp(occ[:, s])
    return loss, grad


def greedy_decode(enc_chunks, tail, max_symbols_per_frame=10):
    """Frame-synchronous greedy RNN-T decoding over a stream of encoder chunks.

    Predictor state persists across chunks (output-side state only). Emits
    while the argmax is non-blank, capped per frame to guarantee termination.
    """
    h = np.zeros(tail.lstm.w_hh.shape[1], dtype=tail.embed.dtype)
    c = np.zeros_like(h)
    h, c = lstm_step(tail.embed[tail.blank_id], h, c, tail.lstm)
    out = []
    for chunk in enc_chunks:
        for frame in chunk:
            e = tail.w_enc @ frame
            for _ in range(max_symbols_per_frame):
                j = np.tanh(e + tail.w_pred @ h + tail.b_joint)
                logits = tail.w_out @ j + tail.b_out
                label = int(np.argmax(logits))
                if label == tail.blank_id:
                    break
                out.append(label)
                h, c = lstm_step(tail.embed[label], h, c, tail.lstm)
    return out


def edit_distance(ref, hyp):
    """Levenshtein distance over token sequences."""
    n, m = len(ref), len(hyp)
    prev = list(range(m + 1))
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        for j in range(1, m + 1):
            sub = prev[j - 1] + (ref[i - 1] != hyp[j - 1])
            cur[j] = min(sub, prev[j] + 1, cur[j - 1] + 1)
        prev = cur
    return prev[m]


def wer(reference, hypothesis):
    if not reference:
        raise UndefinedMetricError("WER undefined for an empty reference")
    return edit_distance(reference, hypothesis) / len(reference)
