"""Independent straight-line re-implementations used as test oracles.

Everything here is deliberately written in a different style from the
library: explicit loops over heads and nodes, plain numpy, no Tensor, no
tape, no layer abstraction. These functions define what the fused
implementations must reproduce.
"""

import math

import numpy as np

from graphmt.data import EOS_ID
from graphmt.decoder import decode_states, output_logits


def naive_matmul(a, b):
    """Triple-loop matrix product for 2-d operands."""
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def row_softmax(scores):
    out = np.empty_like(scores)
    for i in range(scores.shape[0]):
        row = scores[i]
        finite = row[np.isfinite(row)]
        shifted = np.exp(row - finite.max())
        out[i] = shifted / shifted.sum()
    return out


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def layer_norm(x, gain, bias, eps=1e-6):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return gain * (x - mu) / np.sqrt(var + eps) + bias


def attention(q_in, k_in, v_in, wq, wk, wv=None, wo=None, n_heads=1, mask=None):
    """Per-head loop attention; wv/wo None gives the simplified variant."""
    d = q_in.shape[1]
    dh = d // n_heads
    q = q_in @ wq.T
    k = k_in @ wk.T
    v = v_in @ wv.T if wv is not None else v_in
    head_outputs = []
    for h in range(n_heads):
        cols = slice(h * dh, (h + 1) * dh)
        scores = q[:, cols] @ k[:, cols].T / math.sqrt(dh)
        if mask is not None:
            scores = np.where(mask, scores, -np.inf)
        head_outputs.append(row_softmax(scores) @ v[:, cols])
    merged = np.concatenate(head_outputs, axis=1)
    return merged @ wo.T if wo is not None else merged


def ffn(x, p):
    hidden = np.maximum(x @ p.w1.data.T + p.b1.data, 0.0)
    return hidden @ p.w2.data.T + p.b2.data


def _ln(x, p):
    return layer_norm(x, p.gain.data, p.bias.data)


def fusion_layer(h_x, h_o, graph, lp, n_heads, is_last_layer,
                 inter_modal_fusion=True, unified=False):
    """Straight-line re-derivation of one fusion layer (eval mode)."""
    # Step 1: intra-modal self-attention, residual + layer norm.
    ta = lp.text_attn
    c_x = _ln(h_x + attention(h_x, h_x, h_x, ta.wq.data, ta.wk.data,
                              ta.wv.data, ta.wo.data, n_heads), lp.text_attn_norm)
    n_vis = h_o.shape[0]
    if n_vis:
        va = lp.vis_attn
        if unified:
            a_o = attention(h_o, h_o, h_o, va.wq.data, va.wk.data,
                            va.wv.data, va.wo.data, n_heads)
        else:
            a_o = attention(h_o, h_o, h_o, va.wq.data, va.wk.data, n_heads=n_heads)
        c_o = _ln(h_o + a_o, lp.vis_attn_norm)
    else:
        c_o = h_o

    # Step 2: per-node gated neighbor sums, residual on C, layer norm, FFN.
    edges = list(graph.inter_edges) if inter_modal_fusion else []
    if edges and n_vis:
        gated_x = np.zeros_like(c_x)
        for i in range(c_x.shape[0]):
            for t, o in edges:
                if t == i:
                    alpha = sigmoid(lp.gate_w1.data @ c_x[i] + lp.gate_w2.data @ c_o[o])
                    gated_x[i] += alpha * c_o[o]
        gated_o = np.zeros_like(c_o)
        for j in range(n_vis):
            for t, o in edges:
                if o == j:
                    beta = sigmoid(lp.gate_w3.data @ c_o[j] + lp.gate_w4.data @ c_x[t])
                    gated_o[j] += beta * c_x[t]
        m_x = _ln(c_x + gated_x, lp.text_gate_norm)
        m_o = _ln(c_o + gated_o, lp.vis_gate_norm)
    else:
        m_x = _ln(c_x, lp.text_gate_norm)
        m_o = _ln(c_o, lp.vis_gate_norm) if n_vis else c_o

    new_h_x = _ln(m_x + ffn(m_x, lp.text_ffn), lp.text_ffn_norm)
    if n_vis and not is_last_layer:
        new_h_o = _ln(m_o + ffn(m_o, lp.vis_ffn), lp.vis_ffn_norm)
    else:
        new_h_o = m_o
    return new_h_x, new_h_o


def position_encoding(n, d):
    pe = np.zeros((n, d))
    for pos in range(n):
        for k in range(d):
            angle = pos / 10000 ** ((k // 2 * 2) / d)
            pe[pos, k] = math.sin(angle) if k % 2 == 0 else math.cos(angle)
    return pe


def decoder_stack(prefix_ids, h_x, h_o, params, n_heads, attend_mode="textual"):
    """Straight-line decoder (eval mode): masked self-attn, cross-attn, FFN."""
    t = len(prefix_ids)
    s = params.target_embedding.data[list(prefix_ids)] + position_encoding(
        t, params.target_embedding.data.shape[1])
    mask = np.tril(np.ones((t, t), dtype=bool))
    for lp in params.layers:
        sa = lp.self_attn
        e = _ln(s + attention(s, s, s, sa.wq.data, sa.wk.data, sa.wv.data,
                              sa.wo.data, n_heads, mask=mask), lp.self_attn_norm)
        ca = lp.cross_attn
        if attend_mode == "textual":
            ctx = attention(e, h_x, h_x, ca.wq.data, ca.wk.data, ca.wv.data,
                            ca.wo.data, n_heads)
        elif attend_mode == "visual":
            ctx = attention(e, h_o, h_o, ca.wq.data, ca.wk.data, ca.wv.data,
                            ca.wo.data, n_heads)
        else:
            ctx = attention(e, h_x, h_x, ca.wq.data, ca.wk.data, ca.wv.data,
                            ca.wo.data, n_heads)
            if h_o.shape[0]:
                cv = lp.cross_attn_vis
                ctx = ctx + attention(e, h_o, h_o, cv.wq.data, cv.wk.data,
                                      cv.wv.data, cv.wo.data, n_heads)
        tt = _ln(e + ctx, lp.cross_attn_norm)
        s = _ln(tt + ffn(tt, lp.ffn), lp.ffn_norm)
    return s


def next_token_logprobs(prefix, enc_out, params, config):
    """Log-probabilities for the next token, normalized independently."""
    states = decode_states(prefix, enc_out, params, config, mode="eval")
    logits = output_logits(states, params).data[-1]
    shifted = logits - logits.max()
    return shifted - math.log(np.exp(shifted).sum())


def enumerate_best_sequence(enc_out, params, config, max_len):
    """Brute-force argmax of (sum log P) / length over every candidate sequence.

    Candidates either end with EOS or are cut at max_len with no interior
    EOS. Returned tokens exclude BOS and the final EOS.
    """
    vocab = params.gen_b.data.shape[0]
    best = {"score": -np.inf, "tokens": None}

    def recurse(prefix, score):
        logp = next_token_logprobs(prefix, enc_out, params, config)
        for v in range(vocab):
            s = score + logp[v]
            generated = len(prefix)  # tokens emitted after appending v
            if v == EOS_ID:
                if s / generated > best["score"]:
                    best.update(score=s / generated, tokens=prefix[1:])
            elif generated == max_len:
                if s / generated > best["score"]:
                    best.update(score=s / generated, tokens=prefix[1:] + [v])
            else:
                recurse(prefix + [v], s)

    recurse([1], 0.0)  # BOS
    return best["tokens"], best["score"]
