"""Graph-based multi-modal fusion encoder.

The embedding layer initializes textual node states as word embedding plus
sinusoidal position encoding and projects 2048-d object features through a
ReLU MLP. Each fusion layer then runs two steps: intra-modal self-attention
per modality (the visual side uses a simplified attention without value and
output projections, preserving CNN-derived features), followed by inter-modal
fusion where each node gathers its cross-modal neighbors through a sigmoid
gate, and position-wise feed-forward blocks. Every sub-block is wrapped with
residual + post layer norm; the visual FFN is not applied at the last layer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError
from .tensor import Tensor


@dataclass
class EncoderConfig:
    d_model: int = 128
    d_ff: int = 256
    n_heads: int = 4
    n_layers: int = 3
    dropout_p: float = 0.5
    visual_feat_dim: int = 2048
    unified_parameters: bool = False
    inter_modal_fusion: bool = True

    def validate(self):
        if self.n_layers < 1:
            raise ConfigError(f"encoder needs at least one layer, got {self.n_layers}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.d_model % 2 != 0:
            raise ConfigError(f"sinusoidal position encoding needs even d_model, got {self.d_model}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")


@dataclass
class AttentionParams:
    """Projection set for one attention block; wv/wo are absent in the
    simplified visual variant."""

    wq: Tensor
    wk: Tensor
    wv: Tensor | None = None
    wo: Tensor | None = None


@dataclass
class FeedForwardParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor


@dataclass
class EncoderLayerParams:
    text_attn: AttentionParams
    text_attn_norm: LayerNormParams
    vis_attn: AttentionParams
    vis_attn_norm: LayerNormParams
    gate_w1: Tensor
    gate_w2: Tensor
    gate_w3: Tensor
    gate_w4: Tensor
    text_gate_norm: LayerNormParams
    vis_gate_norm: LayerNormParams
    text_ffn: FeedForwardParams
    text_ffn_norm: LayerNormParams
    vis_ffn: FeedForwardParams | None = None
    vis_ffn_norm: LayerNormParams | None = None


@dataclass
class EncoderParameters:
    word_embedding: Tensor
    vis_proj_w1: Tensor
    vis_proj_b1: Tensor
    vis_proj_w2: Tensor
    vis_proj_b2: Tensor
    layers: list = field(default_factory=list)


@dataclass
class EncoderOutput:
    h_x: Tensor  # [n_text, d_model] final textual node states
    h_o: Tensor  # [n_vis, d_model] final visual node states
    layers: list | None = None  # per-layer introspection records


def xavier_uniform(rng, out_dim, in_dim):
    limit = math.sqrt(6.0 / (in_dim + out_dim))
    return T.parameter(rng.uniform(-limit, limit, size=(out_dim, in_dim)))


def _norm_params(d_model):
    return LayerNormParams(T.parameter(np.ones(d_model)), T.parameter(np.zeros(d_model)))


def _ffn_params(rng, d_model, d_ff):
    return FeedForwardParams(
        xavier_uniform(rng, d_ff, d_model), T.parameter(np.zeros(d_ff)),
        xavier_uniform(rng, d_model, d_ff), T.parameter(np.zeros(d_model)))


def init_encoder_params(config: EncoderConfig, vocab_size: int, rng) -> EncoderParameters:
    """Xavier projections, zero biases, N(0, 1/sqrt(d)) embeddings.

    Under unified_parameters the per-layer visual weights alias the textual
    ones, and the visual attention carries the full projection set so the
    sharing is well-typed.
    """
    config.validate()
    d, dff = config.d_model, config.d_ff
    params = EncoderParameters(
        word_embedding=T.parameter(rng.normal(0.0, d ** -0.5, size=(vocab_size, d))),
        vis_proj_w1=xavier_uniform(rng, dff, config.visual_feat_dim),
        vis_proj_b1=T.parameter(np.zeros(dff)),
        vis_proj_w2=xavier_uniform(rng, d, dff),
        vis_proj_b2=T.parameter(np.zeros(d)))
    for layer in range(config.n_layers):
        last = layer == config.n_layers - 1
        text_attn = AttentionParams(*(xavier_uniform(rng, d, d) for _ in range(4)))
        text_attn_norm = _norm_params(d)
        gate_w1 = xavier_uniform(rng, d, d)
        gate_w2 = xavier_uniform(rng, d, d)
        text_gate_norm = _norm_params(d)
        text_ffn = _ffn_params(rng, d, dff)
        text_ffn_norm = _norm_params(d)
        if config.unified_parameters:
            lp = EncoderLayerParams(
                text_attn=text_attn, text_attn_norm=text_attn_norm,
                vis_attn=text_attn, vis_attn_norm=text_attn_norm,
                gate_w1=gate_w1, gate_w2=gate_w2, gate_w3=gate_w1, gate_w4=gate_w2,
                text_gate_norm=text_gate_norm, vis_gate_norm=text_gate_norm,
                text_ffn=text_ffn, text_ffn_norm=text_ffn_norm,
                vis_ffn=None if last else text_ffn,
                vis_ffn_norm=None if last else text_ffn_norm)
        else:
            lp = EncoderLayerParams(
                text_attn=text_attn, text_attn_norm=text_attn_norm,
                vis_attn=AttentionParams(xavier_uniform(rng, d, d), xavier_uniform(rng, d, d)),
                vis_attn_norm=_norm_params(d),
                gate_w1=gate_w1, gate_w2=gate_w2,
                gate_w3=xavier_uniform(rng, d, d), gate_w4=xavier_uniform(rng, d, d),
                text_gate_norm=text_gate_norm, vis_gate_norm=_norm_params(d),
                text_ffn=text_ffn, text_ffn_norm=text_ffn_norm,
                vis_ffn=None if last else _ffn_params(rng, d, dff),
                vis_ffn_norm=None if last else _norm_params(d))
        params.layers.append(lp)
    return params


def linear(x, w, b=None):
    out = T.matmul(x, T.transpose(w, (1, 0)))
    return out if b is None else out + b


def feed_forward(x, p: FeedForwardParams):
    return linear(T.relu(linear(x, p.w1, p.b1)), p.w2, p.b2)


def norm(x, p: LayerNormParams):
    return T.layer_norm(x, p.gain, p.bias)


def position_encoding(n_positions, d_model):
    """Sinusoidal encodings: sin at even dims, cos at odd, geometric wavelengths."""
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    dim = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, dim / d_model)
    pe = np.zeros((n_positions, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def embed_tokens(token_ids, embedding_table, dropout_p=0.0, mode="eval", rng=None):
    """Word embedding plus position encoding, dropout in train mode."""
    ids = np.asarray(token_ids, dtype=np.intp)
    if ids.size and (ids.min() < 0 or ids.max() >= embedding_table.shape[0]):
        raise IndexError(f"token id out of range for embedding table of "
                         f"{embedding_table.shape[0]} entries")
    emb = T.index_rows(embedding_table, ids)
    h = emb + Tensor(position_encoding(len(ids), embedding_table.shape[1]))
    return T.dropout(h, dropout_p, mode, rng)


def embed_visual(features, params: EncoderParameters):
    """Project raw object features onto d_model: W_b relu(W_a f + b_a) + b_b."""
    d_model = params.vis_proj_w2.shape[0]
    feats = np.asarray(features, dtype=np.float64)
    if feats.shape[0] == 0:
        return Tensor(np.zeros((0, d_model)))
    if feats.shape[1] != params.vis_proj_w1.shape[1]:
        raise DataError(f"visual features have dim {feats.shape[1]}, "
                        f"expected {params.vis_proj_w1.shape[1]}")
    hidden = T.relu(linear(Tensor(feats), params.vis_proj_w1, params.vis_proj_b1))
    return linear(hidden, params.vis_proj_w2, params.vis_proj_b2)


def _split_heads(x, n_heads):
    n, d = x.shape
    return T.transpose(T.reshape(x, (n, n_heads, d // n_heads)), (1, 0, 2))


def _merge_heads(x):
    h, n, dh = x.shape
    return T.reshape(T.transpose(x, (1, 0, 2)), (n, h * dh))


def multi_head_attention(q_in, k_in, v_in, params: AttentionParams, n_heads,
                         mask=None, dropout_p=0.0, mode="eval", rng=None, collect=None):
    """Scaled dot-product attention over n_heads.

    ``mask`` is a boolean [n_q, n_k] keep-mask. Without wv/wo (simplified
    variant) the per-head values are raw slices of the input and the heads
    are concatenated with no output projection. ``collect`` receives the
    post-softmax weights as a numpy array when given.
    """
    if k_in.shape[0] == 0:
        raise DataError("attention requires at least one key")
    d = q_in.shape[-1]
    dh = d // n_heads
    q = _split_heads(linear(q_in, params.wq), n_heads)
    k = _split_heads(linear(k_in, params.wk), n_heads)
    v = _split_heads(linear(v_in, params.wv) if params.wv is not None else v_in, n_heads)
    scores = T.matmul(q, T.transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(dh))
    weights = T.softmax(scores, axis=-1, mask=mask)
    if collect is not None:
        collect.append(weights.data.copy())
    weights = T.dropout(weights, dropout_p, mode, rng)
    merged = _merge_heads(T.matmul(weights, v))
    return linear(merged, params.wo) if params.wo is not None else merged


def simplified_visual_attention(h_o, params: AttentionParams, n_heads,
                                dropout_p=0.0, mode="eval", rng=None, collect=None):
    """Intra-modal attention over visual nodes without value/output projections."""
    if h_o.shape[0] == 0:
        return Tensor(np.zeros((0, h_o.shape[1]) if h_o.ndim == 2 else (0, 0)))
    return multi_head_attention(h_o, h_o, h_o,
                                AttentionParams(params.wq, params.wk), n_heads,
                                dropout_p=dropout_p, mode=mode, rng=rng, collect=collect)


def cross_modal_gate(own, other, own_index, other_index, n_own, w_own, w_other,
                     collect=None):
    """Gated sum of cross-modal neighbors.

    For node i of the 'own' modality: sum over edges (i, j) of
    sigmoid(W_own own_i + W_other other_j) (elementwise) other_j.
    Nodes without edges get zero rows.
    """
    d = own.shape[-1]
    if len(own_index) == 0:
        return Tensor(np.zeros((n_own, d)))
    own_rows = T.index_rows(own, own_index)
    other_rows = T.index_rows(other, other_index)
    gate = T.sigmoid(linear(own_rows, w_own) + linear(other_rows, w_other))
    if collect is not None:
        collect.append(gate.data.copy())
    return T.segment_sum(T.mul(gate, other_rows), own_index, n_own)


def fusion_layer(h_x, h_o, graph, lp: EncoderLayerParams, config: EncoderConfig,
                 is_last_layer, mode="eval", rng=None, collect=None):
    """One graph-based multi-modal fusion layer: intra- then inter-modal fusion."""
    p = config.dropout_p
    n_vis = h_o.shape[0]
    rec = {} if collect is not None else None
    text_weights = [] if rec is not None else None
    vis_weights = [] if rec is not None else None

    # Step 1: intra-modal fusion (self-attention within each modality).
    a_x = multi_head_attention(h_x, h_x, h_x, lp.text_attn, config.n_heads,
                               dropout_p=p, mode=mode, rng=rng, collect=text_weights)
    c_x = norm(h_x + T.dropout(a_x, p, mode, rng), lp.text_attn_norm)
    if n_vis > 0:
        if config.unified_parameters:
            a_o = multi_head_attention(h_o, h_o, h_o, lp.vis_attn, config.n_heads,
                                       dropout_p=p, mode=mode, rng=rng, collect=vis_weights)
        else:
            a_o = simplified_visual_attention(h_o, lp.vis_attn, config.n_heads,
                                              dropout_p=p, mode=mode, rng=rng,
                                              collect=vis_weights)
        c_o = norm(h_o + T.dropout(a_o, p, mode, rng), lp.vis_attn_norm)
    else:
        a_o = h_o
        c_o = h_o

    # Step 2: inter-modal fusion through the cross-modal gates, residual on C.
    edges = graph.inter_edges if config.inter_modal_fusion else ()
    gates_alpha = [] if rec is not None else None
    gates_beta = [] if rec is not None else None
    if edges and n_vis > 0:
        e_t = np.fromiter((t for t, _ in edges), dtype=np.intp, count=len(edges))
        e_o = np.fromiter((o for _, o in edges), dtype=np.intp, count=len(edges))
        gated_x = cross_modal_gate(c_x, c_o, e_t, e_o, h_x.shape[0],
                                   lp.gate_w1, lp.gate_w2, collect=gates_alpha)
        gated_o = cross_modal_gate(c_o, c_x, e_o, e_t, n_vis,
                                   lp.gate_w3, lp.gate_w4, collect=gates_beta)
        m_x = norm(c_x + T.dropout(gated_x, p, mode, rng), lp.text_gate_norm)
        m_o = norm(c_o + T.dropout(gated_o, p, mode, rng), lp.vis_gate_norm)
    else:
        m_x = norm(c_x, lp.text_gate_norm)
        m_o = norm(c_o, lp.vis_gate_norm) if n_vis > 0 else c_o

    new_h_x = norm(m_x + T.dropout(feed_forward(m_x, lp.text_ffn), p, mode, rng),
                   lp.text_ffn_norm)
    if n_vis > 0 and not is_last_layer:
        new_h_o = norm(m_o + T.dropout(feed_forward(m_o, lp.vis_ffn), p, mode, rng),
                       lp.vis_ffn_norm)
    else:
        new_h_o = m_o  # Visual FFN (and its norm) is skipped at the last layer.

    if rec is not None:
        rec.update(
            text_attn_weights=text_weights[0] if text_weights else None,
            vis_attn_weights=vis_weights[0] if vis_weights else None,
            intra_text_raw=a_x.data.copy(),
            intra_vis_raw=a_o.data.copy(),
            c_x=c_x.data.copy(), c_o=c_o.data.copy(),
            alpha=gates_alpha[0] if gates_alpha else None,
            beta=gates_beta[0] if gates_beta else None,
            m_x=m_x.data.copy(), m_o=m_o.data.copy(),
            h_x=new_h_x.data.copy(), h_o=new_h_o.data.copy())
        collect.append(rec)
    return new_h_x, new_h_o


def encode(graph, params: EncoderParameters, config: EncoderConfig,
           mode="eval", rng=None, collect_intermediates=False) -> EncoderOutput:
    """Embedding layer followed by the stack of fusion layers."""
    if collect_intermediates and mode != "eval":
        raise ConfigError("introspection capture is an eval-mode facility")
    layers = [] if collect_intermediates else None
    h_x = embed_tokens(graph.textual_nodes, params.word_embedding,
                       dropout_p=config.dropout_p, mode=mode, rng=rng)
    h_o = embed_visual(graph.visual_nodes, params)
    for idx, lp in enumerate(params.layers):
        h_x, h_o = fusion_layer(h_x, h_o, graph, lp, config,
                                is_last_layer=idx == len(params.layers) - 1,
                                mode=mode, rng=rng, collect=layers)
    return EncoderOutput(h_x=h_x, h_o=h_o, layers=layers)


def dump_intermediates(output: EncoderOutput, path):
    """Write collected per-layer states (C, M, gates, attention) as JSON."""
    if output.layers is None:
        raise ValueError("encode() was not asked to collect intermediates")

    def as_list(value):
        return None if value is None else np.asarray(value).tolist()

    payload = {
        "h_x": output.h_x.data.tolist(),
        "h_o": output.h_o.data.tolist(),
        "layers": [{k: as_list(v) for k, v in rec.items()} for rec in output.layers],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
