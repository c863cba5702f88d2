"""Transformer-style decoder over the encoder's node states.

Each layer runs masked self-attention, encoder-decoder attention, and a
position-wise FFN, every sub-block wrapped with residual + post layer norm.
By default the decoder attends only to textual node states; the ablation
modes attend to visual states instead ('visual') or to both through two
parallel cross-attentions with summed contexts ('both').
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import BOS_ID, EOS_ID
from .encoder import (AttentionParams, EncoderOutput, FeedForwardParams,
                      LayerNormParams, _ffn_params, _norm_params, embed_tokens,
                      feed_forward, linear, multi_head_attention, norm,
                      xavier_uniform)
from .errors import ConfigError, DataError
from .tensor import Tensor

ATTEND_MODES = ("textual", "visual", "both")


@dataclass
class DecoderConfig:
    d_model: int = 128
    d_ff: int = 256
    n_heads: int = 4
    n_layers: int = 4
    dropout_p: float = 0.5
    attend_mode: str = "textual"

    def validate(self):
        if self.n_layers < 1:
            raise ConfigError(f"decoder needs at least one layer, got {self.n_layers}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.attend_mode not in ATTEND_MODES:
            raise ConfigError(f"attend_mode must be one of {ATTEND_MODES}, "
                              f"got {self.attend_mode!r}")


@dataclass
class DecoderLayerParams:
    self_attn: AttentionParams
    self_attn_norm: LayerNormParams
    cross_attn: AttentionParams
    cross_attn_norm: LayerNormParams
    ffn: FeedForwardParams
    ffn_norm: LayerNormParams
    cross_attn_vis: AttentionParams | None = None  # only for attend_mode='both'


@dataclass
class DecoderParameters:
    target_embedding: Tensor
    gen_w: Tensor  # [|V_tgt|, d_model]
    gen_b: Tensor
    layers: list = field(default_factory=list)


def init_decoder_params(config: DecoderConfig, vocab_size: int, rng) -> DecoderParameters:
    config.validate()
    d, dff = config.d_model, config.d_ff
    params = DecoderParameters(
        target_embedding=T.parameter(rng.normal(0.0, d ** -0.5, size=(vocab_size, d))),
        gen_w=xavier_uniform(rng, vocab_size, d),
        gen_b=T.parameter(np.zeros(vocab_size)))
    for _ in range(config.n_layers):
        params.layers.append(DecoderLayerParams(
            self_attn=AttentionParams(*(xavier_uniform(rng, d, d) for _ in range(4))),
            self_attn_norm=_norm_params(d),
            cross_attn=AttentionParams(*(xavier_uniform(rng, d, d) for _ in range(4))),
            cross_attn_norm=_norm_params(d),
            ffn=_ffn_params(rng, d, dff),
            ffn_norm=_norm_params(d),
            cross_attn_vis=AttentionParams(*(xavier_uniform(rng, d, d) for _ in range(4)))
            if config.attend_mode == "both" else None))
    return params


def causal_mask(t):
    return np.tril(np.ones((t, t), dtype=bool))


def _cross_context(e, enc_out: EncoderOutput, lp: DecoderLayerParams,
                   config: DecoderConfig, mode, rng):
    p = config.dropout_p
    if config.attend_mode == "textual":
        return multi_head_attention(e, enc_out.h_x, enc_out.h_x, lp.cross_attn,
                                    config.n_heads, dropout_p=p, mode=mode, rng=rng)
    if config.attend_mode == "visual":
        if enc_out.h_o.shape[0] == 0:
            raise DataError("attend_mode='visual' with zero visual nodes: "
                            "nothing to attend to")
        return multi_head_attention(e, enc_out.h_o, enc_out.h_o, lp.cross_attn,
                                    config.n_heads, dropout_p=p, mode=mode, rng=rng)
    ctx = multi_head_attention(e, enc_out.h_x, enc_out.h_x, lp.cross_attn,
                               config.n_heads, dropout_p=p, mode=mode, rng=rng)
    if enc_out.h_o.shape[0] > 0:
        ctx = ctx + multi_head_attention(e, enc_out.h_o, enc_out.h_o, lp.cross_attn_vis,
                                         config.n_heads, dropout_p=p, mode=mode, rng=rng)
    return ctx


def decode_states(target_prefix_ids, enc_out: EncoderOutput, params: DecoderParameters,
                  config: DecoderConfig, mode="eval", rng=None):
    """Hidden states for every position of a (BOS-initial) target prefix."""
    if len(target_prefix_ids) == 0:
        raise DataError("decoder prefix must be non-empty (it starts with BOS)")
    p = config.dropout_p
    s = embed_tokens(target_prefix_ids, params.target_embedding,
                     dropout_p=p, mode=mode, rng=rng)
    mask = causal_mask(len(target_prefix_ids))
    for lp in params.layers:
        e_raw = multi_head_attention(s, s, s, lp.self_attn, config.n_heads,
                                     mask=mask, dropout_p=p, mode=mode, rng=rng)
        e = norm(s + T.dropout(e_raw, p, mode, rng), lp.self_attn_norm)
        ctx = _cross_context(e, enc_out, lp, config, mode, rng)
        t = norm(e + T.dropout(ctx, p, mode, rng), lp.cross_attn_norm)
        s = norm(t + T.dropout(feed_forward(t, lp.ffn), p, mode, rng), lp.ffn_norm)
    return s


def output_logits(states, params: DecoderParameters):
    return linear(states, params.gen_w, params.gen_b)


def generate_distribution(state, params: DecoderParameters):
    """Probability vector(s) over the target vocabulary: softmax(W s + b)."""
    single = state.ndim == 1
    if single:
        state = T.reshape(state, (1, state.shape[0]))
    probs = T.softmax(output_logits(state, params), axis=-1)
    return T.reshape(probs, (probs.shape[-1],)) if single else probs


def _next_token_logprobs(prefix, enc_out, params, config):
    states = decode_states(prefix, enc_out, params, config, mode="eval")
    logits = output_logits(T.index_rows(states, [len(prefix) - 1]), params)
    return T.log_softmax(logits, axis=-1).data[0]


def greedy_decode(enc_out: EncoderOutput, params: DecoderParameters,
                  config: DecoderConfig, max_len):
    """Argmax continuation from BOS until EOS or max_len; BOS/EOS stripped."""
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1, got {max_len}")
    prefix = [BOS_ID]
    out = []
    for _ in range(max_len):
        nxt = int(np.argmax(_next_token_logprobs(prefix, enc_out, params, config)))
        if nxt == EOS_ID:
            break
        out.append(nxt)
        prefix.append(nxt)
    return out


def beam_decode(enc_out: EncoderOutput, params: DecoderParameters,
                config: DecoderConfig, beam_size, max_len):
    """Length-normalized beam search; beam_size=1 reproduces greedy_decode.

    Partial hypotheses are ranked by summed log-probability; finished ones
    by sum / generated-token count (EOS included in both).
    """
    if beam_size < 1:
        raise ConfigError(f"beam_size must be >= 1, got {beam_size}")
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1, got {max_len}")
    beams = [(0.0, [BOS_ID])]
    finished = []
    for _ in range(max_len):
        candidates = []
        for score, toks in beams:
            logprobs = _next_token_logprobs(toks, enc_out, params, config)
            candidates.extend((score + float(lp), toks, v)
                              for v, lp in enumerate(logprobs))
        candidates.sort(key=lambda c: (-c[0], c[2]))
        beams = []
        for score, toks, v in candidates[:beam_size]:
            hyp = toks + [v]
            if v == EOS_ID:
                finished.append((score / (len(hyp) - 1), hyp))
            else:
                beams.append((score, hyp))
        if not beams or len(finished) >= beam_size:
            break
    finished.extend((score / (len(toks) - 1), toks) for score, toks in beams)
    best = max(finished, key=lambda f: f[0])
    toks = best[1][1:]
    return toks[:-1] if toks and toks[-1] == EOS_ID else toks


def default_max_len(source_length):
    return 2 * source_length + 10
