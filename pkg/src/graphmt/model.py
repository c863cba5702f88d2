"""Encoder + decoder bundle: construction, parameter registry, translation."""

from __future__ import annotations

from dataclasses import dataclass, fields, is_dataclass

import numpy as np

from . import decoder as dec
from . import encoder as enc
from .errors import ConfigError
from .tensor import Tensor


def _walk_tensors(obj, prefix, out):
    if isinstance(obj, Tensor):
        out.append((prefix, obj))
    elif is_dataclass(obj):
        for f in fields(obj):
            _walk_tensors(getattr(obj, f.name), f"{prefix}.{f.name}", out)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            _walk_tensors(item, f"{prefix}.{i}", out)


def named_parameters(params_obj, prefix):
    """Unique (name, tensor) pairs in stable order; aliased tensors appear once."""
    raw = []
    _walk_tensors(params_obj, prefix, raw)
    seen = set()
    out = []
    for name, t in raw:
        if id(t) not in seen:
            seen.add(id(t))
            out.append((name, t))
    return out


@dataclass
class Model:
    enc_config: enc.EncoderConfig
    dec_config: dec.DecoderConfig
    enc_params: enc.EncoderParameters
    dec_params: dec.DecoderParameters
    src_vocab_size: int
    tgt_vocab_size: int

    @classmethod
    def build(cls, enc_config, dec_config, src_vocab_size, tgt_vocab_size, seed=0):
        if enc_config.d_model != dec_config.d_model:
            raise ConfigError(f"encoder d_model={enc_config.d_model} must match "
                              f"decoder d_model={dec_config.d_model}")
        rng = np.random.default_rng(seed)
        return cls(enc_config, dec_config,
                   enc.init_encoder_params(enc_config, src_vocab_size, rng),
                   dec.init_decoder_params(dec_config, tgt_vocab_size, rng),
                   src_vocab_size, tgt_vocab_size)

    def named_parameters(self):
        return (named_parameters(self.enc_params, "enc")
                + named_parameters(self.dec_params, "dec"))

    def parameter_counts(self):
        """Per-group sizes plus the deduplicated total, for the audit report."""
        groups = [(name, int(t.data.size)) for name, t in self.named_parameters()]
        return groups, sum(c for _, c in groups)

    def encode(self, graph, mode="eval", rng=None, collect_intermediates=False):
        return enc.encode(graph, self.enc_params, self.enc_config,
                          mode=mode, rng=rng, collect_intermediates=collect_intermediates)

    def example_logprobs(self, example, mode="eval", rng=None):
        """Teacher-forced log-probabilities [len(target)-1, |V_tgt|]."""
        enc_out = self.encode(example.graph, mode=mode, rng=rng)
        states = dec.decode_states(example.target[:-1], enc_out, self.dec_params,
                                   self.dec_config, mode=mode, rng=rng)
        from . import tensor as T
        return T.log_softmax(dec.output_logits(states, self.dec_params), axis=-1)

    def translate(self, graph, beam_size=1, max_len=None):
        enc_out = self.encode(graph, mode="eval")
        if max_len is None:
            max_len = dec.default_max_len(graph.n_text)
        if beam_size == 1:
            return dec.greedy_decode(enc_out, self.dec_params, self.dec_config, max_len)
        return dec.beam_decode(enc_out, self.dec_params, self.dec_config,
                               beam_size, max_len)
