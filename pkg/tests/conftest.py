import numpy as np
import pytest

from graphmt.data import (BOS_ID, EOS_ID, Example, PhraseGrounding,
                          build_fully_connected_graph, build_graph)
from graphmt.decoder import DecoderConfig
from graphmt.encoder import EncoderConfig
from graphmt.model import Model

FIG1_TOKENS = ["two", "boys", "are", "playing", "with", "a", "toy", "car"]


def figure1_groundings(feat_dim=16, seed=0):
    """Eight tokens, two phrases: [0,2) grounds two objects, [5,8) grounds one."""
    rng = np.random.default_rng(seed)
    return [
        PhraseGrounding((0, 2), rng.standard_normal((2, feat_dim))),
        PhraseGrounding((5, 8), rng.standard_normal((1, feat_dim))),
    ]


def figure1_graph(feat_dim=16, seed=0, fully_connected=False):
    token_ids = [4, 5, 6, 7, 8, 9, 10, 4]  # eight tokens inside an 11-entry vocab
    builder = build_fully_connected_graph if fully_connected else build_graph
    return builder(token_ids, figure1_groundings(feat_dim, seed), feat_dim)


FIG1_EDGES = ((0, 0), (0, 1), (1, 0), (1, 1), (5, 2), (6, 2), (7, 2))


def tiny_configs(feat_dim=16, enc_layers=2, dec_layers=2, attend="textual",
                 unified=False, fusion=True, dropout=0.0):
    enc = EncoderConfig(d_model=8, d_ff=16, n_heads=2, n_layers=enc_layers,
                        dropout_p=dropout, visual_feat_dim=feat_dim,
                        unified_parameters=unified, inter_modal_fusion=fusion)
    dec = DecoderConfig(d_model=8, d_ff=16, n_heads=2, n_layers=dec_layers,
                        dropout_p=dropout, attend_mode=attend)
    return enc, dec


def tiny_model(seed=0, vocab=11, **kwargs):
    enc, dec = tiny_configs(**kwargs)
    return Model.build(enc, dec, vocab, vocab, seed=seed)


def random_graph(rng, feat_dim=16, min_tokens=2, max_tokens=8, max_objects=3):
    """Random grounded graph; zero objects is a legitimate outcome."""
    n_tokens = int(rng.integers(min_tokens, max_tokens + 1))
    tokens = [int(t) for t in rng.integers(4, 11, size=n_tokens)]
    groundings = []
    for _ in range(int(rng.integers(0, max_objects + 1))):
        start = int(rng.integers(0, n_tokens))
        end = min(n_tokens, start + int(rng.integers(1, 3)))
        groundings.append(PhraseGrounding((start, end), rng.standard_normal((1, feat_dim))))
    return build_graph(tokens, groundings, feat_dim)


def random_example(rng, feat_dim=16, vocab=11, **kwargs):
    graph = random_graph(rng, feat_dim=feat_dim, **kwargs)
    n = int(rng.integers(1, 5))
    target = [BOS_ID] + [int(t) for t in rng.integers(4, vocab, size=n)] + [EOS_ID]
    return Example(graph, target)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
