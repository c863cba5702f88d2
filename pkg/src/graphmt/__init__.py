"""Graph-based multi-modal fusion NMT: unified word/object graphs encoded by
stacked intra-/inter-modal fusion layers, decoded by a Transformer-style
decoder, trained end-to-end with a tape-based float64 autodiff core."""

from .data import (BOS_ID, EOS_ID, PAD_ID, UNK_ID, Example, MultiModalGraph,
                   PhraseGrounding, Vocabulary, build_fully_connected_graph,
                   build_graph, load_dataset)
from .decoder import DecoderConfig, beam_decode, decode_states, greedy_decode
from .encoder import EncoderConfig, encode
from .model import Model
from .tensor import Tape, Tensor
from .training import TrainConfig, lr_schedule, make_batches, nll_loss, train

__version__ = "0.1.0"

__all__ = [
    "BOS_ID", "EOS_ID", "PAD_ID", "UNK_ID",
    "Example", "MultiModalGraph", "PhraseGrounding", "Vocabulary",
    "build_graph", "build_fully_connected_graph", "load_dataset",
    "DecoderConfig", "EncoderConfig", "Model", "Tape", "Tensor", "TrainConfig",
    "beam_decode", "decode_states", "encode", "greedy_decode",
    "lr_schedule", "make_batches", "nll_loss", "train",
]
