"""Finite-difference validation of the full-model analytic gradients."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import BOS_ID, EOS_ID, Example, MultiModalGraph, PhraseGrounding, build_graph, \
    build_fully_connected_graph
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .model import Model
from .tensor import Tape, zero_grads
from .training import batch_loss, make_batches

ABLATIONS = ("default", "no-inter-modal-fusion", "fully-connected-grounding",
             "unified-parameters", "decoder-attend-both", "decoder-attend-visual")


@dataclass
class GroupReport:
    name: str
    size: int
    max_rel_err: float


@dataclass
class GradCheckReport:
    groups: list
    tolerance: float

    @property
    def max_rel_err(self):
        return max(g.max_rel_err for g in self.groups)

    @property
    def worst_group(self):
        return max(self.groups, key=lambda g: g.max_rel_err).name

    @property
    def passed(self):
        return self.max_rel_err < self.tolerance


def build_toy_setup(ablation="default", seed=0, feat_dim=12):
    """Seeded toy model (d_model=8, 2 heads, 2+2 layers, |V|=11) and a 2-example batch."""
    if ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation {ablation!r}; choose from {ABLATIONS}")
    enc_cfg = EncoderConfig(d_model=8, d_ff=16, n_heads=2, n_layers=2, dropout_p=0.0,
                            visual_feat_dim=feat_dim,
                            unified_parameters=ablation == "unified-parameters",
                            inter_modal_fusion=ablation != "no-inter-modal-fusion")
    attend = {"decoder-attend-both": "both", "decoder-attend-visual": "visual"}.get(
        ablation, "textual")
    dec_cfg = DecoderConfig(d_model=8, d_ff=16, n_heads=2, n_layers=2, dropout_p=0.0,
                            attend_mode=attend)
    model = Model.build(enc_cfg, dec_cfg, src_vocab_size=11, tgt_vocab_size=11, seed=seed)

    rng = np.random.default_rng(seed + 1)
    builder = (build_fully_connected_graph if ablation == "fully-connected-grounding"
               else build_graph)

    def graph(tokens, spans):
        groundings = [PhraseGrounding(span, rng.standard_normal((1, feat_dim)))
                      for span in spans]
        return builder(tokens, groundings, feat_dim)

    examples = [
        Example(graph([4, 5, 6, 7, 8], [(0, 2), (3, 5)]), [BOS_ID, 5, 9, 4, EOS_ID]),
        Example(graph([9, 10, 4, 6], [(1, 3)]), [BOS_ID, 7, 6, EOS_ID]),
    ]
    (batch,) = make_batches(examples, batch_tokens=10_000, rng=np.random.default_rng(0))
    return model, batch


def finite_difference_check(model, batch, h=1e-5, tolerance=1e-4, limit=0):
    """Compare analytic gradients of the batch NLL against central differences.

    Every scalar of every parameter is perturbed (``limit`` > 0 restricts
    each group to its first ``limit`` entries, for quick sanity runs);
    relative error uses a 1e-6 floor so negligible gradients cannot
    manufacture false alarms. Dropout must be off (the loss is evaluated
    in eval mode).
    """
    named = model.named_parameters()
    zero_grads(p for _, p in named)
    with Tape() as tape:
        loss = batch_loss(model, batch, mode="eval")
    tape.backward(loss)
    analytic = {name: p.grad.copy() for name, p in named}

    def loss_value():
        return batch_loss(model, batch, mode="eval").item()

    groups = []
    for name, p in named:
        flat = p.data.ravel()
        a_flat = analytic[name].ravel()
        worst = 0.0
        span = flat.size if limit <= 0 else min(limit, flat.size)
        for i in range(span):
            original = flat[i]
            flat[i] = original + h
            up = loss_value()
            flat[i] = original - h
            down = loss_value()
            flat[i] = original
            fd = (up - down) / (2.0 * h)
            err = abs(a_flat[i] - fd) / max(abs(a_flat[i]), abs(fd), 1e-6)
            worst = max(worst, err)
        groups.append(GroupReport(name, int(flat.size), worst))
    return GradCheckReport(groups=groups, tolerance=tolerance)


def write_report_csv(report: GradCheckReport, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "size", "max_rel_err"])
        for g in report.groups:
            writer.writerow([g.name, g.size, repr(g.max_rel_err)])
