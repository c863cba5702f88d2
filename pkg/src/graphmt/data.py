"""Multi-modal graph data model, vocabulary, and the JSONL dataset format.

A sentence-image pair is one graph: every source word is a textual node,
every detected object is a visual node carrying a precomputed feature
vector, and inter-modal edges link each object to the tokens of the noun
phrase that grounded it. Intra-modal edges are implicit (both modalities
are fully connected within themselves) and never stored.

Dataset files are UTF-8 JSONL, one example per line:

    {"src": ["two", "boys", ...], "tgt": ["zwei", ...],
     "objects": [{"span": [0, 2], "feat": [...]}, ...]}

An object may reference a sidecar binary instead of inlining its feature:
``"feat_ref": {"file": "feats.bin", "offset": K}`` with K a byte offset
into a little-endian float32 file holding one ``feat_dim`` block per object.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
RESERVED_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")

VISUAL_FEAT_DIM = 2048


class Vocabulary:
    """Token<->id bijection with reserved ids 0=PAD, 1=BOS, 2=EOS, 3=UNK."""

    def __init__(self, tokens):
        self._id_to_token = list(RESERVED_TOKENS)
        self._token_to_id = {t: i for i, t in enumerate(RESERVED_TOKENS)}
        for tok in tokens:
            if tok in self._token_to_id:
                raise DataError(f"duplicate or reserved vocabulary token: {tok!r}")
            self._token_to_id[tok] = len(self._id_to_token)
            self._id_to_token.append(tok)

    def __len__(self):
        return len(self._id_to_token)

    def id_of(self, token):
        return self._token_to_id.get(token, UNK_ID)

    def token_of(self, idx):
        return self._id_to_token[idx]

    def encode(self, tokens):
        return [self.id_of(t) for t in tokens]

    def decode(self, ids):
        return [self.token_of(i) for i in ids]

    @classmethod
    def from_corpus(cls, sentences, min_count=1):
        """Build from tokenized sentences, most frequent first, ties by first use."""
        counts = {}
        first_seen = {}
        for sent in sentences:
            for tok in sent:
                counts[tok] = counts.get(tok, 0) + 1
                first_seen.setdefault(tok, len(first_seen))
        kept = [t for t, c in counts.items() if c >= min_count and t not in RESERVED_TOKENS]
        kept.sort(key=lambda t: (-counts[t], first_seen[t]))
        return cls(kept)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self._id_to_token[len(RESERVED_TOKENS):]:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(line.rstrip("\n") for line in fh if line.rstrip("\n"))


@dataclass
class PhraseGrounding:
    """One noun phrase span and the object features grounded to it."""

    span: tuple
    features: np.ndarray  # [n_objects, feat_dim]


@dataclass
class MultiModalGraph:
    """Unified undirected graph over textual and visual nodes.

    ``inter_edges`` stores each undirected (textual_index, visual_index)
    pair once, sorted; adjacency is symmetric by construction.
    """

    textual_nodes: list  # token ids
    visual_nodes: np.ndarray  # [n_vis, feat_dim] float64
    inter_edges: tuple = ()

    def __post_init__(self):
        self.visual_nodes = np.asarray(self.visual_nodes, dtype=np.float64)
        if self.visual_nodes.ndim != 2:
            raise DataError(f"visual_nodes must be 2-d, got shape {self.visual_nodes.shape}")
        edges = sorted(set((int(t), int(o)) for t, o in self.inter_edges))
        for t, o in edges:
            if not (0 <= t < len(self.textual_nodes) and 0 <= o < self.n_vis):
                raise DataError(f"inter-modal edge ({t},{o}) out of range "
                                f"({len(self.textual_nodes)} textual, {self.n_vis} visual)")
        if self.n_vis == 0 and edges:
            raise DataError("graph without visual nodes cannot have inter-modal edges")
        self.inter_edges = tuple(edges)

    @property
    def n_text(self):
        return len(self.textual_nodes)

    @property
    def n_vis(self):
        return int(self.visual_nodes.shape[0])

    def visual_neighbors(self, textual_index):
        """Set of visual node indices adjacent to a textual node."""
        if not 0 <= textual_index < self.n_text:
            raise IndexError(f"textual index {textual_index} out of range 0..{self.n_text - 1}")
        return {o for t, o in self.inter_edges if t == textual_index}

    def textual_neighbors(self, visual_index):
        """Set of textual node indices adjacent to a visual node."""
        if not 0 <= visual_index < self.n_vis:
            raise IndexError(f"visual index {visual_index} out of range 0..{self.n_vis - 1}")
        return {t for t, o in self.inter_edges if o == visual_index}

    def to_json_dict(self):
        return {
            "textual_nodes": [int(t) for t in self.textual_nodes],
            "visual_nodes": [[float(v) for v in row] for row in self.visual_nodes],
            "feat_dim": int(self.visual_nodes.shape[1]),
            "inter_edges": [[t, o] for t, o in self.inter_edges],
        }

    @classmethod
    def from_json_dict(cls, obj):
        feats = np.asarray(obj["visual_nodes"], dtype=np.float64)
        if feats.size == 0:
            feats = feats.reshape(0, int(obj.get("feat_dim", 0)))
        return cls(list(obj["textual_nodes"]), feats,
                   tuple((t, o) for t, o in obj["inter_edges"]))


@dataclass
class Example:
    """One training instance: source graph plus BOS...EOS wrapped target ids."""

    graph: MultiModalGraph
    target: list = field(default_factory=list)


def _validate_groundings(tokens, groundings, feat_dim):
    for rec_idx, g in enumerate(groundings):
        start, end = int(g.span[0]), int(g.span[1])
        if not (0 <= start < end <= len(tokens)):
            raise DataError(f"grounding {rec_idx}: span [{start},{end}) invalid "
                            f"for {len(tokens)} tokens")
        feats = np.asarray(g.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != feat_dim:
            raise DataError(f"grounding {rec_idx}: feature shape {feats.shape} "
                            f"does not match feat_dim={feat_dim}")


def _collect_visual(groundings, feat_dim):
    feats = [np.asarray(g.features, dtype=np.float64) for g in groundings]
    if feats:
        return np.concatenate(feats, axis=0)
    return np.zeros((0, feat_dim), dtype=np.float64)


def build_graph(tokens, groundings, feat_dim=VISUAL_FEAT_DIM):
    """Graph with inter-modal edges from grounding spans.

    Every token inside the span that grounded an object is connected to that
    object; objects from distinct phrases share no edges. Overlapping spans
    simply union their edges.
    """
    _validate_groundings(tokens, groundings, feat_dim)
    edges = []
    obj = 0
    for g in groundings:
        start, end = int(g.span[0]), int(g.span[1])
        for _ in range(np.asarray(g.features).shape[0]):
            edges.extend((t, obj) for t in range(start, end))
            obj += 1
    return MultiModalGraph(list(tokens), _collect_visual(groundings, feat_dim), tuple(edges))


def build_fully_connected_graph(tokens, groundings, feat_dim=VISUAL_FEAT_DIM):
    """Ablation variant: every token connected to every object."""
    _validate_groundings(tokens, groundings, feat_dim)
    visual = _collect_visual(groundings, feat_dim)
    edges = tuple((t, o) for t in range(len(tokens)) for o in range(visual.shape[0]))
    return MultiModalGraph(list(tokens), visual, edges)


def _read_sidecar_feature(ref, base_dir, feat_dim):
    path = os.path.join(base_dir, ref["file"])
    offset = int(ref["offset"])
    feat = np.fromfile(path, dtype="<f4", count=feat_dim, offset=offset)
    if feat.shape[0] != feat_dim:
        raise DataError(f"sidecar {path} at offset {offset}: expected {feat_dim} floats, "
                        f"got {feat.shape[0]}")
    return feat.astype(np.float64)


def groundings_from_record(record, base_dir=".", feat_dim=VISUAL_FEAT_DIM):
    """One PhraseGrounding per object entry; a missing 'objects' key means none."""
    groundings = []
    for obj in record.get("objects", []):
        span = obj.get("span")
        if span is None or len(span) != 2:
            raise DataError(f"object entry without a [start, end) span: {obj.keys()}")
        if "feat" in obj:
            feat = np.asarray(obj["feat"], dtype=np.float64)
            if feat.ndim != 1 or feat.shape[0] != feat_dim:
                raise DataError(f"object feature has length {feat.shape}, expected {feat_dim}")
        elif "feat_ref" in obj:
            feat = _read_sidecar_feature(obj["feat_ref"], base_dir, feat_dim)
        else:
            raise DataError("object entry carries neither 'feat' nor 'feat_ref'")
        groundings.append(PhraseGrounding((int(span[0]), int(span[1])), feat.reshape(1, -1)))
    return groundings


def graph_from_record(record, token_ids, *, base_dir=".", feat_dim=VISUAL_FEAT_DIM,
                      fully_connected=False, zero_object_fallback=False):
    groundings = groundings_from_record(record, base_dir, feat_dim)
    builder = build_fully_connected_graph if fully_connected else build_graph
    graph = builder(token_ids, groundings, feat_dim)
    if zero_object_fallback and graph.n_vis == 0:
        # object-free sentences get a single zero-vector object with no edges
        graph = MultiModalGraph(graph.textual_nodes, np.zeros((1, feat_dim)), ())
    return graph


def read_jsonl(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON line: {exc}") from exc
    return records


def write_jsonl(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def load_dataset(path, src_vocab, tgt_vocab, *, feat_dim=VISUAL_FEAT_DIM,
                 fully_connected=False, zero_object_fallback=False):
    """Parse a JSONL dataset into Examples, in file order.

    Source tokens map through ``src_vocab`` (UNK fallback); targets are
    wrapped as BOS...EOS. A missing 'tgt' key yields an empty target, which
    is fine for translate-only inputs.
    """
    base_dir = os.path.dirname(os.path.abspath(path))
    examples = []
    for lineno, record in enumerate(read_jsonl(path), start=1):
        if "src" not in record:
            raise DataError(f"{path}:{lineno}: record has no 'src' field")
        try:
            graph = graph_from_record(
                record, src_vocab.encode(record["src"]), base_dir=base_dir,
                feat_dim=feat_dim, fully_connected=fully_connected,
                zero_object_fallback=zero_object_fallback)
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        target = [BOS_ID] + tgt_vocab.encode(record.get("tgt", [])) + [EOS_ID]
        examples.append(Example(graph, target))
    return examples


def synthetic_copy_corpus(n_pairs=32, vocab_size=46, max_len=10, feat_dim=VISUAL_FEAT_DIM,
                          max_objects=2, seed=0):
    """Deterministic grounded copy-task records (tgt == src) for overfit runs.

    Feature vectors are seeded standard normals rounded to four decimals so
    the JSONL stays small; spans are random 1-3 token noun-phrase stand-ins.
    """
    rng = np.random.default_rng(seed)
    words = [f"w{k:02d}" for k in range(vocab_size)]
    records = []
    for _ in range(n_pairs):
        length = int(rng.integers(3, max_len + 1))
        sent = [words[int(i)] for i in rng.integers(0, vocab_size, size=length)]
        objects = []
        for _ in range(int(rng.integers(1, max_objects + 1))):
            start = int(rng.integers(0, length))
            end = min(length, start + int(rng.integers(1, 4)))
            feat = np.round(rng.standard_normal(feat_dim), 4)
            objects.append({"span": [start, end], "feat": feat.tolist()})
        records.append({"src": sent, "tgt": list(sent), "objects": objects})
    return records
