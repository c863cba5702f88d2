"""Command-line surface: train, translate, evaluate, grad-check, inspect-graph.

Configuration is layered: dataclass defaults, then a checkpoint snapshot
(translate only), then --config key=value file entries, then explicit flags.
Exit codes: 0 ok, 1 grad-check failure, 2 input error, 3 checkpoint
mismatch, 4 evaluation error.
"""

import argparse
import os
import sys
from dataclasses import asdict, dataclass, fields

from . import plotting
from .bleu import corpus_bleu
from .checkpoint import load_checkpoint, load_into_model
from .data import (Vocabulary, graph_from_record, load_dataset, read_jsonl)
from .decoder import DecoderConfig
from .encoder import EncoderConfig, dump_intermediates
from .errors import (CheckpointMismatchError, ConfigError, DataError,
                     EvaluationError)
from .gradcheck import (ABLATIONS, build_toy_setup, finite_difference_check,
                        write_report_csv)
from .model import Model
from .training import TrainConfig, dataset_loss, train


@dataclass
class RunConfig:
    """Union of model, graph, and training settings exposed as flags."""

    d_model: int = 128
    d_ff: int = 256
    heads: int = 4
    enc_layers: int = 3
    dec_layers: int = 4
    dropout: float = 0.5
    feat_dim: int = 2048
    no_inter_modal_fusion: bool = False
    fully_connected_grounding: bool = False
    unified_parameters: bool = False
    decoder_attend: str = "textual"
    zero_object_fallback: bool = False
    batch_tokens: int = 2000
    warmup: int = 4000
    max_steps: int = 100
    checkpoint_every: int = 0
    grad_clip: float = 0.0
    seed: int = 0

    def encoder_config(self):
        return EncoderConfig(
            d_model=self.d_model, d_ff=self.d_ff, n_heads=self.heads,
            n_layers=self.enc_layers, dropout_p=self.dropout,
            visual_feat_dim=self.feat_dim,
            unified_parameters=self.unified_parameters,
            inter_modal_fusion=not self.no_inter_modal_fusion)

    def decoder_config(self):
        return DecoderConfig(
            d_model=self.d_model, d_ff=self.d_ff, n_heads=self.heads,
            n_layers=self.dec_layers, dropout_p=self.dropout,
            attend_mode=self.decoder_attend)

    def train_config(self):
        return TrainConfig(
            batch_tokens=self.batch_tokens, warmup_steps=self.warmup,
            seed=self.seed, max_steps=self.max_steps,
            checkpoint_every=self.checkpoint_every, grad_clip=self.grad_clip)


_RUN_FIELDS = {f.name: f.type for f in fields(RunConfig)}
_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def parse_config_file(path):
    """Flat key=value text; '#' starts a comment, blank lines ignored."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


def _coerce(key, value):
    if not isinstance(value, str):
        return value
    kind = _RUN_FIELDS.get(key, str)
    if kind is bool or kind == "bool":
        low = value.lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise ConfigError(f"config key {key}: expected a boolean, got {value!r}")
    if kind is int or kind == "int":
        return int(value)
    if kind is float or kind == "float":
        return float(value)
    return value


def resolve_run_config(args, file_values=None, snapshot=None):
    """Layer dataclass defaults <- snapshot <- config file <- explicit flags."""
    cfg = RunConfig()
    cli_values = {name: getattr(args, name) for name in _RUN_FIELDS
                  if getattr(args, name, None) is not None}
    for source in (snapshot or {}, file_values or {}, cli_values):
        for key, value in source.items():
            if key in _RUN_FIELDS:
                setattr(cfg, key, _coerce(key, value))
    if cfg.decoder_attend not in ("textual", "visual", "both"):
        raise ConfigError(f"decoder_attend must be textual|visual|both, "
                          f"got {cfg.decoder_attend!r}")
    return cfg


def _add_model_flags(parser):
    parser.add_argument("--d-model", dest="d_model", type=int, default=None,
                        help="node state width (default 128)")
    parser.add_argument("--d-ff", dest="d_ff", type=int, default=None,
                        help="feed-forward inner width (default 256)")
    parser.add_argument("--heads", type=int, default=None,
                        help="attention heads (default 4)")
    parser.add_argument("--enc-layers", dest="enc_layers", type=int, default=None,
                        help="graph fusion layers (default 3)")
    parser.add_argument("--dec-layers", dest="dec_layers", type=int, default=None,
                        help="decoder layers (default 4)")
    parser.add_argument("--dropout", type=float, default=None,
                        help="dropout probability (default 0.5)")
    parser.add_argument("--feat-dim", dest="feat_dim", type=int, default=None,
                        help="visual feature dimensionality (default 2048)")
    parser.add_argument("--no-inter-modal-fusion", dest="no_inter_modal_fusion",
                        action="store_true", default=None,
                        help="disable the cross-modal gating step")
    parser.add_argument("--fully-connected-grounding", dest="fully_connected_grounding",
                        action="store_true", default=None,
                        help="connect every token to every object")
    parser.add_argument("--unified-parameters", dest="unified_parameters",
                        action="store_true", default=None,
                        help="share textual and visual per-layer weights")
    parser.add_argument("--decoder-attend", dest="decoder_attend", default=None,
                        choices=("textual", "visual", "both"),
                        help="decoder cross-attention source (default textual)")
    parser.add_argument("--zero-object-fallback", dest="zero_object_fallback",
                        action="store_true", default=None,
                        help="give object-free sentences one zero-vector object")
    parser.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    parser.add_argument("--config", default=None, help="key=value configuration file")


def _add_train_flags(parser):
    parser.add_argument("--batch-tokens", dest="batch_tokens", type=int, default=None,
                        help="source+target token budget per batch (default 2000)")
    parser.add_argument("--warmup", type=int, default=None,
                        help="learning-rate warmup steps (default 4000)")
    parser.add_argument("--max-steps", dest="max_steps", type=int, default=None,
                        help="optimizer steps to run (default 100)")
    parser.add_argument("--checkpoint-every", dest="checkpoint_every", type=int,
                        default=None, help="periodic checkpoint interval (default off)")
    parser.add_argument("--grad-clip", dest="grad_clip", type=float, default=None,
                        help="global-norm gradient clip (default off)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="graphmt",
        description="Graph-based multi-modal fusion NMT at desk scale")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and write checkpoints")
    p_train.add_argument("--train", required=True, help="training JSONL path")
    p_train.add_argument("--valid", default=None, help="validation JSONL path")
    p_train.add_argument("--ckpt-dir", dest="ckpt_dir", required=True,
                         help="output directory for checkpoints and reports")
    p_train.add_argument("--src-vocab", dest="src_vocab", default=None)
    p_train.add_argument("--tgt-vocab", dest="tgt_vocab", default=None)
    _add_model_flags(p_train)
    _add_train_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_tr = sub.add_parser("translate", help="translate a JSONL file with a checkpoint")
    p_tr.add_argument("checkpoint", help="checkpoint path")
    p_tr.add_argument("--input", required=True, help="JSONL with src and objects")
    p_tr.add_argument("--beam", type=int, default=1, help="beam size (1 = greedy)")
    p_tr.add_argument("--max-len", dest="max_len", type=int, default=None,
                      help="decode length cap (default 2*source+10)")
    p_tr.add_argument("--src-vocab", dest="src_vocab", default=None)
    p_tr.add_argument("--tgt-vocab", dest="tgt_vocab", default=None)
    p_tr.add_argument("--dump-states", dest="dump_states", default=None,
                      help="write encoder introspection JSON for one example")
    p_tr.add_argument("--dump-example", dest="dump_example", type=int, default=0,
                      help="example index for --dump-states (default 0)")
    _add_model_flags(p_tr)
    p_tr.set_defaults(func=cmd_translate)

    p_ev = sub.add_parser("evaluate", help="corpus BLEU of hypotheses vs references")
    p_ev.add_argument("hypotheses", help="one detokenized hypothesis per line")
    p_ev.add_argument("references", help="one reference per line")
    p_ev.set_defaults(func=cmd_evaluate)

    p_gc = sub.add_parser("grad-check",
                          help="finite-difference check of a seeded toy model")
    p_gc.add_argument("--seed", type=int, default=0)
    p_gc.add_argument("--tolerance", type=float, default=1e-4)
    p_gc.add_argument("--fd-step", dest="fd_step", type=float, default=1e-5)
    p_gc.add_argument("--fd-limit", dest="fd_limit", type=int, default=0,
                      help="check only the first N entries per group (0 = all)")
    p_gc.add_argument("--ablation", default="default", choices=ABLATIONS)
    p_gc.add_argument("--report-dir", dest="report_dir", default=None,
                      help="write per-group CSV and figure here")
    p_gc.set_defaults(func=cmd_grad_check)

    p_ins = sub.add_parser("inspect-graph", help="dump one example's graph structure")
    p_ins.add_argument("data", help="JSONL dataset path")
    p_ins.add_argument("line", type=int, help="1-based line number")
    p_ins.add_argument("--feat-dim", dest="feat_dim", type=int, default=2048)
    p_ins.add_argument("--fully-connected", dest="fully_connected",
                       action="store_true", default=False)
    p_ins.set_defaults(func=cmd_inspect_graph)
    return parser


def _file_values(args):
    config_path = getattr(args, "config", None)
    return parse_config_file(config_path) if config_path else {}


def _require_file(path):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such file: {path}")
    return path


def _load_or_build_vocab(path, sentences, label, out):
    if path and os.path.isfile(path):
        return Vocabulary.load(path), path
    vocab = Vocabulary.from_corpus(sentences)
    path = path or os.path.join(out, f"vocab.{label}.txt")
    vocab.save(path)
    return vocab, path


def print_parameter_report(model, out=None):
    out = out if out is not None else sys.stdout
    groups, total = model.parameter_counts()
    for name, count in groups:
        out.write(f"param {name} {count}\n")
    out.write(f"total trainable parameters: {total}\n")


def cmd_train(args):
    cfg = resolve_run_config(args, _file_values(args))
    _require_file(args.train)
    os.makedirs(args.ckpt_dir, exist_ok=True)
    records = read_jsonl(args.train)
    src_vocab, src_vocab_path = _load_or_build_vocab(
        args.src_vocab, (r.get("src", []) for r in records), "src", args.ckpt_dir)
    tgt_vocab, tgt_vocab_path = _load_or_build_vocab(
        args.tgt_vocab, (r.get("tgt", []) for r in records), "tgt", args.ckpt_dir)
    examples = load_dataset(args.train, src_vocab, tgt_vocab,
                            feat_dim=cfg.feat_dim,
                            fully_connected=cfg.fully_connected_grounding,
                            zero_object_fallback=cfg.zero_object_fallback)
    if cfg.decoder_attend == "visual":
        for i, ex in enumerate(examples, start=1):
            if ex.graph.n_vis == 0:
                raise ConfigError(
                    f"--decoder-attend visual is incompatible with object-free data "
                    f"(example {i} has no visual nodes); consider --zero-object-fallback")
    model = Model.build(cfg.encoder_config(), cfg.decoder_config(),
                        len(src_vocab), len(tgt_vocab), seed=cfg.seed)
    print_parameter_report(model)
    snapshot = asdict(cfg)
    snapshot.update(src_vocab_size=len(src_vocab), tgt_vocab_size=len(tgt_vocab),
                    src_vocab_path=src_vocab_path, tgt_vocab_path=tgt_vocab_path)
    result = train(model, examples, cfg.train_config(), args.ckpt_dir,
                   run_config=snapshot, log=print)
    plotting.render_loss_curve(result.curve,
                               os.path.join(args.ckpt_dir, "loss_curve.png"))
    print(f"final training loss: {result.curve[-1][2]:.6f}")
    if args.valid:
        valid = load_dataset(args.valid, src_vocab, tgt_vocab,
                             feat_dim=cfg.feat_dim,
                             fully_connected=cfg.fully_connected_grounding,
                             zero_object_fallback=cfg.zero_object_fallback)
        print(f"final validation loss: {dataset_loss(model, valid):.6f}")
    return 0


def _resolve_vocab_path(explicit, checkpoint_path, snapshot_key, snapshot, label):
    if explicit:
        return _require_file(explicit)
    sibling = os.path.join(os.path.dirname(os.path.abspath(checkpoint_path)),
                           f"vocab.{label}.txt")
    if os.path.isfile(sibling):
        return sibling
    stored = snapshot.get(snapshot_key)
    if stored and os.path.isfile(stored):
        return stored
    raise FileNotFoundError(f"cannot locate the {label} vocabulary; pass --{label}-vocab")


def cmd_translate(args):
    _require_file(args.checkpoint)
    snapshot, _ = load_checkpoint(args.checkpoint)
    cfg = resolve_run_config(args, _file_values(args), snapshot)
    src_vocab = Vocabulary.load(_resolve_vocab_path(
        args.src_vocab, args.checkpoint, "src_vocab_path", snapshot, "src"))
    tgt_vocab = Vocabulary.load(_resolve_vocab_path(
        args.tgt_vocab, args.checkpoint, "tgt_vocab_path", snapshot, "tgt"))
    model = Model.build(cfg.encoder_config(), cfg.decoder_config(),
                        int(snapshot.get("src_vocab_size", len(src_vocab))),
                        int(snapshot.get("tgt_vocab_size", len(tgt_vocab))),
                        seed=cfg.seed)
    load_into_model(args.checkpoint, model)
    _require_file(args.input)
    records = read_jsonl(args.input)
    for index, record in enumerate(records):
        if "src" not in record:
            raise DataError(f"{args.input}: record {index + 1} has no 'src' field")
        graph = graph_from_record(
            record, src_vocab.encode(record["src"]),
            base_dir=os.path.dirname(os.path.abspath(args.input)),
            feat_dim=cfg.feat_dim, fully_connected=cfg.fully_connected_grounding,
            zero_object_fallback=cfg.zero_object_fallback)
        if args.dump_states is not None and index == args.dump_example:
            dump_intermediates(model.encode(graph, collect_intermediates=True),
                               args.dump_states)
        ids = model.translate(graph, beam_size=args.beam, max_len=args.max_len)
        print(" ".join(tgt_vocab.token_of(i) for i in ids))
    return 0


def cmd_evaluate(args):
    _require_file(args.hypotheses)
    _require_file(args.references)
    with open(args.hypotheses, encoding="utf-8") as fh:
        hyp = [line.split() for line in fh.read().splitlines()]
    with open(args.references, encoding="utf-8") as fh:
        ref = [line.split() for line in fh.read().splitlines()]
    print(f"{corpus_bleu(hyp, ref):.2f}")
    return 0


def cmd_grad_check(args):
    model, batch = build_toy_setup(ablation=args.ablation, seed=args.seed)
    report = finite_difference_check(model, batch, h=args.fd_step,
                                     tolerance=args.tolerance, limit=args.fd_limit)
    for g in report.groups:
        print(f"group {g.name} ({g.size} params): max rel err {g.max_rel_err:.3e}")
    if args.report_dir:
        os.makedirs(args.report_dir, exist_ok=True)
        write_report_csv(report, os.path.join(args.report_dir, "gradcheck.csv"))
        plotting.render_gradcheck_report(
            report, os.path.join(args.report_dir, "gradcheck.png"))
    if report.passed:
        print(f"grad-check PASS: max rel err {report.max_rel_err:.3e} "
              f"< tolerance {report.tolerance:g}")
        return 0
    print(f"grad-check FAIL: worst group {report.worst_group} "
          f"at {report.max_rel_err:.3e} >= tolerance {report.tolerance:g}")
    return 1


def cmd_inspect_graph(args):
    _require_file(args.data)
    records = read_jsonl(args.data)
    if not 1 <= args.line <= len(records):
        raise DataError(f"{args.data} has {len(records)} lines, "
                        f"line {args.line} does not exist")
    record = records[args.line - 1]
    tokens = record.get("src", [])
    graph = graph_from_record(record, list(range(len(tokens))),
                              base_dir=os.path.dirname(os.path.abspath(args.data)),
                              feat_dim=args.feat_dim,
                              fully_connected=args.fully_connected)
    print(f"textual nodes: {graph.n_text}")
    print(f"visual nodes: {graph.n_vis}")
    print(f"inter-modal edges: {len(graph.inter_edges)}")
    if graph.inter_edges:
        print(" ".join(f"({t},{o})" for t, o in graph.inter_edges))
    print("token neighbors:")
    for i, tok in enumerate(tokens):
        partners = sorted(graph.visual_neighbors(i))
        shown = " ".join(f"o{j}" for j in partners) if partners else "-"
        print(f"  {i} {tok}: {shown}")
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CheckpointMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except EvaluationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (DataError, ConfigError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
