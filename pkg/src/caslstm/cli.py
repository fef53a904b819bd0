"""Command-line entry point: ``caslstm <command> [options]``.

Exit codes: 0 success, 1 failed check, 2 usage or data error.
"""

import argparse
import json
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import analysis, cells, checkpoint, data, training
from .config import ConfigError, RunConfig, parse_override
from .data import DataError, Vocab
from .encoder import EmbeddingTable
from .model import ModelConfig, SentenceClassifierNet
from .numerics import make_rng

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def resolve_config(args):
    overrides = [parse_override(s) for s in args.set or ()]
    if args.seed is not None:
        overrides.append(("seed", str(args.seed)))
    if args.precision is not None:
        overrides.append(("precision", str(args.precision)))
    if getattr(args, "out", None) is not None:
        overrides.append(("out", args.out))
    if args.config is not None and not Path(args.config).is_file():
        raise UsageError(f"config file not found: {args.config}")
    return RunConfig.load(args.config, overrides)


def _require_file(path, what):
    if path is None:
        raise UsageError(f"no {what} given (set data.{what})")
    if not Path(path).is_file():
        raise UsageError(f"{what} file not found: {path}")
    return path


def _model_config(cfg, vocab_size, n_classes):
    return ModelConfig(vocab_size=vocab_size, n_classes=n_classes, encoder=cfg.encoder,
                       features=cfg.model.features, hidden_dim=cfg.model.hidden_dim,
                       hidden_layers=cfg.model.hidden_layers)


def _pair(cfg):
    return cfg.model.features != "single"


def save_model(path, net, cfg, vocab, labels):
    tensors = net.copy_tensors(include_frozen=True)
    tensors["meta.vocab"] = checkpoint.text_tensor("\n".join(vocab.itos))
    tensors["meta.labels"] = checkpoint.text_tensor("\n".join(labels))
    # the output directory is left out so identical runs give identical bytes
    checkpoint.save(path, tensors, cfg.to_text(include_out=False))


def load_model(path):
    """Rebuild ``(net, cfg, vocab, labels)`` from a checkpoint file."""
    tensors, config_text = checkpoint.load(path)
    try:
        cfg = RunConfig.from_text(config_text, source=str(path))
        vocab = Vocab.from_itos(checkpoint.tensor_text(tensors.pop("meta.vocab")).split("\n"))
        labels = checkpoint.tensor_text(tensors.pop("meta.labels")).split("\n")
    except (KeyError, ConfigError, DataError) as exc:
        raise checkpoint.CheckpointError(f"checkpoint metadata unreadable: {exc}") from None
    mc = _model_config(cfg, len(vocab), len(labels))
    if "emb.E" not in tensors:
        raise checkpoint.CheckpointError("checkpoint has no embedding table")
    dt = tensors["emb.E"].dtype
    precision = 64 if dt == np.float64 else 32
    table = EmbeddingTable(np.zeros((len(vocab), cfg.encoder.input_dim), dtype=dt),
                           trainable=cfg.data.embeddings is None or cfg.data.embeddings_trainable)
    net = SentenceClassifierNet.init(make_rng(0), mc, precision=precision, embedding=table)
    expected = set(net.tensors(include_frozen=True))
    if set(tensors) != expected:
        raise checkpoint.CheckpointError("checkpoint tensors do not match its config")
    try:
        net.load_tensors(tensors)
    except ValueError as exc:
        raise checkpoint.CheckpointError(str(exc)) from None
    return net, cfg, vocab, labels


def _write_jsonl(fh, record):
    fh.write(json.dumps(record, sort_keys=True) + "\n")


def cmd_train(args):
    cfg = resolve_config(args)
    pair = _pair(cfg)
    train_text, labels = data.load_tsv(_require_file(cfg.data.train, "train"), pair)
    dev_text = data.load_tsv(_require_file(cfg.data.dev, "dev"), pair)[0] if cfg.data.dev else None
    test_text = data.load_tsv(_require_file(cfg.data.test, "test"), pair)[0] if cfg.data.test else None
    for extra in (dev_text or []) + (test_text or []):
        if extra.label not in labels:
            raise DataError(f"label {extra.label!r} does not occur in the training data")
    vocab = Vocab.build([ex.words for ex in train_text] +
                        ([ex.words2 for ex in train_text] if pair else []))
    train = data.index_examples(train_text, vocab, labels)
    dev = data.index_examples(dev_text, vocab, labels) if dev_text else None
    test = data.index_examples(test_text, vocab, labels) if test_text else None

    rng = make_rng(cfg.seed)
    table = None
    if cfg.data.embeddings:
        table = data.load_embeddings(_require_file(cfg.data.embeddings, "embeddings"), vocab, rng,
                                     cfg.precision, cfg.data.embeddings_trainable)
        if table.E.shape[1] != cfg.encoder.input_dim:
            raise DataError(f"embedding dimension {table.E.shape[1]} does not match "
                            f"encoder.input_dim = {cfg.encoder.input_dim}")
    net = SentenceClassifierNet.init(rng, _model_config(cfg, len(vocab), len(labels)),
                                     precision=cfg.precision, embedding=table)

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    with open(out / "metrics.jsonl", "w", encoding="utf-8") as mf, \
            open(out / "timing.jsonl", "w", encoding="utf-8") as tf:
        def callback(record, wall):
            _write_jsonl(mf, record)
            _write_jsonl(tf, {"epoch": record["epoch"], "split": record["split"], "wall_time": wall})

        history = training.fit(net, train, cfg.train, dev=dev, rng=rng, callback=callback)
        last = history[-1]["epoch"] if history else 0
        for split, examples in (("train_eval", train), ("test", test)):
            if examples:
                start = time.perf_counter()
                m = training.evaluate(net, examples)
                callback({"epoch": last, "split": split, "loss": m.loss, "accuracy": m.accuracy},
                         time.perf_counter() - start)
                print(f"{split}: accuracy {m.accuracy:.4f} loss {m.loss:.4f}")
    save_model(out / "model.ckpt", net, cfg, vocab, labels)
    print(f"wrote {out / 'model.ckpt'}")
    return EXIT_OK


def cmd_eval(args):
    net, cfg, vocab, labels = load_model(args.checkpoint)
    text, _ = data.load_tsv(args.data, _pair(cfg))
    unknown = sorted({ex.label for ex in text} - set(labels))
    if unknown:
        raise DataError(f"labels not known to the model: {unknown}")
    m = training.evaluate(net, data.index_examples(text, vocab, labels))
    print(json.dumps({"accuracy": m.accuracy, "loss": m.loss, "n": m.n}, sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(args):
    cfg = resolve_config(args)
    gc = cfg.gradcheck
    base = cfg.encoder
    base = type(base)(num_layers=base.num_layers, dim=gc.dim, cell_kind=base.cell_kind,
                      bidirectional=base.bidirectional, pooling=base.pooling,
                      lambda_kind=base.lambda_kind, lambda_value=base.lambda_value)
    guard = cells.fault_injection() if args.inject_fault else nullcontext()
    with guard:
        results = training.gradcheck_suite(base, cfg.model.features, gc.length, cfg.seed,
                                           gc.hidden_dim, gc.eps)
    ok = True
    for label, r in results.items():
        passed = r.max_rel_error < gc.tolerance
        ok &= passed
        print(f"{label:<14} max_rel_error {r.max_rel_error:.3e} ({r.checked} entries, worst {r.worst})"
              f" {'ok' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK


def _sentences(text, vocab, limit):
    seqs = []
    for ex in text:
        seqs.append(vocab.encode(ex.words))
        if ex.words2 is not None:
            seqs.append(vocab.encode(ex.words2))
    return seqs[:limit] if limit else seqs


def cmd_analyze(args):
    net, cfg, vocab, _ = load_model(args.checkpoint)
    if cfg.encoder.cell_kind == "plain_stacked" or cfg.encoder.num_layers < 2:
        raise UsageError("no vertical forget gates: the checkpoint's encoder has no gated upper layers")
    text, _ = data.load_tsv(args.data, _pair(cfg))
    seqs = _sentences(text, vocab, cfg.analysis.max_sentences)
    traces = []
    for start in range(0, len(seqs), 256):
        tokens, mask = data.pad(seqs[start:start + 256])
        traces.append(net.gate_trace(tokens, mask))
    out = Path(args.out or cfg.out)
    paths = analysis.analyze_traces(traces, out, cfg.analysis.bins)
    for l in analysis.gate_layers(traces):
        r = analysis.range_stat(traces, l)
        h = analysis.gate_histogram(traces, l, cfg.analysis.bins)
        print(f"layer {l}: {h.total} gate values, mean range {r.mean():.4f}")
    for l, (lo, hi) in analysis.cell_state_range(traces).items():
        print(f"layer {l}: cell state range [{lo:.4f}, {hi:.4f}]")
    print("wrote " + ", ".join(str(p) for p in paths))
    return EXIT_OK


def cmd_count_params(args):
    cfg = resolve_config(args)
    print(analysis.format_count_table(analysis.count_params(cfg.encoder)))
    return EXIT_OK


GENERATORS = {"majority": data.gen_majority, "pair_match": data.gen_pair_match}


def cmd_gen_data(args):
    if args.n < 1:
        raise UsageError("--n must be positive")
    seed = 1 if args.seed is None else args.seed
    try:
        examples = GENERATORS[args.task](args.n, args.length, seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.out is None:
        raise UsageError("gen-data needs --out FILE")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    data.write_tsv(args.out, examples)
    print(f"wrote {len(examples)} examples to {args.out}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", metavar="DIR", help="output directory (file for gen-data)")
    common.add_argument("--precision", type=int, choices=(32, 64))

    parser = _Parser(prog="caslstm", description="Cell-aware stacked LSTM sentence classifiers.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("train", parents=[common], help="train a classifier")
    p.set_defaults(func=cmd_train)
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a TSV file")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.set_defaults(func=cmd_eval)
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--inject-fault", action="store_true",
                   help="flip the sign of one backward term (negative control)")
    p.set_defaults(func=cmd_gradcheck)
    p = sub.add_parser("analyze-gates", parents=[common], help="vertical forget-gate statistics")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.set_defaults(func=cmd_analyze)
    p = sub.add_parser("count-params", parents=[common], help="encoder parameter counts")
    p.set_defaults(func=cmd_count_params)
    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic TSV corpus")
    p.add_argument("--task", choices=sorted(GENERATORS), required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--length", type=int, default=21)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError, DataError, checkpoint.CheckpointError,
            analysis.AnalysisError) as exc:
        print(f"caslstm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"caslstm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
