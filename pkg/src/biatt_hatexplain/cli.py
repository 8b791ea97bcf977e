"""Command-line entry point: prepare, train, grid, eval, plot (and synth).

Exit status: 0 success, 2 validation error, 3 training divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from collections import Counter
from pathlib import Path

import numpy as np

from . import data as D
from . import explainers as X
from . import metrics as M
from .models import load_checkpoint
from .plotting import attention_rows, rows_to_csv, rows_to_svg
from .training import TABLE1_GRID, DivergenceError, TrainConfig, grid_search, train

logger = logging.getLogger("biatt_hatexplain")

DATA_ROOT_ENV = "BIATT_DATA_ROOT"
EXIT_OK, EXIT_VALIDATION, EXIT_DIVERGENCE, EXIT_IO = 0, 2, 3, 4


def _path(p) -> Path:
    """Resolve relative input paths against ``$BIATT_DATA_ROOT`` when set."""
    p = Path(p)
    root = os.environ.get(DATA_ROOT_ENV)
    if root and not p.is_absolute() and not p.exists():
        return Path(root) / p
    return p


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, config: dict, seed, inputs: dict, started: float) -> None:
    """One run manifest per output directory, with hashes of the files written."""
    artifacts = {
        str(p.relative_to(out)): _sha256(p)
        for p in sorted(out.rglob("*"))
        if p.is_file() and p.name not in ("run_manifest.json", ".lock")
    }
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "output": str(out),
        "wall_clock_seconds": round(time.time() - started, 3),
        "artifacts": artifacts,
    }
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")


# ---------------------------------------------------------------- prepared data


@dataclasses.dataclass
class Prepared:
    posts: dict[str, D.ResolvedPost]
    splits: dict
    vocab: D.Vocabulary
    embeddings: np.ndarray

    def split(self, name: str) -> list[D.ResolvedPost]:
        return [self.posts[i] for i in self.splits[name]]


def load_prepared(directory) -> Prepared:
    directory = _path(directory)
    posts = {p.post_id: p for p in D.read_processed(directory / "processed.jsonl")}
    splits = json.loads((directory / "split.json").read_text(encoding="utf-8"))
    return Prepared(posts, splits, D.Vocabulary.load(directory / "vocab.json"),
                    np.load(directory / "embeddings.npy"))


# ---------------------------------------------------------------- commands


def cmd_prepare(args) -> int:
    started = time.time()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    raws, rejected = D.parse_dataset(_path(args.dataset))
    resolved, undecided = D.resolve_posts(raws, args.max_len)
    ratios = tuple(args.ratios)
    splits = D.split_dataset(resolved, ratios, args.seed)
    by_id = {p.post_id: p for p in resolved}
    vocab = D.build_vocab((by_id[i] for i in splits["train"]), args.min_freq)
    resolved = D.encode_posts(resolved, vocab)
    if args.embeddings:
        emb = D.load_embeddings(_path(args.embeddings), vocab, args.embedding_dim, args.seed)
    else:
        emb = D.random_embeddings(vocab, args.embedding_dim, args.seed)

    D.write_processed(resolved, out / "processed.jsonl")
    (out / "split.json").write_text(json.dumps(D.split_manifest(splits, ratios, args.seed), indent=1), encoding="utf-8")
    vocab.save(out / "vocab.json")
    np.save(out / "embeddings.npy", emb)

    print(f"parsed {len(raws)} posts, rejected {len(rejected)}, undecided {len(undecided)}, kept {len(resolved)}")
    for pid, reason in rejected[:20]:
        print(f"  rejected {pid}: {reason}")
    if len(rejected) > 20:
        print(f"  ... {len(rejected) - 20} more rejected")
    for label, n in sorted(Counter(p.label for p in resolved).items()):
        print(f"class {label}: {n}")
    for c, n in sorted(Counter(c for p in resolved for c in p.communities).items(), key=lambda x: (-x[1], x[0])):
        print(f"community {c}: {n}")
    print("split sizes: " + ", ".join(f"{k}={len(v)}" for k, v in splits.items()))
    write_manifest(out, "prepare", {"min_freq": args.min_freq, "max_len": args.max_len, "ratios": list(ratios),
                                    "embedding_dim": args.embedding_dim},
                   args.seed, {"dataset": args.dataset, "embeddings": args.embeddings}, started)
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    base = TrainConfig.from_json(_path(args.config)) if args.config else TrainConfig()
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(TrainConfig)
                 if getattr(args, f.name, None) is not None}
    return dataclasses.replace(base, **overrides)


def cmd_train(args) -> int:
    started = time.time()
    cfg = _train_config(args)
    prep = load_prepared(args.data)
    out = Path(args.out)
    res = train(cfg, prep.split("train"), prep.split("val"), prep.embeddings, out, prep.vocab.content_hash())
    print(f"best epoch {res.best_epoch}: val macro-F1 {res.best_val_macro_f1:.4f}; checkpoint {res.checkpoint}")
    write_manifest(out, "train", dataclasses.asdict(cfg), cfg.seed, {"data": args.data, "config": args.config}, started)
    return EXIT_OK


def cmd_grid(args) -> int:
    started = time.time()
    base = _train_config(args)
    grid = json.loads(_path(args.grid).read_text(encoding="utf-8")) if args.grid else TABLE1_GRID
    prep = load_prepared(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    best, results = grid_search(grid, base, prep.split("train"), prep.split("val"), prep.embeddings, out,
                                args.budget, prep.vocab.content_hash())
    print(f"{len(results)} runs; best val macro-F1 {results[0]['val_macro_f1']:.4f}")
    (out / "best_config.json").write_text(json.dumps(dataclasses.asdict(best), indent=2), encoding="utf-8")
    write_manifest(out, "grid", {"grid": grid, "base": dataclasses.asdict(base), "budget": args.budget},
                   base.seed, {"data": args.data, "grid": args.grid}, started)
    return EXIT_OK


def explain_post(model, post, method: str, k: int, seed: int, lime_samples: int, target: int):
    fn = model.probability_fn(post.token_ids)
    if method == "attn":
        return X.attention_explain(model, post, k)
    if method == "lime":
        return X.lime_explain(fn, len(post), target, n_samples=lime_samples, seed=seed, post_id=post.post_id, k=k)
    return X.shap_exact(fn, len(post), target, post_id=post.post_id, k=k)


def build_records(model, posts, method: str = "attn", k: int = 5, seed: int = 0, lime_samples: int = 500,
                  shap_max_tokens: int = X.MAX_SHAP_TOKENS):
    """Prediction records and explanations for ``posts``; SHAP skips posts over ``shap_max_tokens``."""
    probs, _ = model.predict([p.token_ids for p in posts])
    records, explanations, skipped = [], [], 0
    for post, pr in zip(posts, probs):
        target = int(np.argmax(pr))
        if method == "shap" and len(post) > shap_max_tokens:
            skipped += 1
            continue
        exp = explain_post(model, post, method, k, seed, lime_samples, target)
        exp.selected = X.to_discrete(exp, k)
        fn = model.probability_fn(post.token_ids)
        records.append(M.PredictionRecord(
            post_id=post.post_id,
            class_probs=[float(v) for v in pr],
            predicted_label=D.LABELS[target],
            gt_label=post.label,
            communities=sorted(post.communities),
            token_scores=exp.token_scores.tolist(),
            gt_rationale=list(post.gt_rationale),
            gt_attention=list(post.gt_attention),
            selected=exp.selected.tolist(),
            comprehensiveness=M.comprehensiveness(fn, exp.selected, target),
            sufficiency=M.sufficiency(fn, exp.selected, target),
        ))
        explanations.append(exp)
    return records, explanations, skipped


def cmd_eval(args) -> int:
    started = time.time()
    model, manifest = load_checkpoint(_path(args.checkpoint))
    prep = load_prepared(args.data)
    if manifest.get("vocab_hash") and manifest["vocab_hash"] != prep.vocab.content_hash():
        raise D.ConfigError("checkpoint vocabulary does not match the prepared data")
    if not 1 <= args.shap_max_tokens <= X.MAX_SHAP_TOKENS:
        raise D.ConfigError(f"--shap-max-tokens must be in [1, {X.MAX_SHAP_TOKENS}]")
    posts = prep.split(args.split)
    if args.limit:
        posts = posts[:args.limit]
    records, explanations, skipped = build_records(model, posts, args.method, args.k, args.seed, args.lime_samples,
                                                 args.shap_max_tokens)
    if skipped:
        logger.warning("shap: skipped %d posts longer than %d tokens", skipped, args.shap_max_tokens)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    M.write_records(records, out / "predictions.jsonl")
    X.write_explanations(explanations, out / "explanations.jsonl")
    report = M.evaluate(records)
    body = report.to_json()
    body["method"], body["skipped"] = args.method, skipped
    (out / "report.json").write_text(json.dumps(body, indent=2, sort_keys=True), encoding="utf-8")
    name = f"{manifest['architecture']}[{ {'attn': 'Attn', 'lime': 'LIME', 'shap': 'SHAP'}[args.method]}]"
    (out / "report.csv").write_text(report.to_csv(name), encoding="utf-8")
    print(report.to_csv(name), end="")
    write_manifest(out, "eval", {"method": args.method, "k": args.k, "split": args.split, "shap_max_tokens": args.shap_max_tokens,
                                 "lime_samples": args.lime_samples, "limit": args.limit},
                   args.seed, {"checkpoint": args.checkpoint, "data": args.data}, started)
    return EXIT_OK


def cmd_plot(args) -> int:
    started = time.time()
    prep = load_prepared(args.data)
    paths = [p for p in args.checkpoints.split(",") if p]
    if len(paths) != 2:
        raise D.ConfigError("--checkpoints needs exactly two comma-separated checkpoint directories")
    models = [load_checkpoint(_path(p))[0] for p in paths]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    formats = set(args.format.split(","))
    for pid in args.post_id:
        if pid not in prep.posts:
            raise KeyError(f"unknown post_id {pid!r}")
        post = prep.posts[pid]
        a, b = (m.forward_post(post).attention.data[0] for m in models)
        rows = attention_rows(post.tokens, post.gt_attention, a, b)
        if "csv" in formats:
            (out / f"{pid}.csv").write_text(rows_to_csv(rows), encoding="utf-8")
        if "svg" in formats:
            labels = ("ground truth", f"A: {models[0].config.head}", f"B: {models[1].config.head}")
            (out / f"{pid}.svg").write_text(rows_to_svg(rows, f"post {pid} ({post.label})", labels), encoding="utf-8")
    write_manifest(out, "plot", {"post_ids": args.post_id, "format": args.format}, None,
                   {"data": args.data, "checkpoints": args.checkpoints}, started)
    return EXIT_OK


def cmd_synth(args) -> int:
    from . import synthetic

    lex = synthetic.Lexicon()
    synthetic.write_corpus(args.out, args.n_posts, args.seed, lexicon=lex)
    if args.embeddings:
        synthetic.write_embeddings(args.embeddings, lex, args.embedding_dim, args.seed)
    print(f"wrote {args.n_posts} posts to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    for f in dataclasses.fields(TrainConfig):
        default = f.default
        kind = _bool if isinstance(default, bool) else int if isinstance(default, int) else float \
            if isinstance(default, float) else str
        if f.name == "attention_hidden":
            kind = int
        flag = "--" + f.name.replace("_", "-")
        extra = {"choices": ["biatt", "matrix"]} if f.name == "head" else \
            {"choices": ["GRU", "LSTM"]} if f.name == "cell" else {}
        p.add_argument(flag, dest=f.name, type=kind, default=None, help=f"override {f.name} (default {default})", **extra)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="biatt-hatexplain", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="resolve labels, build attention targets, vocabulary and splits")
    p.add_argument("--dataset", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--embedding-dim", type=int, default=300)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-freq", type=int, default=1)
    p.add_argument("--max-len", type=int, default=D.DEFAULT_MAX_LEN)
    p.add_argument("--ratios", type=float, nargs=3, default=(0.8, 0.1, 0.1))
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train one configuration")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", help="hyper-parameter sweep")
    p.add_argument("--grid", help="JSON object of field -> list of values (default: full tuning grid)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--budget", type=int, help="train only this many seeded-random grid points")
    _add_config_flags(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("eval", help="predictions, explanations and the metric report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=["attn", "lime", "shap"], default="attn")
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lime-samples", type=int, default=500)
    p.add_argument("--shap-max-tokens", type=int, default=X.MAX_SHAP_TOKENS,
                   help="skip longer posts under --method shap (exact cost is 2^M model calls)")
    p.add_argument("--limit", type=int, help="evaluate only the first N posts of the split")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="attention of two checkpoints against ground truth")
    p.add_argument("--post-id", required=True, action="append")
    p.add_argument("--checkpoints", required=True, help="A,B")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="svg,csv")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("synth", help="write a synthetic HateXplain-format corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-posts", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--embeddings", help="also write a GloVe-style embedding file here")
    p.add_argument("--embedding-dim", type=int, default=50)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (D.DatasetFormatError, D.ConfigError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
