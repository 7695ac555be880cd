"""Command line interface.

Exit codes: 0 success, 1 verification failure, 2 usage or config error,
3 I/O error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import platform
import sys
import time
from pathlib import Path

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import KERNEL_MENU, ModelConfig, TrainConfig, config_to_dict, load_config
from .data import CorpusError, load_splits, parse_corpus, write_jsonl
from .embeddings import VectorFileError
from .evaluation import metrics_report
from .plotting import plot_ablation, plot_history, plot_mask, write_csv
from .substrate import ConfigError
from .training import evaluate, predict_examples, train_run

log = logging.getLogger("ctran")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

ABLATIONS = ("decoder", "kernels", "conv")


class UsageError(Exception):
    pass


def parse_seeds(text: str) -> list[int]:
    """``"1..10"``, ``"3"`` or ``"1,4,7"``."""
    try:
        if ".." in text:
            lo, hi = text.split("..")
            seeds = list(range(int(lo), int(hi) + 1))
        else:
            seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from exc
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def parse_kernels(text: str) -> list[int]:
    try:
        ks = [int(k) for k in text.strip("[]").split(",") if k.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad kernel list {text!r}") from exc
    if not ks or any(k <= 0 for k in ks):
        raise argparse.ArgumentTypeError(f"kernel sizes must be positive: {text!r}")
    return ks


def resolve_config(args) -> tuple[ModelConfig, TrainConfig]:
    """Config file (or defaults), then command-line overrides."""
    if args.config:
        model_cfg, train_cfg = load_config(args.config)
    else:
        model_cfg, train_cfg = ModelConfig(), TrainConfig()
    if args.seeds is not None:
        train_cfg.seeds = args.seeds
    if args.epochs is not None:
        train_cfg.epochs = args.epochs
    if args.batch_size is not None:
        train_cfg.batch_size = args.batch_size
    if args.deterministic:
        train_cfg.deterministic = True
    if args.kernel_sizes is not None:
        model_cfg.kernel_sizes = args.kernel_sizes
    if args.decoder is not None:
        model_cfg.decoder = args.decoder
    if args.embedding is not None:
        model_cfg.embedding = args.embedding
    if args.embedding_file is not None:
        model_cfg.embedding_file = args.embedding_file
    if args.strip_punct:
        model_cfg.strip_punct = True
    return model_cfg.validate(), train_cfg.validate()


def ablation_variants(kind: str, base: ModelConfig) -> list[tuple[str, ModelConfig]]:
    if kind == "decoder":
        return [(d, dataclasses.replace(base, decoder=d)) for d in ("aligned", "regular")]
    if kind == "kernels":
        return [("[" + ",".join(map(str, ks)) + "]", dataclasses.replace(base, kernel_sizes=list(ks)))
                for ks in KERNEL_MENU]
    if kind == "conv":
        return [("cnn-wfs-te", dataclasses.replace(base, use_conv=True)),
                ("te", dataclasses.replace(base, use_conv=False))]
    raise UsageError(f"unknown ablation {kind!r}; expected one of {ABLATIONS}")


def run_seeds(splits, model_cfg, train_cfg, out: Path, figures: bool, label: str = "") -> dict:
    """Train every seed, write per-seed checkpoints/histories, return the report."""
    per_seed = []
    for seed in train_cfg.seeds:
        seed_dir = out / f"seed_{seed}"
        result = train_run(splits["train"], splits.get("dev"), model_cfg, train_cfg, seed)
        save_checkpoint(seed_dir / "checkpoint", result.model, result.maps, train_cfg)
        write_csv(result.history, seed_dir / "history.csv")
        if figures and result.history:
            plot_history(result.history, seed_dir / "history.png",
                         title=f"{label} seed {seed}".strip())
        t0 = time.perf_counter()
        test = evaluate(result.model, splits["test"], result.maps)
        row = {"seed": seed, "best_epoch": result.best_epoch, **test,
               "test_seconds": time.perf_counter() - t0,
               "mean_epoch_seconds": (sum(h["epoch_seconds"] for h in result.history)
                                      / max(1, len(result.history)))}
        per_seed.append(row)
        log.info("%s seed %d: test slot F1 %.4f intent acc %.4f", label or "run", seed,
                 test["slot_f1"], test["intent_accuracy"])
    report = metrics_report([{k: r[k] for k in ("slot_f1", "slot_precision", "slot_recall",
                                                "intent_accuracy")} for r in per_seed])
    report["per_seed"] = per_seed
    write_csv(per_seed, out / "per_seed.csv")
    with open(out / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1)
    return report


def write_manifest(out: Path, args, model_cfg, train_cfg, splits_paths, started: float, extra=None):
    manifest = {
        "command": args.command,
        "argv": sys.argv[1:],
        "config": config_to_dict(model_cfg, train_cfg),
        "data": splits_paths,
        "seeds": train_cfg.seeds,
        "out": str(out),
        "wall_clock_seconds": time.time() - started,
        "python": platform.python_version(),
        "ctran": __version__,
    }
    if extra:
        manifest.update(extra)
    with open(out / "run_manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(model_cfg, train_cfg), fh, indent=1)


def cmd_train(args) -> int:
    started = time.time()
    model_cfg, train_cfg = resolve_config(args)
    splits = load_splits(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {s: str(Path(args.data)) for s in splits}
    figures = not args.no_figures

    if not args.ablation:
        report = run_seeds(splits, model_cfg, train_cfg, out, figures)
        write_manifest(out, args, model_cfg, train_cfg, paths, started)
        print(json.dumps(report["median"], indent=1))
        return EXIT_OK

    rows = []
    for name, variant in ablation_variants(args.ablation, model_cfg):
        report = run_seeds(splits, variant, train_cfg, out / _safe(name), figures, label=name)
        rows.append({"variant": name, **report["median"], "seeds": len(train_cfg.seeds)})
    write_csv(rows, out / "ablation.csv")
    with open(out / "ablation.json", "w", encoding="utf-8") as fh:
        json.dump({"ablation": args.ablation, "rows": rows}, fh, indent=1)
    if figures:
        plot_ablation(rows, out / "ablation.png", title=f"{args.ablation} ablation (median)")
    write_manifest(out, args, model_cfg, train_cfg, paths, started,
                   {"ablation": args.ablation})
    print("variant\tslot_f1\tintent_accuracy")
    for r in rows:
        print(f"{r['variant']}\t{r['slot_f1']:.4f}\t{r['intent_accuracy']:.4f}")
    return EXIT_OK


def _safe(name: str) -> str:
    return name.strip("[]").replace(",", "-") or "variant"


def cmd_evaluate(args) -> int:
    model, maps, _, _ = load_checkpoint(args.checkpoint)
    examples = parse_corpus(args.input, args.format)
    metrics = evaluate(model, examples, maps)
    text = json.dumps(metrics, indent=1)
    if args.output:
        Path(args.output).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_predict(args) -> int:
    model, maps, _, _ = load_checkpoint(args.checkpoint)
    examples = parse_corpus(args.input, args.format)
    preds = predict_examples(model, examples, maps) if examples else []
    with open(args.output, "w", encoding="utf-8") as fh:
        for ex, (intent, tags, seconds) in zip(examples, preds):
            assert len(tags) == len(ex.tokens)
            rec = {"id": ex.id, "tokens": list(ex.tokens), "slots": tags, "intent": intent,
                   "meta": {"inference_ms": seconds * 1000.0}}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    log.info("wrote %d predictions to %s", len(preds), args.output)
    return EXIT_OK


def cmd_verify(args) -> int:
    from . import verify

    checks = verify.run(args.scope)
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VERIFY


def cmd_masks(args) -> int:
    from .decoders import build_causal_mask, build_zero_diag_mask

    build = build_causal_mask if args.kind == "causal" else build_zero_diag_mask
    m = build(args.n)
    for row in m.tolist():
        print(" ".join("0" if v == 0 else "-inf" for v in row))
    if args.figure:
        plot_mask(m, args.figure, title=f"{args.kind} mask, n={args.n}")
    return EXIT_OK


def cmd_convert(args) -> int:
    examples = parse_corpus(args.input, args.format)
    write_jsonl(examples, args.output)
    log.info("converted %d examples", len(examples))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctran", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one model per seed and report median test metrics")
    t.add_argument("--config", help="JSON config {model: {...}, train: {...}}; unknown keys rejected")
    t.add_argument("--data", required=True,
                   help="directory with train/dev/test .jsonl (or tabbed .tsv) splits")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--seeds", type=parse_seeds, help="e.g. 1..10 or 1,2,3 (default 1..10)")
    t.add_argument("--epochs", type=int, help="epochs per seed (default 50)")
    t.add_argument("--batch-size", type=int, help="batch size (default 16)")
    t.add_argument("--kernel-sizes", type=parse_kernels,
                   help="comma-separated kernel sizes (default 1,2,3,5)")
    t.add_argument("--decoder", choices=("aligned", "regular"),
                   help="slot decoder cross-attention mask (default aligned)")
    t.add_argument("--embedding", choices=("learned_static", "frozen_file"),
                   help="embedding provider (default learned_static)")
    t.add_argument("--embedding-file", help="vector-file directory for frozen_file")
    t.add_argument("--strip-punct", action="store_true",
                   help="drop punctuation-only tokens tagged O (default off)")
    t.add_argument("--deterministic", action="store_true",
                   help="single thread, deterministic kernels")
    t.add_argument("--ablation", choices=ABLATIONS,
                   help="run a comparison: decoder aligned/regular, the kernel-size menu, "
                        "or conv+WFS vs Transformer-only encoder")
    t.add_argument("--no-figures", action="store_true", help="skip PNG figures")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint on a labelled file")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--input", required=True)
    e.add_argument("--format", choices=("jsonl", "tabbed"), default="jsonl")
    e.add_argument("--output", help="also write the metrics JSON here")
    e.set_defaults(func=cmd_evaluate)

    pr = sub.add_parser("predict", help="tag and classify every example of a JSONL file")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--input", required=True)
    pr.add_argument("--output", required=True)
    pr.add_argument("--format", choices=("jsonl", "tabbed"), default="jsonl")
    pr.set_defaults(func=cmd_predict)

    v = sub.add_parser("verify", help="gradient, mask and metric self-checks")
    v.add_argument("--scope", choices=("grad", "masks", "metrics", "all"), default="all")
    v.set_defaults(func=cmd_verify)

    m = sub.add_parser("masks", help="print a decoder mask")
    m.add_argument("--kind", choices=("causal", "zero-diag"), default="zero-diag")
    m.add_argument("--n", type=int, default=5)
    m.add_argument("--figure", help="also render the mask to this image file")
    m.set_defaults(func=cmd_masks)

    c = sub.add_parser("convert", help="convert a tabbed corpus to JSON Lines")
    c.add_argument("--input", required=True)
    c.add_argument("--output", required=True)
    c.add_argument("--format", choices=("jsonl", "tabbed"), default="tabbed")
    c.set_defaults(func=cmd_convert)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        print(f"config error: malformed JSON: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, VectorFileError) as exc:
        print(f"load error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, CorpusError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
