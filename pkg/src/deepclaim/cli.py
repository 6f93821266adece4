"""Command-line entry point.

    deepclaim synth     --out DIR [--seed N] [--n-claims N]
    deepclaim label     --claims F --remits F --denial-set F --out DIR
    deepclaim featurize --labeled F --out DIR
    deepclaim train     --features F --vocab F [--variant V] --out DIR
    deepclaim evaluate  --labeled F [--variant V] [--k-splits K] --out DIR
    deepclaim explain   --checkpoint F --vocab F --features F [--index I] --out DIR
    deepclaim bench     --labeled F [--k-splits K] --out DIR

Any option can also come from ``--config FILE`` (``key = value`` lines,
``#`` comments); command-line flags take precedence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import evaluation, explain, featurize, ingest, model, pipeline, synth, train

log = logging.getLogger("deepclaim")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in str(text).replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in str(text).replace(",", " ").split())


def read_config(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--variant", default="deepclaim2", choices=sorted(model.VARIANTS))
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--lambdas", type=_floats, default=(1.0, 1.0, 0.01), help="three weights, e.g. 1,1,0.01")
    p.add_argument("--context-dim", type=int, default=96)
    p.add_argument("--embed-dim", type=int, default=94)
    p.add_argument("--min-counts", type=_ints, default=(5, 5, 5),
                   help="OOV thresholds for procedure, diagnosis, other tokens")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepclaim", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus with planted denial rules")
    _add_common(p)
    p.add_argument("--n-claims", type=int, default=5000)
    p.add_argument("--noise", type=float, default=0.0, help="background denial rate")
    p.add_argument("--rule-probability", type=float, default=1.0)

    p = sub.add_parser("label", help="join claims with remittances and derive targets")
    _add_common(p)
    p.add_argument("--claims", required=True)
    p.add_argument("--remits", required=True)
    p.add_argument("--denial-set", required=True)

    p = sub.add_parser("featurize", help="build the vocabulary and sparse claim vectors")
    _add_common(p)
    p.add_argument("--labeled", required=True)
    p.add_argument("--min-counts", type=_ints, default=(5, 5, 5))

    p = sub.add_parser("train", help="train one model on featurized claims")
    _add_common(p)
    _add_model(p)
    p.add_argument("--features", required=True)
    p.add_argument("--vocab", required=True)

    p = sub.add_parser("evaluate", help="time-series cross-validation of one variant")
    _add_common(p)
    _add_model(p)
    p.add_argument("--labeled", required=True)
    p.add_argument("--k-splits", type=int, default=3)

    p = sub.add_parser("explain", help="suspiciousness scores for one claim")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--index", type=int, default=0, help="row of the features file")
    p.add_argument("--pcn", help="select the claim by patient control number instead")
    p.add_argument("--threshold", type=float, default=0.8)

    p = sub.add_parser("bench", help="cross-validate all five variants")
    _add_common(p)
    _add_model(p)
    p.add_argument("--labeled", required=True)
    p.add_argument("--k-splits", type=int, default=3)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = read_config(args.config)
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        actions = {a.dest: a for a in subparser._actions}
        unknown = sorted(set(cfg) - set(actions))
        if unknown:
            parser.error(f"unknown keys in {args.config}: {', '.join(unknown)}")
        defaults = {}
        for key, raw in cfg.items():
            act = actions[key]
            if act.nargs == 0:
                value = raw.lower() in ("1", "true", "yes", "on")
            else:
                value = act.type(raw) if act.type else raw
            if act.choices is not None and value not in act.choices:
                parser.error(f"{args.config}: {key} must be one of {sorted(act.choices)}")
            defaults[key] = value
        subparser.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> None:
    base = synth.default_rules()
    rules = tuple(
        synth.PlantedRule(r.trigger, r.carc, r.level, args.rule_probability, r.prevalence) for r in base
    )
    cfg = synth.SynthConfig(n_claims=args.n_claims, noise_rate=args.noise, rules=rules, seed=args.seed)
    corpus = synth.generate(cfg)
    paths = corpus.write(args.out)
    log.info("wrote %s (expected denial rate %.4f)", ", ".join(str(p) for p in paths.values()),
             cfg.expected_denial_rate())


def cmd_label(args) -> None:
    claims = ingest.read_claims(args.claims)
    remits = ingest.read_remits(args.remits)
    denial = ingest.read_denial_set(args.denial_set)
    result = ingest.join_and_label(claims, remits, denial)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pipeline.write_labeled(out / "labeled.jsonl", result.labeled, denial.classes)
    summary = {
        "claims": len(claims),
        "labeled": len(result.labeled),
        "unmatched": result.unmatched,
        "rejected": len(result.rejected),
        "denial_rate": float(np.mean([l.target.y0 for l in result.labeled])) if result.labeled else 0.0,
    }
    (out / "label_summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    print(json.dumps(summary))


def cmd_featurize(args) -> None:
    labeled, classes = pipeline.read_labeled(args.labeled)
    c, d, o = args.min_counts
    vocab = featurize.build_vocab([l.claim for l in labeled], {"procedure": c, "diagnosis": d, "other": o})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.json")
    vectors = [featurize.vectorize(l.claim, vocab) for l in labeled]
    extras = [
        {
            "pcn": l.claim.patient_control_number,
            "submitted": l.claim.submission_date.isoformat(),
            **{k: v for k, v in pipeline.labeled_to_json(l).items() if k.startswith("y")},
        }
        for l in labeled
    ]
    featurize.write_vectors_jsonl(out / "features.jsonl", vectors, extras)
    (out / "classes.json").write_text(json.dumps(classes) + "\n")
    log.info("vocabulary segments %s, %d claims", vocab.segments, len(vectors))


def _load_features(path, vocab):
    vectors, extras = featurize.read_vectors_jsonl(path, vocab)
    if not vectors:
        raise ValueError(f"{path}: no claims")
    y = model.Targets(
        [e["y0"] for e in extras], [e["y1"] for e in extras], [e["y2"] for e in extras], [e["y3"] for e in extras]
    )
    return vectors, extras, y


def cmd_train(args) -> None:
    vocab = featurize.Vocabulary.load(args.vocab)
    vectors, _, y = _load_features(args.features, vocab)
    X = featurize.stack(vectors)
    cfg = model.ModelConfig.for_variant(
        args.variant, segments=vocab.segments, n_claim_codes=y.y1.shape[1], n_service_codes=y.y2.shape[1],
        context_dim=args.context_dim, embed_dim=args.embed_dim, lambdas=args.lambdas, seed=args.seed,
    )
    tc = train.TrainConfig(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs, seed=args.seed)
    result = train.train(X, y, cfg, tc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model.save_checkpoint(out / "checkpoint.json", result.params, cfg, vocab.digest())
    train.write_trace_csv(out / "loss_trace.csv", result.trace)
    if result.trace:
        log.info("final epoch losses: %s", result.trace[-1])


def _experiment(args) -> pipeline.ExperimentConfig:
    return pipeline.ExperimentConfig(
        variant=args.variant, k_splits=args.k_splits, min_counts=tuple(args.min_counts),
        context_dim=args.context_dim, embed_dim=args.embed_dim, lambdas=tuple(args.lambdas),
        learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs, seed=args.seed,
    )


def cmd_evaluate(args) -> None:
    labeled, _ = pipeline.read_labeled(args.labeled)
    report, _ = pipeline.cross_validate(labeled, _experiment(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    evaluation.write_reports([report], out / "metrics.json", out / "metrics.csv")
    print((out / "metrics.csv").read_text(), end="")


def cmd_bench(args) -> None:
    labeled, _ = pipeline.read_labeled(args.labeled)
    cfg = _experiment(args)
    reports = [pipeline.cross_validate(labeled, cfg, variant)[0] for variant in model.VARIANTS]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    evaluation.write_reports(reports, out / "metrics.json", out / "metrics.csv")
    print((out / "metrics.csv").read_text(), end="")


def cmd_explain(args) -> None:
    vocab = featurize.Vocabulary.load(args.vocab)
    params, cfg, _ = model.load_checkpoint(args.checkpoint, vocab.digest())
    vectors, extras, _ = _load_features(args.features, vocab)
    if args.pcn is not None:
        matches = [i for i, e in enumerate(extras) if e.get("pcn") == args.pcn]
        if not matches:
            raise ValueError(f"no claim with pcn {args.pcn!r} in {args.features}")
        index = matches[0]
    else:
        index = args.index
        if not 0 <= index < len(vectors):
            raise ValueError(f"--index {index} out of range (0..{len(vectors) - 1})")
    report = explain.suspiciousness(params, cfg, vectors[index], threshold=args.threshold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    explain.write_report_csv(out / "saliency.csv", report)
    explain.write_report_json(out / "saliency.json", report)
    for j, name, score in explain.top_k(report, 5):
        print(f"{score:.4f}\t{name}")


COMMANDS = {
    "synth": cmd_synth,
    "label": cmd_label,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "explain": cmd_explain,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"deepclaim {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
