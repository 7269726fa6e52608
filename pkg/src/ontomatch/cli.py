"""Command-line entry point.

Every subcommand writes its artifacts to files and a short summary to
stdout. Failures print a JSON object on stderr and exit non-zero.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path as FsPath

from .checkpoint import Checkpoint, file_digest, load_checkpoint, save_checkpoint
from .config import RunConfig, desk_preset, load_config
from .corpus import read_corpus, write_corpus
from .evaluation import compute_prf, dumps_reference, load_reference
from .matcher import parse_alignment_tsv
from .objectives import OBJECTIVES, loss_csv
from .ontology import extract_paths, extract_triplets, format_stats_table, load_ontology, save_ontology, stats
from .pipeline import AXIS_HEADER, Timer, axis_rows, kge_stage, run_axes, run_pipeline, train_stage
from .synthetic import PerturbationConfig, gen_synthetic_pair

log = logging.getLogger("ontomatch")

EXIT_ERROR = 1


class CliError(RuntimeError):
    pass


# ---------------------------------------------------------------- helpers


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else desk_preset()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    paths = cfg.paths
    for name in ("source", "target", "reference", "out"):
        value = getattr(args, name, None)
        if value is not None:
            paths = replace(paths, **{name: value})
    cfg = replace(cfg, paths=paths)
    if getattr(args, "k", None) is not None:
        cfg = replace(cfg, match=replace(cfg.match, k=args.k))
    if getattr(args, "threshold", None) is not None:
        cfg = replace(cfg, match=replace(cfg.match, threshold=args.threshold))
    if getattr(args, "objectives", None):
        cfg = replace(cfg, train=replace(cfg.train, objectives=args.objectives))
    if getattr(args, "steps", None) is not None:
        cfg = replace(cfg, train=replace(cfg.train, steps=args.steps))
    return cfg


def _need(value, flag: str):
    if value is None:
        raise CliError(f"{flag} is required (flag or config)")
    return value


def _objectives(text: str) -> tuple[str, ...]:
    names = tuple(s.strip() for s in text.split(",") if s.strip())
    bad = [n for n in names if n not in OBJECTIVES]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"objectives must be a comma list drawn from {','.join(OBJECTIVES)}")
    return names


def _out_dir(path: str) -> FsPath:
    out = FsPath(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True))


def _write_alignment(alignment, out: FsPath, extra: dict) -> None:
    alignment.metadata.update(extra)
    out.write_text(alignment.to_tsv(), encoding="utf-8")
    out.with_suffix(".json").write_text(alignment.to_json(), encoding="utf-8")


# ---------------------------------------------------------------- commands


def cmd_parse(args) -> int:
    rows = []
    for path in args.ontology:
        o = load_ontology(path)
        rows.append((o.id, stats(o, extract_triplets(o), extract_paths(o))))
    table = format_stats_table(rows)
    if args.out:
        FsPath(args.out).write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return 0


def cmd_corpus(args) -> int:
    from .corpus import build_corpus

    cfg = _config(args)
    ontologies = [load_ontology(_need(cfg.paths.source, "--source"))]
    if cfg.paths.target:
        ontologies.append(load_ontology(cfg.paths.target))
    corpus = build_corpus(ontologies, cfg.corpus)
    out = FsPath(_need(cfg.paths.out, "--out"))
    write_corpus(corpus, out)
    _emit(
        {
            "corpus": str(out),
            "positive_triplets": len(corpus.positive_triplets),
            "negative_triplets": len(corpus.negative_triplets),
            "positive_paths": len(corpus.positive_paths),
            "negative_paths": len(corpus.negative_paths),
            "triplet_shortfall": corpus.triplet_shortfall,
            "path_shortfall": corpus.path_shortfall,
        }
    )
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    ontologies = [load_ontology(_need(cfg.paths.source, "--source"))]
    if cfg.paths.target:
        ontologies.append(load_ontology(cfg.paths.target))
    corpus = read_corpus(args.corpus) if args.corpus else None
    timer = Timer()
    trained = train_stage(ontologies, cfg, timer, corpus=corpus)
    out = FsPath(_need(cfg.paths.out, "--out"))
    digest = save_checkpoint(Checkpoint(trained.params, trained.vocab, trained.concept_vocab, None, cfg.snapshot(), 0.0), out)
    loss_path = out.with_suffix(".loss.csv")
    loss_path.write_text(loss_csv(trained.reports), encoding="utf-8")
    _emit({"checkpoint": str(out), "sha256": digest, "losses": str(loss_path), "steps": trained.params.steps, "seconds": timer.seconds})
    return 0


def cmd_kge(args) -> int:
    cfg = _config(args)
    ck = load_checkpoint(args.checkpoint)
    ontologies = [load_ontology(_need(cfg.paths.source, "--source"))]
    if cfg.paths.target:
        ontologies.append(load_ontology(cfg.paths.target))
    start = time.perf_counter()
    ck.transe = kge_stage(ontologies, ck.concept_vocab, cfg)
    out = FsPath(cfg.paths.out or args.checkpoint)
    digest = save_checkpoint(ck, out)
    _emit({"checkpoint": str(out), "sha256": digest, "final_loss": ck.transe.losses[-1], "seconds": time.perf_counter() - start})
    return 0


def cmd_match(args) -> int:
    from .matcher import match

    cfg = _config(args)
    ck = load_checkpoint(args.checkpoint)
    if ck.transe is None:
        raise CliError("checkpoint has no TransE section; run the kge command first")
    src = load_ontology(_need(cfg.paths.source, "--source"))
    tgt = load_ontology(_need(cfg.paths.target, "--target"))
    start = time.perf_counter()
    alignment = match(src, tgt, ck.params, ck.vocab, ck.concept_vocab, ck.transe, cfg.match)
    elapsed = time.perf_counter() - start
    out = FsPath(_need(cfg.paths.out, "--out"))
    _write_alignment(alignment, out, {"checkpoint_sha256": file_digest(args.checkpoint), "seed": cfg.seed, "elapsed_seconds": round(elapsed, 3)})
    _emit({"alignment": str(out), "mappings": len(alignment), "elapsed_seconds": round(elapsed, 3)})
    return 0


def cmd_eval(args) -> int:
    alignment = parse_alignment_tsv(FsPath(args.alignment).read_text(encoding="utf-8"))
    ref = load_reference(args.reference)
    p, r, f, flags = compute_prf(alignment, ref)
    print(f"P={p:.4g} R={r:.4g} F={f:.4g}")
    if args.json:
        _emit({"precision": p, "recall": r, "f1": f, "flags": list(flags), "skipped": ref.skipped, "duplicates": ref.duplicates})
    return 0


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    src = load_ontology(_need(cfg.paths.source, "--source"))
    tgt = load_ontology(_need(cfg.paths.target, "--target"))
    ref = load_reference(cfg.paths.reference) if cfg.paths.reference else None
    out = _out_dir(_need(cfg.paths.out, "--out"))
    res = run_pipeline(src, tgt, cfg, ref)
    write_corpus(res.trained.corpus, out / "corpus.ndjson")
    digest = save_checkpoint(res.checkpoint(cfg), out / "model.ckpt")
    (out / "loss.csv").write_text(loss_csv(res.trained.reports), encoding="utf-8")
    (out / "run.ini").write_text(cfg.dumps(), encoding="utf-8")
    _write_alignment(res.alignment, out / "alignment.tsv", {"checkpoint_sha256": digest})
    summary = {"out": str(out), "mappings": len(res.alignment), "seconds": {k: round(v, 3) for k, v in res.timings.items()}}
    if res.prf is not None:
        summary.update({"precision": res.prf.precision, "recall": res.prf.recall, "f1": res.prf.f1})
        print(f"P={res.prf.precision:.4g} R={res.prf.recall:.4g} F={res.prf.f1:.4g}")
    _emit(summary)
    return 0


def cmd_synth(args) -> int:
    pert = PerturbationConfig(args.synonym_swap, args.reorder, args.drop, args.delete)
    src, tgt, gold = gen_synthetic_pair(args.n, pert, args.seed)
    out = _out_dir(args.out)
    save_ontology(src, out / "source.json")
    save_ontology(tgt, out / "target.json")
    (out / "reference.tsv").write_text(dumps_reference(gold), encoding="utf-8")
    _emit({"out": str(out), "source_concepts": len(src), "target_concepts": len(tgt), "gold_pairs": len(gold)})
    return 0


def cmd_report(args) -> int:
    from .plotting import plot_axis, plot_losses

    cfg = _config(args)
    src = load_ontology(_need(cfg.paths.source, "--source"))
    tgt = load_ontology(_need(cfg.paths.target, "--target"))
    ref = load_reference(_need(cfg.paths.reference, "--reference"))
    out = _out_dir(_need(cfg.paths.out, "--out"))
    points = run_axes(args.axes, src, tgt, ref, cfg, args.workers)
    with open(out / "axes.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AXIS_HEADER)
        writer.writerows(axis_rows(points))
    figures = []
    for axis in args.axes:
        pts = [p for p in points if p.axis == axis]
        if pts:
            path = out / f"axis_{axis}.png"
            plot_axis(pts, path)
            figures.append(str(path))
    if args.loss_curve:
        trained = train_stage([src, tgt], cfg)
        (out / "loss.csv").write_text(loss_csv(trained.reports), encoding="utf-8")
        plot_losses(trained.reports, out / "loss.png")
        figures.append(str(out / "loss.png"))
    _emit({"table": str(out / "axes.csv"), "figures": figures, "points": len(points)})
    return 0


# ---------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser, *, io: bool = True) -> None:
    p.add_argument("--config", help="INI run configuration (defaults to the desk-scale preset)")
    p.add_argument("--seed", type=int, help="global seed, overrides the config")
    if io:
        p.add_argument("--source", help="source ontology (.json canonical or .obo)")
        p.add_argument("--target", help="target ontology")
        p.add_argument("--out", help="output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ontomatch", description="Self-supervised zero-shot ontology matching.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="load ontologies and print corpus statistics")
    p.add_argument("ontology", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("corpus", help="build the training corpus (NDJSON)")
    _common(p)
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("train", help="train the encoder and write a checkpoint")
    _common(p)
    p.add_argument("--corpus", help="reuse a corpus written by the corpus command")
    p.add_argument("--objectives", type=_objectives, help="comma list, e.g. c2c,mpath")
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("kge", help="train TransE and add it to a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_kge)

    p = sub.add_parser("match", help="infer an alignment from a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("eval", help="precision, recall and F against a reference")
    p.add_argument("--alignment", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--json", action="store_true", help="also print a JSON summary")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="corpus, training, TransE, matching and evaluation in one go")
    _common(p)
    p.add_argument("--reference")
    p.add_argument("--k", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--objectives", type=_objectives)
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("synth", help="write a synthetic ontology pair with its gold alignment")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--synonym-swap", type=float, default=0.2)
    p.add_argument("--reorder", type=float, default=0.2)
    p.add_argument("--drop", type=float, default=0.1)
    p.add_argument("--delete", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="run experiment axes; write a CSV table and PNG figures")
    _common(p)
    p.add_argument("--reference")
    p.add_argument("--axes", type=lambda s: s.split(","), default=["objectives", "neg_ratio", "masks", "k"])
    p.add_argument("--objectives", type=_objectives)
    p.add_argument("--steps", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--workers", type=int, help="parallel runs (capped by LAKER_THREADS)")
    p.add_argument("--loss-curve", action="store_true", help="also plot the training loss")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as e:  # every failure leaves a machine-readable trace
        log.debug("command failed", exc_info=True)
        sys.stderr.write(json.dumps({"error": type(e).__name__, "message": str(e), "command": args.command}) + "\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
