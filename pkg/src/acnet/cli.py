"""Command-line entry point: ``acnet <command> ...``.

Commands
    gen-data    render the synthetic benchmark to a PNG folder with a manifest
    train       train one configuration into a run directory
    eval        float-embedding retrieval report for a run directory
    hash-eval   64-bit code retrieval report, side by side with float metrics
    synth-dump  PNG triples (sketch, G(sketch), nearest gallery photo)
    ablate      train/evaluate a grid of configurations

A run directory holds ``config.json`` (fully resolved), ``trainlog.jsonl``,
``checkpoints/``, ``reports/``, ``embeddings/`` and ``synth/``; everything
needed to re-evaluate it lives inside.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .data import SyntheticShapeSpec, export_image_folder, generate_synthetic_dataset, to_uint8
from .retrieval import (
    ALL,
    EmbeddingSet,
    binarize_hash,
    chance_map,
    evaluate,
    hamming_rank,
    rank_gallery,
    save_embeddings,
    write_report,
)
from .trainer import (
    TOGGLE_ROWS,
    CHANNEL_SWEEP,
    BLOCK_SWEEP,
    WEIGHT_SWEEP,
    ACNetTrainer,
    ConfigError,
    ExperimentConfig,
    run_ablation_grid,
)
from .tensor import Tensor, no_grad

log = logging.getLogger("acnet")

GRID_PRESETS = {
    "toggles": TOGGLE_ROWS,
    "channels": {"base_channels": list(CHANNEL_SWEEP)},
    "blocks": {"n_res_blocks": list(BLOCK_SWEEP)},
    "weights": {f"lam={lam},gamma={gamma}": {"lam": lam, "gamma": gamma} for lam, gamma in WEIGHT_SWEEP},
}


class CLIError(Exception):
    pass


def _parse_k(values) -> list:
    out = []
    for v in values or []:
        if str(v).lower() == ALL:
            out.append(ALL)
        else:
            try:
                k = int(v)
            except ValueError:
                raise CLIError(f"--k values must be positive ints or 'all', got {v!r}") from None
            if k < 1:
                raise CLIError(f"--k values must be positive, got {k}")
            out.append(k)
    return out


def _read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise CLIError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CLIError(f"{path}: invalid JSON ({exc})") from None


def _load_config(args) -> ExperimentConfig:
    raw = _read_json(args.config) if args.config else {}
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        raw["training_mode"] = args.mode
    return ExperimentConfig.from_dict(raw)


def _open_run(run_dir, checkpoint: str | None = None) -> ACNetTrainer:
    run_dir = Path(run_dir)
    ckpt = run_dir / "checkpoints" / (checkpoint or "final.ckpt")
    if not ckpt.is_file():
        raise CLIError(f"no checkpoint at {ckpt}")
    trainer = ACNetTrainer.from_checkpoint(ckpt)
    return trainer


# ------------------------------------------------------------------ commands
def cmd_gen_data(args) -> int:
    raw = _read_json(args.config) if args.config else {}
    gen_keys = {"n_classes", "per_class_sketches", "per_class_photos", "side"}
    spec_keys = {f.name for f in fields(SyntheticShapeSpec)}
    unknown = set(raw) - gen_keys - spec_keys
    if unknown:
        raise CLIError(f"unknown dataset spec fields: {sorted(unknown)}")
    spec_args = {k: v for k, v in raw.items() if k in spec_keys}
    if args.seed is not None:
        spec_args["seed"] = args.seed
    spec = SyntheticShapeSpec(**spec_args)
    ds = generate_synthetic_dataset(spec, **{k: v for k, v in raw.items() if k in gen_keys})
    out = Path(args.out)
    manifest = export_image_folder(ds, out)
    (out / "dataset_spec.json").write_text(
        json.dumps({**asdict(spec), **{k: v for k, v in raw.items() if k in gen_keys}}, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(ds)} images to {out} (manifest {manifest.name})")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    trainer = ACNetTrainer(cfg, run_dir=out)
    try:
        trainer.train()
    finally:
        trainer.log.write_jsonl(out / "trainlog.jsonl")
    metrics = trainer.evaluate("unseen")
    write_report(metrics, out / "reports" / "train_unseen")
    print(json.dumps({k: metrics[k] for k in ("mAP@all", "chance_mAP@all")}, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    trainer = _open_run(args.run_dir, args.checkpoint)
    ks = _parse_k(args.k)
    if ks:
        trainer.config.map_ks = tuple([ALL] + [k for k in ks if k != ALL])
        trainer.config.prec_ks = tuple(k for k in ks if k != ALL)
    q, g = trainer.embedding_sets(args.split)
    metrics = trainer.evaluate(args.split)
    run = Path(args.run_dir)
    stem = run / "reports" / f"eval_{args.split}"
    write_report(metrics, stem)
    save_embeddings(run / "embeddings" / f"{args.split}_queries.emb", q)
    save_embeddings(run / "embeddings" / f"{args.split}_gallery.emb", g)
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_hash_eval(args) -> int:
    trainer = _open_run(args.run_dir, args.checkpoint)
    cfg = trainer.config
    q, g = trainer.embedding_sets(args.split)
    bits = args.bits or cfg.hash_bits
    seed = cfg.seed if args.seed is None else args.seed
    qc = binarize_hash(q, bits, seed)
    gc = binarize_hash(g, bits, projection=qc.projection)
    ks = _parse_k(args.k) or list(cfg.map_ks)
    prec = [k for k in (ks if args.k else cfg.prec_ks) if k != ALL]
    hashed = evaluate(hamming_rank(qc, gc, q.labels, g.labels), ks, prec, cfg.map_normalizer)
    floats = evaluate(rank_gallery(q, g), ks, prec, cfg.map_normalizer)
    metrics = {f"hash{bits}_{k}": v for k, v in hashed.items() if "@" in k}
    metrics.update({f"float_{k}": v for k, v in floats.items() if "@" in k})
    metrics["chance_mAP@all"] = chance_map(q.labels, g.labels, ALL, cfg.chance_trials, cfg.seed, cfg.map_normalizer)
    metrics["n_queries"] = hashed["n_queries"]
    metrics["bits"] = bits
    metrics["projection_seed"] = seed
    write_report(metrics, Path(args.run_dir) / "reports" / f"hash{bits}_{args.split}")
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_synth_dump(args) -> int:
    from PIL import Image

    trainer = _open_run(args.run_dir, args.checkpoint)
    n = args.n
    if n < 0:
        raise CLIError(f"--n must be >= 0, got {n}")
    out = Path(args.out) if args.out else Path(args.run_dir) / "synth"
    out.mkdir(parents=True, exist_ok=True)
    if n == 0:
        return 0
    ds, split = trainer.dataset, trainer.split
    qi = split.test_sketches[np.random.default_rng(trainer.config.seed).permutation(len(split.test_sketches))[:n]]
    sketches = ds.images[qi]
    with no_grad():
        synth = trainer.generator(Tensor(sketches)).data
    q = trainer.embed_gallery(synth)
    gallery = trainer.embed_gallery(ds.images[split.test_photos])
    nearest = split.test_photos[np.argmax(q @ gallery.T, axis=1)]
    tag = Path(args.checkpoint).stem if args.checkpoint else "final"
    for j, (i, s, p) in enumerate(zip(qi, synth, nearest)):
        row = np.concatenate([to_uint8(ds.images[i]), to_uint8(s), to_uint8(ds.images[p])], axis=1)
        Image.fromarray(row, mode="RGB").save(out / f"{tag}_{j:03d}_label{int(ds.labels[i]):03d}.png")
    print(f"wrote {len(qi)} triples to {out}")
    return 0


def cmd_ablate(args) -> int:
    base = _load_config(args)
    if args.grid in GRID_PRESETS:
        axes = GRID_PRESETS[args.grid]
    elif args.grid:
        axes = _read_json(args.grid)
    else:
        raise CLIError("--grid is required (a preset name or a JSON file)")
    rows = run_ablation_grid(base, axes, out_dir=args.out)
    failed = [r["cell"] for r in rows if r["status"] != "ok"]
    print(f"{len(rows)} cells, {len(failed)} failed" + (f": {failed}" if failed else ""))
    return 1 if failed else 0


# ------------------------------------------------------------------ argparse
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="acnet", description="Train and evaluate sketch-to-photo retrieval models.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write the synthetic benchmark as PNGs")
    g.add_argument("--config", help="JSON dataset spec")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one configuration")
    t.add_argument("--config", help="JSON experiment config")
    t.add_argument("--seed", type=int)
    t.add_argument("--mode", choices=("joint", "two_stage", "retrieval_only"))
    t.add_argument("--out", required=True, help="run directory")
    t.set_defaults(func=cmd_train)

    for name, func, help_ in (("eval", cmd_eval, "float retrieval report"),
                              ("hash-eval", cmd_hash_eval, "binary-code retrieval report")):
        e = sub.add_parser(name, help=help_)
        e.add_argument("run_dir")
        e.add_argument("--split", choices=("unseen", "seen"), default="unseen")
        e.add_argument("--k", nargs="+", help="cutoffs, ints or 'all'")
        e.add_argument("--checkpoint", help="checkpoint file name inside checkpoints/")
        if name == "hash-eval":
            e.add_argument("--bits", type=int, default=64)
            e.add_argument("--seed", type=int, help="projection seed (defaults to the run seed)")
        e.set_defaults(func=func)

    s = sub.add_parser("synth-dump", help="write (sketch, synthesis, nearest photo) PNG triples")
    s.add_argument("run_dir")
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--checkpoint")
    s.add_argument("--out")
    s.set_defaults(func=cmd_synth_dump)

    a = sub.add_parser("ablate", help="run an ablation grid")
    a.add_argument("--config", help="base JSON experiment config")
    a.add_argument("--seed", type=int)
    a.add_argument("--mode", choices=("joint", "two_stage", "retrieval_only"))
    a.add_argument("--grid", required=True, help=f"preset ({', '.join(GRID_PRESETS)}) or JSON axis spec")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print("error: invalid config:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return 1
    except (CLIError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
