"""Command line entry point: ``v2a <command> [--config PATH] [--out DIR] ...``.

Exit codes: 0 ok, 2 bad arguments, 3 incompatible artifact, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import RunConfig, load_config, save_config
from .errors import IncompatibleArtifact, InvalidArgument, NumericOverflow, V2AError

log = logging.getLogger("v2a")

EXIT_OK = 0
EXIT_BAD_ARGS = 2
EXIT_INCOMPATIBLE = 3
EXIT_NUMERIC = 4


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML or JSON run configuration")
    p.add_argument("--out", type=Path, default=Path("run"), help="run directory (default: ./run)")
    p.add_argument("--seed", type=int, help="override every seed in the config")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="v2a", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic dataset and manifest")
    _common(p)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--p-corrupt", type=float)

    p = sub.add_parser("codec-fit", help="fit RVQ codebooks on the training audio")
    _common(p)

    p = sub.add_parser("train", help="train the generator")
    _common(p)
    p.add_argument("--resume", action="store_true", help="continue from train/model.vckp")
    p.add_argument("--stop-at", type=int, help="stop after this many total steps (checkpoint is written)")
    p.add_argument("--manifest", type=Path, help="train on this manifest instead of dataset/manifest.jsonl")

    p = sub.add_parser("generate", help="generate audio for the test videos")
    _common(p)
    p.add_argument("--gamma", type=float)
    p.add_argument("--limit", type=int, help="only the first N test videos")

    p = sub.add_parser("curate", help="score and filter the training set by audio-visual similarity")
    _common(p)
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("eval", help="generate n-gen clips per test video and compute metrics")
    _common(p)
    p.add_argument("--gamma", type=float)
    p.add_argument("--n-gen", type=int)

    p = sub.add_parser("ablate", help="conditioning / guidance / curation trend experiments")
    _common(p)
    p.add_argument("--reduced", action="store_true", help="reduced sweep for small compute budgets")
    p.add_argument("--only", choices=["cond", "cfg", "threshold"], action="append")
    return parser


def effective_config(args) -> RunConfig:
    cfg = load_config(args.config)
    over: dict = {}
    if args.seed is not None:
        s = args.seed
        over = {"seed": s, "world": {"seed": s}, "codec": {"seed": s}, "train": {"seed": s},
                "sample": {"seed": s}}
    if getattr(args, "gamma", None) is not None:
        over.setdefault("sample", {})["gamma"] = args.gamma
    if getattr(args, "threshold", None) is not None:
        over.setdefault("curation", {})["threshold"] = args.threshold
    if getattr(args, "n_gen", None) is not None:
        over.setdefault("eval", {})["n_gen"] = args.n_gen
    for flag, key in (("n_train", "n_train"), ("n_test", "n_test"), ("p_corrupt", "p_corrupt")):
        if getattr(args, flag, None) is not None:
            over.setdefault("world", {})[key] = getattr(args, flag)
    return cfg.with_overrides(**over) if over else cfg


def _run(args) -> int:
    from . import pipeline

    cfg = effective_config(args)
    out: Path = args.out
    if args.command == "synth":
        manifest = pipeline.synth(cfg, out, force=args.force)
        print(manifest)
    elif args.command == "codec-fit":
        print(pipeline.codec_fit(cfg, out))
    elif args.command == "train":
        print(pipeline.train(cfg, out, resume=args.resume, stop_at=args.stop_at, manifest=args.manifest))
    elif args.command == "generate":
        paths = pipeline.generate(cfg, out, limit=args.limit)
        print(f"wrote {len(paths)} clips to {out / 'generate'}")
    elif args.command == "curate":
        path, report = pipeline.curate(cfg, out)
        print(report.sweep_csv(), end="")
        print(f"kept {report.kept} / {report.total} at threshold {report.threshold} -> {path}")
    elif args.command == "eval":
        report = pipeline.evaluate_run(cfg, out, n_gen=args.n_gen)
        print(json.dumps(report.to_dict(), indent=2))
    elif args.command == "ablate":
        run_ablations(cfg, out, args.reduced, args.only, args.force)
    return EXIT_OK


def run_ablations(cfg: RunConfig, out: Path, reduced: bool, only, force: bool) -> None:
    from . import ablate, io

    if reduced:
        log.warning("reduced compute budget: fewer steps, clips and sweep points")
        cfg = cfg.with_overrides(
            train={"steps": max(1, cfg.train.steps // 4)},
            world={"n_train": max(16, cfg.world.n_train // 4), "n_test": max(10, cfg.world.n_test // 5)},
            ablate={"gammas": [1.0, 6.0], "thresholds": [0.0, cfg.curation.threshold], "n_gen": 1},
        )
    dest = out / "ablate"
    dest.mkdir(parents=True, exist_ok=True)
    save_config(cfg, dest / "config.json")
    world = ablate.make_world(cfg)
    todo = only or ["cond", "cfg", "threshold"]
    fusion_model = None
    if "cond" in todo:
        rows = ablate.conditioning_ablation(cfg, world)
        ablate.write_csv(dest / "conditioning.csv", rows)
        io.write_provenance(dest / "conditioning.csv", [], cfg.to_dict(), {"stage": "ablate"})
    if "cfg" in todo:
        rows = ablate.cfg_ablation(cfg, world, fusion_model)
        ablate.write_csv(dest / "cfg_scale.csv", rows)
        io.write_provenance(dest / "cfg_scale.csv", [], cfg.to_dict(), {"stage": "ablate"})
    if "threshold" in todo:
        rows = ablate.threshold_ablation(cfg, world)
        ablate.write_csv(dest / "threshold.csv", rows)
        io.write_provenance(dest / "threshold.csv", [], cfg.to_dict(), {"stage": "ablate"})
    print(f"ablation tables written to {dest}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except IncompatibleArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except NumericOverflow as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidArgument, FileExistsError, FileNotFoundError, V2AError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_ARGS


if __name__ == "__main__":
    sys.exit(main())
