"""Command-line entry point.

Exit codes: 0 success, 2 invalid config or usage, 3 missing input, 4 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import load_config, parse_value
from .errors import ConfigInvalid, MissingInput, PipelineError
from .runner import RUNNERS, StageFailed, run_pipeline, run_stage

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_STAGE = 0, 2, 3, 4

log = logging.getLogger("histopipe")

# stage flag -> config key
STAGE_FLAGS = {
    "segment": [
        ("--level", int, "pyramid.level", "pyramid level to process (default 2, else coarsest)"),
        ("--sigma", float, "segment.sigma", "Gaussian smoothing sigma in pixels"),
        ("--min-area-px", int, "segment.min_area_px", "drop components smaller than this"),
    ],
    "tile": [
        ("--level", int, "pyramid.level", "pyramid level to process"),
        ("--size-px", int, "tile.size_px", "patch edge length"),
        ("--stride-px", int, "tile.stride_px", "grid step"),
        ("--min-coverage", float, "tile.min_coverage", "minimum masked fraction per patch"),
    ],
    "normalize": [
        ("--template", str, "paths.template", 'template image, pyramid manifest, or "auto"'),
        ("--lambda", float, "stain.lambda", "sparsity weight for stain fitting"),
    ],
    "featurize": [],
    "train": [
        ("--model-kind", str, "model.kind", "svm | forest | gbdt | mlp"),
        ("--k-folds", int, "eval.k_folds", "cross-validation folds on the train split (0 = off)"),
    ],
    "evaluate": [
        ("--threshold", float, "eval.threshold", "decision threshold on scores"),
    ],
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", help="output directory (overrides paths.out)")
    p.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override any config key, e.g. --set model.params.C=10",
    )
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="histopipe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for stage, flags in STAGE_FLAGS.items():
        sp = sub.add_parser(stage, help=f"run the {stage} stage")
        _common(sp)
        for flag, typ, key, helptext in flags:
            sp.add_argument(flag, type=typ, dest=key, help=helptext)
    pp = sub.add_parser("pipeline", help="run all stages in order")
    _common(pp)
    seen = set()
    for flags in STAGE_FLAGS.values():
        for flag, typ, key, helptext in flags:
            if flag not in seen:
                seen.add(flag)
                pp.add_argument(flag, type=typ, dest=key, help=helptext)
    sp = sub.add_parser("synth", help="generate a synthetic pyramid corpus")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True, help="corpus directory")
    sp.add_argument("--n-slides", type=int, default=20)
    sp.add_argument("--balance", type=float, default=0.5, help="fraction of tumor slides")
    sp.add_argument("--size", type=int, default=1024, help="level-0 edge length in pixels")
    sp.add_argument("-v", "--verbose", action="store_true")
    return parser


def _overrides(args) -> dict:
    ov = {}
    if args.seed is not None:
        ov["seed"] = args.seed
    if args.out is not None:
        ov["paths.out"] = args.out
    for item in args.set:
        if "=" not in item:
            raise ConfigInvalid(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        ov[k.strip()] = parse_value(v.strip())
    for k, v in vars(args).items():
        if "." in k and v is not None:
            ov[k] = v
    return ov


SAMPLE_CONFIG = """\
seed = {seed}

[paths]
corpus = "corpus.csv"
template = "auto"
out = "run"

[segment]
sigma = 2.0

[tile]
size_px = 32
stride_px = 32
min_coverage = 0.8

[stain]
enabled = true

[features]
standardize = true

[model]
kind = "svm"

[model.params]
kernel = "linear"

[eval]
test_frac = 0.2
k_folds = 5
"""


def _synth(args) -> int:
    from pathlib import Path

    from .synth import synth_corpus

    corpus = synth_corpus(args.seed, args.n_slides, args.balance, args.out, size=args.size)
    cfg = Path(args.out) / "config.toml"
    if not cfg.exists():
        cfg.write_text(SAMPLE_CONFIG.format(seed=args.seed))
    print(corpus)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "synth":
            return _synth(args)
        cfg = load_config(args.config, _overrides(args))
        if args.command == "pipeline":
            doc = run_pipeline(cfg)
            print(json.dumps({k: doc["payload"][k] for k in ("accuracy", "precision", "recall", "f1", "auc")}))
        else:
            result = run_stage(args.command, cfg)
            if args.command == "evaluate":
                print(json.dumps({k: result["payload"][k] for k in ("accuracy", "auc")}))
        return EXIT_OK
    except ConfigInvalid as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingInput as e:
        print(f"missing input: {e}", file=sys.stderr)
        return EXIT_MISSING
    except StageFailed as e:
        print(f"stage failure: {e}", file=sys.stderr)
        return EXIT_STAGE
    except PipelineError as e:
        print(f"stage failure: {e}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
