"""Command-line entry point: ``forum-lens <stage> --config course.ini [overrides]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, load_config
from .pipeline import EXPERIMENT_ACTIONS, STAGES, PipelineError, dependency_closure, run_pipeline


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="INI run configuration")
    p.add_argument("--out", help="output directory (overrides [run] output)")
    p.add_argument("--manifest-only", action="store_true", help="write manifest.json and stop")
    p.add_argument("-v", "--verbose", action="store_true")


# flag -> (section, key); store_true flags map to booleans
OVERRIDES = {
    "backbone": {"alpha": ("backbone", "alpha"), "method": ("backbone", "method"),
                 "replicates": ("backbone", "replicates"), "seed": ("backbone", "seed"),
                 "bonferroni": ("backbone", "bonferroni")},
    "vuln": {"strategy": ("robustness", "strategy"), "epsilon": ("robustness", "epsilon"),
             "replicates": ("robustness", "replicates"), "seed": ("robustness", "seed")},
    "diffuse": {"beta": ("diffusion", "beta"), "steps": ("diffusion", "steps"),
                "replicates": ("diffusion", "replicates"), "seeds": ("diffusion", "seeds"),
                "temporal": ("diffusion", "temporal"), "weighted": ("diffusion", "weighted"),
                "seed": ("diffusion", "seed")},
    "typology": {"kmax": ("typology", "kmax"), "iters": ("typology", "iters"), "tol": ("typology", "tol"),
                 "seed": ("typology", "seed"), "restarts": ("typology", "restarts")},
    "experiment": {"seed": ("experiment", "seed")},
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forum-lens", description="MOOC discussion-forum analysis toolkit")
    parser.add_argument("--version", action="version", version=f"forum-lens {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an explicit ordered list of stages (dependencies must be listed)")
    _common(p)
    p.add_argument("--stages", default=",".join(STAGES), help="comma-separated stages (default: all)")

    for stage in ("ingest", "describe", "network", "dialogue", "plots"):
        _common(sub.add_parser(stage, help=f"run the {stage} stage and its prerequisites"))

    p = sub.add_parser("backbone", help="significance-filtered backbones")
    _common(p)
    p.add_argument("--alpha", type=float)
    p.add_argument("--method", choices=("analytic", "mc"))
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--bonferroni", action="store_true", default=None)

    p = sub.add_parser("vuln", help="attack curves and critical sets")
    _common(p)
    p.add_argument("--strategy", choices=("degree_recomputed", "betweenness_recomputed", "random"))
    p.add_argument("--epsilon", type=float)
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("diffuse", help="SI diffusion simulation")
    _common(p)
    p.add_argument("--beta", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--seeds", help="comma-separated seed learners (default: one random node per replicate)")
    p.add_argument("--temporal", action="store_true", default=None)
    p.add_argument("--weighted", action="store_true", default=None)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("typology", help="BNMF learner typology")
    _common(p)
    p.add_argument("--kmax", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--restarts", type=int)

    p = sub.add_parser("experiment", help="email-intervention design and analysis")
    _common(p)
    p.add_argument("action", nargs="?", choices=EXPERIMENT_ACTIONS, help="default: all actions")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("fixture", help="write the bundled synthetic course")
    p.add_argument("directory")
    p.add_argument("--seed", type=int, default=20140106)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "fixture":
        from .synth import write_fixture
        print(write_fixture(args.directory, args.seed))
        return 0
    try:
        cfg = load_config(args.config)
        for flag, (section, key) in OVERRIDES.get(args.command, {}).items():
            value = getattr(args, flag, None)
            if value is not None:
                cfg.set(section, key, value)
        if args.command == "run":
            stages = [s.strip() for s in args.stages.split(",") if s.strip()]
        else:
            stages = dependency_closure([args.command])
        actions = (args.action,) if args.command == "experiment" and args.action else EXPERIMENT_ACTIONS
        out = run_pipeline(cfg, stages, out=Path(args.out) if args.out else None, experiment_actions=actions,
                           manifest_only=args.manifest_only)
    except (ConfigError, PipelineError, ValueError) as exc:
        print(f"forum-lens: error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
