"""Command-line entry point: ``sparsegeom {generate,stability,training,geometry}``."""

import argparse
import logging
import sys
import time
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load, validate
from .experiments import (
    build_dataset,
    family_seed,
    json_text,
    manifest,
    run_geometry,
    run_stability,
    run_training,
    write_dataset,
    write_geometry,
    write_stability,
    write_training,
)
from .graph import GenerationError
from .numerics import NumericalError
from .seeding import derive_seed
from .train import TrainingDivergence

__all__ = ["main", "derive_seed"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_GENERATION = 3
EXIT_CERTIFICATE = 4
EXIT_DIVERGENCE = 5

log = logging.getLogger("sparsegeom")


class _Timer:
    """Wall-clock per stage, written next to the outputs rather than into them."""

    def __init__(self):
        self.stages = []

    def __call__(self, name, fn, *args):
        start = time.perf_counter()
        result = fn(*args)
        self.stages.append((name, time.perf_counter() - start))
        log.info("%s finished in %.2fs", name, self.stages[-1][1])
        return result

    def write(self, out: Path):
        out.mkdir(parents=True, exist_ok=True)
        (out / "timings.log").write_text("".join(f"{n}\t{s:.3f}\n" for n, s in self.stages), encoding="utf-8")


def _cmd_generate(cfg, out, timer, strict):
    names = []
    for family in cfg.dataset.families:
        ds = timer(f"generate:{family}", build_dataset, cfg, family)
        names += write_dataset(ds, out)
    seeds = {f: {"dataset_seed": family_seed(cfg.master_seed, f)} for f in cfg.dataset.families}
    (out / "manifest.json").write_text(json_text(manifest(cfg, "generate", seeds, names)), encoding="utf-8")
    return EXIT_OK


def _cmd_stability(cfg, out, timer, strict):
    result = timer("stability", run_stability, cfg)
    write_stability(result, cfg, out)
    failures = result.certificate_failures()
    for row in failures:
        log.warning(
            "certificate failure: %s level %d draw %d", row["dataset"], row["level_index"], row["draw_index"]
        )
    return EXIT_CERTIFICATE if strict and failures else EXIT_OK


def _cmd_training(cfg, out, timer, strict):
    result = timer("training", run_training, cfg)
    write_training(result, cfg, out)
    return EXIT_OK


def _cmd_geometry(cfg, out, timer, strict):
    result = timer("geometry", run_geometry, cfg)
    write_geometry(result, cfg, out)
    bad = [
        r for r in result.rows if not all(g.mean_pass and g.cov_pass for g in r["_class_gaps"])
    ]
    for row in bad:
        log.warning("class-statistic bound failure: %s level %d draw %d", row["dataset"], row["level_index"], row["draw_index"])
    for s in result.summary:
        log.info("%s: spearman(rel_gram_err, knn_overlap) = %.3f over %d draws", s["dataset"], s["spearman_gram_knn"], s["points"])
    return EXIT_CERTIFICATE if strict and bad else EXIT_OK


COMMANDS = {
    "generate": _cmd_generate,
    "stability": _cmd_stability,
    "training": _cmd_training,
    "geometry": _cmd_geometry,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparsegeom", description="Sparsification stability experiments on synthetic graphs.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="key = value config file (defaults apply otherwise)")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--seed", type=int, help="master seed, overrides the config")
        p.add_argument("--strict", action="store_true", help="exit nonzero on any certificate failure")
        p.add_argument("--jobs", type=int, help="parallel workers across draws")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg.master_seed = args.seed
        if args.jobs is not None:
            cfg.jobs = args.jobs
        validate(cfg)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    timer = _Timer()
    args.out.mkdir(parents=True, exist_ok=True)
    try:
        code = COMMANDS[args.command](cfg, args.out, timer, args.strict)
    except GenerationError as exc:
        print(f"generation failed: {exc}", file=sys.stderr)
        return EXIT_GENERATION
    except (TrainingDivergence, NumericalError) as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    timer.write(args.out)
    return code


if __name__ == "__main__":
    sys.exit(main())
