import argparse
import logging
import os
import sys

import datagen
from pipeline import Pipeline, perturb_dataset_file
from random_generator import RandomGenerator
from report import report
from run_config import RunConfig, load_config
from ubmf_exceptions import StageFailure, UbmfException

UBMF_LOG_LEVEL = os.environ.get("UBMF_LOG_LEVEL", "INFO")

logger = logging.getLogger(__name__)

STAGE_COMMANDS = {
    "train-ssl": "ssl",
    "train-filter": "filter",
    "fit-prior": "prior",
    "evaluate": "evaluate",
    "run": "evaluate",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ubmf", description="Few-shot fault diagnosis pipeline")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-data", help="generate a synthetic dataset file")
    gen.add_argument("--manifest", default=None)
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=None)

    perturb = commands.add_parser("perturb", help="perturb every sample of a dataset file")
    perturb.add_argument("--data", required=True)
    perturb.add_argument("--specs", required=True)
    perturb.add_argument("--out", required=True)
    perturb.add_argument("--seed", type=int, required=True)
    perturb.add_argument("--config", default=None)

    for name in STAGE_COMMANDS:
        stage = commands.add_parser(name, help=f"run the pipeline through {STAGE_COMMANDS[name]}")
        stage.add_argument("--config", default=None)
        stage.add_argument("--resume", action="store_true")

    show = commands.add_parser("report", help="print the summary of a finished run")
    show.add_argument("run_dir")
    return parser


def run_stage(command: str, config: RunConfig, resume: bool):
    pipeline = Pipeline(config, resume=resume or command != "run")
    stage = STAGE_COMMANDS[command]
    if command == "run":
        return pipeline.run()
    pipeline.run_dir.mkdir(parents=True, exist_ok=True)
    return getattr(pipeline, stage)()


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=UBMF_LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )
    args, overrides = build_parser().parse_known_args(argv)
    try:
        if args.command == "gen-data":
            manifest = datagen.load_manifest(args.manifest) if args.manifest else datagen.default_manifest()
            seed = manifest.seed if args.seed is None else args.seed
            datagen.save(datagen.generate(manifest, RandomGenerator(seed)), args.out)
        elif args.command == "perturb":
            config = load_config(args.config, overrides) if args.config or overrides else None
            perturb_dataset_file(
                args.data, args.specs, args.out, args.seed, config.encoder if config else None
            )
        elif args.command == "report":
            report(args.run_dir)
        else:
            run_stage(args.command, load_config(args.config, overrides), args.resume)
    except StageFailure as e:
        print(f"{args.command}: stage {e.stage} failed: {e}", file=sys.stderr)
        return 1
    except UbmfException as e:
        print(f"{args.command}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
