"""
Backdoor Lab

Desk-scale backdoor attack on a miniature vision-language model:
- gen-data: synthetic shape-scene corpus (images, captions, QA pairs)
- attack:   pretrain -> poison -> adaptor-only backdoor training -> evaluation
- ablate:   sweep trigger style / size / location, poison rate or loss
- probe:    saliency maps and image-token nullification on a checkpoint
- eval:     evaluate any saved checkpoint on the clean and triggered splits
"""

import argparse
import asyncio
import csv
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from dataset.corpus import VOCAB_NAME, generate_corpus, save_corpus
from errors import CorpusIOError, PipelineError
from harness.config import DEFAULT_AXIS_VALUES, AblationAxis, load_experiment_config
from harness.pipeline import run_ablation, run_attack, run_eval, run_probe
from attribution.probes import KEEP_CHOICES
from training.losses import LossWeights

load_dotenv()

# Configure logging - respect LOG_LEVEL env
log_level = os.getenv("LOG_LEVEL", "INFO").upper()
logging.basicConfig(
    level=getattr(logging, log_level, logging.INFO),
    format="%(levelname)s - %(message)s" if log_level == "WARNING" else "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)
logger = logging.getLogger(__name__)

EXIT_OK, EXIT_PIPELINE, EXIT_USAGE = 0, 1, 2


def positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return number


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="backdoor-lab", description=__doc__.strip().splitlines()[0])
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-data", help="generate the synthetic corpus")
    gen.add_argument("--n-train", type=positive_int, default=2000)
    gen.add_argument("--n-test", type=positive_int, default=200)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", default="data/corpus")

    attack = commands.add_parser("attack", help="run the end-to-end attack")
    attack.add_argument("--config", help="experiment config JSON (defaults when omitted)")
    attack.add_argument("--lm-only", action="store_true", help="backdoor with the LM loss only (w_sp=0)")

    ablate = commands.add_parser("ablate", help="sweep one ablation axis")
    ablate.add_argument("--config")
    ablate.add_argument("--axis", required=True, choices=sorted(DEFAULT_AXIS_VALUES))
    ablate.add_argument("--values", help="comma-separated values (axis defaults when omitted)")
    ablate.add_argument("--workers", type=positive_int)

    probe = commands.add_parser("probe", help="saliency and nullification probes")
    probe.add_argument("--config")
    probe.add_argument("--checkpoint", required=True)
    probe.add_argument("--saliency", type=int, default=0, metavar="N", help="maps for the first N test images")
    probe.add_argument("--nullify", action="append", choices=KEEP_CHOICES + ("trigger",), default=[],
                       help="keep set; 'trigger' is short for trigger_patches")
    probe.add_argument("--target-token", action="store_true", help="probe the first target-text token")

    evaluate = commands.add_parser("eval", help="evaluate a checkpoint")
    evaluate.add_argument("--config")
    evaluate.add_argument("--checkpoint", required=True)
    return parser


def cmd_gen_data(args: argparse.Namespace) -> int:
    train, test, vocab = generate_corpus(args.n_train, args.n_test, args.seed)
    out = Path(args.out)
    save_corpus(train, out / "train")
    save_corpus(test, out / "test")
    vocab.save(out / VOCAB_NAME)
    print(f"✅ SUCCESS: {len(train)} train / {len(test)} test samples, {len(vocab)} tokens -> {out}")
    return EXIT_OK


def cmd_attack(args: argparse.Namespace, config) -> int:
    if args.lm_only:
        config = config.with_updates(train=config.train.model_copy(update={"loss_weights": LossWeights(w_sp=0.0)}))
    run = run_attack(config)
    poisoned = run.report("backdoor", "poisoned")
    print(f"✅ SUCCESS: ASR={poisoned.asr:.3f}, poisoned B@4={poisoned.b4:.2f} -> {run.run_dir}")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace, config) -> int:
    axis = AblationAxis.parse(args.axis, args.values)
    path = asyncio.run(run_ablation(config, axis, args.workers))
    with open(path, newline="", encoding="utf-8") as f:
        failed = [row["value"] for row in csv.DictReader(f) if row["status"] != "ok"]
    if failed:
        print(f"⚠️ WARNING: {len(failed)} run(s) failed: {', '.join(failed)}")
    print(f"✅ SUCCESS: ablation over {axis.name} -> {path}")
    return EXIT_OK


def cmd_probe(args: argparse.Namespace, config) -> int:
    keeps = ["trigger_patches" if k == "trigger" else k for k in args.nullify]
    summary = run_probe(config, Path(args.checkpoint), args.saliency, keeps, args.target_token)
    for keep, rate in summary["nullification"].items():
        print(f"   nullify keep={keep}: ASR={rate:.3f}")
    print(f"✅ SUCCESS: {len(summary['saliency_files'])} saliency maps written")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, config) -> int:
    for report in run_eval(config, Path(args.checkpoint)):
        print(f"   {report.split}: B@4={report.b4:.2f} CIDEr={report.cider:.2f} ASR={report.asr}")
    print("✅ SUCCESS: evaluation written")
    return EXIT_OK


COMMANDS = {"attack": cmd_attack, "ablate": cmd_ablate, "probe": cmd_probe, "eval": cmd_eval}


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK

    if args.command == "gen-data":
        try:
            return cmd_gen_data(args)
        except CorpusIOError as e:
            print(f"❌ FAILED: {e}")
            return EXIT_PIPELINE
        except ValueError as e:
            print(f"❌ ERROR: invalid arguments: {e}")
            return EXIT_USAGE

    try:
        config = load_experiment_config(args.config, os.getenv("TROJLAB_OUTPUT_DIR"))
    except (FileNotFoundError, ValueError) as e:
        print(f"❌ ERROR: invalid configuration: {e}")
        return EXIT_USAGE

    try:
        return COMMANDS[args.command](args, config)
    except PipelineError as e:
        print(f"❌ FAILED: {e}")
        return EXIT_PIPELINE
    except ValueError as e:
        print(f"❌ ERROR: invalid arguments: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
