"""
End-to-end experiment orchestration: attack runs, ablation sweeps, probes and
checkpoint evaluation. Every step runs inside a named stage so failures surface
as PipelineError(stage).
"""

import asyncio
import contextlib
import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

from attribution.probes import (
    first_target_position,
    nullify_and_measure,
    saliency_encoder,
    saliency_projection,
    write_grid_csv,
    write_pgm,
)
from dataset.corpus import DEFAULT_TARGET_TEXTS, VOCAB_NAME, Sample, Vocab, generate_corpus, load_corpus
from errors import PipelineError
from metrics.evaluator import REPORT_COLUMNS, EvalReport, evaluate, score_split, write_reports
from model.checkpoint import load_checkpoint, save_checkpoint
from model.vlm import TinyVlm
from poison.crafter import build_training_mixture, stamp_test_split
from tensor_core import Rng
from training.losses import LossBreakdown, sample_prompt
from training.trainer import PRETRAIN_CHECKPOINT, train_backdoor, train_pretrain, write_loss_curve

from .config import AblationAxis, ExperimentConfig
from .report import render_summary

logger = logging.getLogger(__name__)

ABLATION_COLUMNS = ["axis", "value", "status", "ASR", "B4", "METEOR", "ROUGE_L", "CIDEr", "VQA", "clean_B4", "error"]
CHECKPOINT_DIR = "checkpoints"


@contextlib.contextmanager
def stage(name: str) -> Iterator[None]:
    logger.info(f"--- stage: {name} ---")
    try:
        yield
    except PipelineError:
        raise
    except Exception as e:
        logger.error(f"Stage '{name}' failed: {e}")
        raise PipelineError(name, e) from e


@dataclass
class AttackRun:
    run_dir: Path
    reports: List[EvalReport] = field(default_factory=list)
    pretrain_curve: List[LossBreakdown] = field(default_factory=list)
    backdoor_curve: List[LossBreakdown] = field(default_factory=list)
    checkpoints: List[Path] = field(default_factory=list)

    def report(self, model: str, split: str) -> Optional[EvalReport]:
        return next((r for r in self.reports if r.model == model and r.split == split), None)


def load_or_generate_corpus(config: ExperimentConfig) -> Tuple[List[Sample], List[Sample], Vocab]:
    """Read ``<corpus_dir>/{train,test}`` when configured, else generate in memory."""
    params = config.dataset
    if params.corpus_dir:
        root = Path(params.corpus_dir)
        return load_corpus(root / "train"), load_corpus(root / "test"), Vocab.load(root / VOCAB_NAME)
    extra = list(DEFAULT_TARGET_TEXTS.values()) + [config.poison.target.text]
    return generate_corpus(params.n_train, params.n_test, params.seed, extra_texts=extra)


def resolve_model_config(config: ExperimentConfig, vocab: Vocab) -> ExperimentConfig:
    """Shrink the output layer to the corpus vocabulary."""
    if len(vocab) > config.model.vocab_size:
        raise ValueError(f"vocabulary of {len(vocab)} tokens exceeds model vocab_size={config.model.vocab_size}")
    model = config.model.model_copy(update={"vocab_size": len(vocab)})
    return config.with_updates(model=model)


def build_model(config: ExperimentConfig) -> TinyVlm:
    return TinyVlm(config.model, Rng(config.seed).split("model"))


def pretrain_model(config: ExperimentConfig, train: Sequence[Sample], vocab: Vocab,
                   checkpoint_dir: Path) -> Tuple[TinyVlm, List[LossBreakdown]]:
    model = build_model(config)
    result = train_pretrain(model, train, vocab, config.train, config.task, checkpoint_dir)
    return model, result.curve


def run_attack(config: ExperimentConfig, pretrained: Optional[Path] = None) -> AttackRun:
    """
    Pretrain (or load) -> clean control eval -> poison -> backdoor -> evaluate -> report.

    Args:
        config: experiment config
        pretrained: optional pretrain checkpoint shared between sweep runs
    """
    run = AttackRun(run_dir=Path(config.output_dir))
    logger.info("=" * 60)
    logger.info(f"Starting attack run in {run.run_dir} - {datetime.now().strftime('%Y-%m-%d %H:%M')}")
    logger.info("=" * 60)

    with stage("corpus"):
        train, test, vocab = load_or_generate_corpus(config)
        config = resolve_model_config(config, vocab)
        config.write(run.run_dir)

    checkpoint_dir = run.run_dir / CHECKPOINT_DIR
    with stage("pretrain"):
        if pretrained is not None:
            model = load_checkpoint(pretrained)
        else:
            model, run.pretrain_curve = pretrain_model(config, train, vocab, checkpoint_dir)
            run.checkpoints.append(checkpoint_dir / PRETRAIN_CHECKPOINT)

    with stage("control-eval"):
        control, _ = evaluate(model, test, vocab, config.task, poison=None, label="clean")
        run.reports.append(control)

    with stage("poison"):
        mixture = build_training_mixture(train, config.poison)

    with stage("backdoor"):
        result = train_backdoor(model, mixture, vocab, config.train, config.task, checkpoint_dir)
        run.backdoor_curve = result.curve
        run.checkpoints.extend(result.checkpoints)
        if not result.checkpoints:
            run.checkpoints.append(save_checkpoint(model, checkpoint_dir / "backdoor-final.ckpt"))

    with stage("evaluate"):
        clean, poisoned = evaluate(model, test, vocab, config.task, poison=config.poison, label="backdoor")
        run.reports.extend([clean, poisoned])

    with stage("report"):
        write_reports(run.run_dir, run.reports)
        write_loss_curve(run.run_dir / "losses.csv", run.backdoor_curve)
        if run.pretrain_curve:
            write_loss_curve(run.run_dir / "pretrain_losses.csv", run.pretrain_curve)
        render_summary(run.run_dir, config, run.reports, run.pretrain_curve, run.backdoor_curve)

    return run


def _attack_worker(config_json: str, pretrained: str) -> Dict[str, str]:
    """Process-pool entry point: one sweep point, returns its ablation row."""
    config = ExperimentConfig.model_validate_json(config_json)
    try:
        run = run_attack(config, Path(pretrained))
    except PipelineError as e:
        # custom exceptions do not survive the trip back through the pool
        return {"status": "error", "error": str(e)}
    poisoned = run.report("backdoor", "poisoned")
    clean = run.report("backdoor", "clean")
    row = dict(zip(REPORT_COLUMNS, poisoned.to_row()))
    return {
        "status": "ok",
        "ASR": row["ASR"], "B4": row["B4"], "METEOR": row["METEOR"], "ROUGE_L": row["ROUGE_L"],
        "CIDEr": row["CIDEr"], "VQA": row["VQA"], "clean_B4": f"{clean.b4:.4f}", "error": "",
    }


async def run_ablation(config: ExperimentConfig, axis: AblationAxis, workers: Optional[int] = None) -> Path:
    """
    One attack run per axis value, all sharing a single pretrained checkpoint.
    Failed runs are recorded with status "error".

    Returns:
        Path of the consolidated ``ablation.csv``
    """
    base = Path(config.output_dir)
    with stage("ablation-pretrain"):
        train, _, vocab = load_or_generate_corpus(config)
        config = resolve_model_config(config, vocab)
        _, curve = pretrain_model(config, train, vocab, base)
        write_loss_curve(base / "pretrain_losses.csv", curve)
    pretrained = str(base / PRETRAIN_CHECKPOINT)

    runs = [axis.apply(config, value) for value in axis.values]
    logger.info(f"Sweeping {axis.name} over {axis.values} ({len(runs)} runs)")

    loop = asyncio.get_running_loop()
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = await asyncio.gather(
            *(loop.run_in_executor(pool, _attack_worker, run.model_dump_json(), pretrained) for run in runs),
            return_exceptions=True,
        )

    rows = []
    for value, result in zip(axis.values, results):
        if isinstance(result, Exception):
            logger.error(f"Ablation run {axis.name}={value} failed: {result}")
            result = {"status": "error", "error": str(result)}
        rows.append({"axis": axis.name, "value": str(value), **result})

    path = base / "ablation.csv"
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=ABLATION_COLUMNS, restval="", lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    failed = sum(r["status"] != "ok" for r in rows)
    logger.info(f"Ablation finished: {len(rows) - failed} ok, {failed} failed -> {path}")
    return path


def append_reports(directory, reports: Sequence[EvalReport]) -> Path:
    """Append rows to an existing report.csv / report.json (created if absent)."""
    root = Path(directory)
    csv_path, json_path = root / "report.csv", root / "report.json"
    if not csv_path.exists():
        return write_reports(root, reports)[0]

    with open(csv_path, "a", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        for report in reports:
            writer.writerow(report.to_row())
    existing = json.loads(json_path.read_text(encoding="utf-8")) if json_path.exists() else []
    existing.extend(r.to_record() for r in reports)
    json_path.write_text(json.dumps(existing, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return csv_path


def _probe_position(model: TinyVlm, image, prompt: List[int], target_ids: List[int],
                    on_target: bool) -> Tuple[int, Optional[int]]:
    """First target-token position when requested and present, else position 0 with argmax."""
    if on_target:
        position = first_target_position(model.generate(image, prompt), target_ids)
        if position is not None:
            return position, target_ids[0]
    return 0, None


def run_probe(
    config: ExperimentConfig,
    checkpoint: Path,
    saliency: int = 0,
    nullify: Sequence[str] = (),
    on_target: bool = False,
) -> Dict[str, object]:
    """
    Saliency maps for the first ``saliency`` test images (triggered, plus the
    clean image for comparison) and nullification rows appended to report.csv.
    """
    run_dir = Path(config.output_dir)
    summary: Dict[str, object] = {"saliency_files": [], "nullification": {}}

    with stage("probe-load"):
        _, test, vocab = load_or_generate_corpus(config)
        model = load_checkpoint(checkpoint)
        triggered, anchors = stamp_test_split(test, config.poison)
        target_ids = vocab.encode(config.poison.target.tokens)

    if saliency:
        with stage("saliency"):
            probes = run_dir / "probes"
            for clean_sample, poisoned_sample in list(zip(test, triggered))[:saliency]:
                # triggered maps in saliency/, same-image clean maps for comparison in saliency-clean/
                for out, sample in ((probes / "saliency", poisoned_sample), (probes / "saliency-clean", clean_sample)):
                    prompt = vocab.encode(sample_prompt(sample, config.task))
                    if not model.generate(sample.image, prompt):
                        logger.warning(f"{sample.id}: empty generation, no saliency map")
                        continue
                    position, token = _probe_position(model, sample.image, prompt, target_ids, on_target)
                    encoder_map = saliency_encoder(model, sample.image, prompt, position, token)
                    projection_map = saliency_projection(model, sample.image, prompt, position, token)
                    stem = clean_sample.id
                    pgm = write_pgm(out / f"{stem}.pgm", encoder_map, scale=model.config.patch)
                    if sample.poisoned:
                        summary["saliency_files"].append(pgm)
                    write_grid_csv(out / f"{stem}.csv", encoder_map)
                    write_grid_csv(out / f"{stem}-projection.csv", projection_map)

    if nullify:
        with stage("nullify"):
            rows = []
            for keep in nullify:
                result = nullify_and_measure(
                    model, triggered, anchors, vocab, config.poison.target, keep,
                    config.poison.trigger.size, config.task,
                )
                summary["nullification"][keep] = result.asr
                rows.append(score_split(
                    result.outputs, triggered, config.task, "nullified", f"backdoor/keep={keep}",
                    config.poison.target, strip=True,
                ))
            append_reports(run_dir, rows)

    return summary


def run_eval(config: ExperimentConfig, checkpoint: Path) -> List[EvalReport]:
    """Evaluate any saved checkpoint on both splits into ``<output_dir>/eval-<name>/``."""
    with stage("eval"):
        _, test, vocab = load_or_generate_corpus(config)
        model = load_checkpoint(checkpoint)
        clean, poisoned = evaluate(model, test, vocab, config.task, poison=config.poison, label=Path(checkpoint).stem)
        reports = [clean, poisoned]
        write_reports(Path(config.output_dir) / f"eval-{Path(checkpoint).stem}", reports)
    return reports
