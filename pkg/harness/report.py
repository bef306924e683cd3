"""
Human-readable run summary rendered from templates/summary.md.j2.
"""

import logging
from pathlib import Path
from typing import Optional, Sequence

from jinja2 import Environment, FileSystemLoader, StrictUndefined

from metrics.evaluator import EvalReport
from training.losses import LossBreakdown

from .config import ExperimentConfig

logger = logging.getLogger(__name__)

# Project root for loading templates
PROJECT_ROOT = Path(__file__).parent.parent
TEMPLATE_NAME = "summary.md.j2"


def _environment() -> Environment:
    env = Environment(
        loader=FileSystemLoader(str(PROJECT_ROOT / "templates")),
        undefined=StrictUndefined,
        trim_blocks=True,
        lstrip_blocks=True,
        keep_trailing_newline=True,
    )
    env.filters["metric"] = lambda value: "-" if value is None else f"{value:.2f}"
    env.filters["rate"] = lambda value: "-" if value is None else f"{value:.3f}"
    return env


def render_summary(
    run_dir,
    config: ExperimentConfig,
    reports: Sequence[EvalReport],
    pretrain_curve: Sequence[LossBreakdown] = (),
    backdoor_curve: Sequence[LossBreakdown] = (),
    title: Optional[str] = None,
) -> Path:
    """Write ``summary.md`` into ``run_dir``."""
    template = _environment().get_template(TEMPLATE_NAME)
    text = template.render(
        title=title or f"Backdoor run: {config.task}, target '{config.poison.target.text}'",
        config=config,
        reports=list(reports),
        pretrain_curve=list(pretrain_curve),
        backdoor_curve=list(backdoor_curve),
    )
    path = Path(run_dir) / "summary.md"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    logger.info(f"Summary written to {path}")
    return path
