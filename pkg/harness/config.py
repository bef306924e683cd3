"""
Experiment configuration: JSON files validated by pydantic models.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from model.vlm import ModelConfig
from poison.crafter import LOCATIONS, STYLE_PRESETS, PoisonConfig
from training.losses import LossWeights
from training.trainer import TrainConfig

logger = logging.getLogger(__name__)

AxisName = Literal["trigger_style", "trigger_size", "trigger_location", "poison_rate", "loss"]
LOSS_SETTINGS = {"lm": LossWeights(w_lm=1.0, w_sp=0.0), "lm+sp": LossWeights(w_lm=1.0, w_sp=1.0)}

DEFAULT_AXIS_VALUES: Dict[str, List[Union[str, int, float]]] = {
    "trigger_style": ["black", "white", "red", "noise1", "noise2", "noise3"],
    # 224px sizes 5/10/20/30 scaled to 32px images
    "trigger_size": [2, 3, 4, 6],
    "trigger_location": ["upperleft", "upperright", "bottomleft", "bottomright", "center", "random"],
    "poison_rate": [0.05, 0.1, 0.15, 0.3],
    "loss": ["lm", "lm+sp"],
}


class DatasetParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_train: int = Field(2000, ge=1)
    n_test: int = Field(200, ge=2)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    corpus_dir: Optional[str] = None


class ExperimentConfig(BaseModel):
    """Everything needed to reproduce one attack run."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    task: Literal["captioning", "vqa"] = "captioning"
    dataset: DatasetParams = DatasetParams()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    poison: PoisonConfig = PoisonConfig()
    output_dir: str = "runs/default"
    seed: int = Field(0, ge=0, lt=2 ** 64)

    def with_updates(self, **sections: Any) -> "ExperimentConfig":
        """Re-validated copy with nested sections replaced."""
        data = self.model_dump()
        for key, value in sections.items():
            data[key] = value.model_dump() if isinstance(value, BaseModel) else value
        return ExperimentConfig(**data)

    def write(self, directory) -> Path:
        path = Path(directory) / "config.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(indent=2) + "\n", encoding="utf-8")
        return path


class AblationAxis(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: AxisName
    values: List[Union[int, float, str]] = Field(min_length=1)

    @model_validator(mode="after")
    def _check_values(self):
        for value in self.values:
            if self.name == "trigger_style" and value not in STYLE_PRESETS:
                raise ValueError(f"unknown trigger style '{value}', expected one of {sorted(STYLE_PRESETS)}")
            if self.name == "trigger_location" and value not in LOCATIONS:
                raise ValueError(f"unknown trigger location '{value}'")
            if self.name == "trigger_size" and (not isinstance(value, int) or value < 1):
                raise ValueError(f"trigger size must be a positive integer, got {value!r}")
            if self.name == "poison_rate" and (isinstance(value, str) or not 0.0 <= value <= 1.0):
                raise ValueError(f"poison rate must be within [0, 1], got {value!r}")
            if self.name == "loss" and value not in LOSS_SETTINGS:
                raise ValueError(f"loss setting must be one of {sorted(LOSS_SETTINGS)}, got {value!r}")
        return self

    @classmethod
    def parse(cls, name: str, raw: Optional[str] = None) -> "AblationAxis":
        """Build an axis from a comma-separated CLI value list (axis defaults when omitted)."""
        if not raw:
            return cls(name=name, values=DEFAULT_AXIS_VALUES.get(name, []))
        items = [item.strip() for item in raw.split(",") if item.strip()]
        if name == "trigger_size":
            values: List[Union[int, float, str]] = [int(item) for item in items]
        elif name == "poison_rate":
            values = [float(item) for item in items]
        else:
            values = items
        return cls(name=name, values=values)

    def apply(self, config: ExperimentConfig, value) -> ExperimentConfig:
        """Config for one sweep point, written under ``<output_dir>/<axis>/<value>``."""
        poison, train = config.poison, config.train
        trigger = poison.trigger
        if self.name == "trigger_style":
            trigger = trigger.model_copy(update={"style": STYLE_PRESETS[value]})
        elif self.name == "trigger_size":
            trigger = trigger.model_copy(update={"size": value})
        elif self.name == "trigger_location":
            trigger = trigger.model_copy(update={"location": value})
        elif self.name == "poison_rate":
            poison = poison.model_copy(update={"rate": value})
        else:
            train = train.model_copy(update={"loss_weights": LOSS_SETTINGS[value]})
        poison = poison.model_copy(update={"trigger": trigger})

        output_dir = str(Path(config.output_dir) / self.name / str(value).replace("+", "_"))
        return config.with_updates(poison=poison, train=train, output_dir=output_dir)


def load_experiment_config(path=None, output_dir_override: Optional[str] = None) -> ExperimentConfig:
    """
    Load and validate an experiment config.

    Args:
        path: JSON file; None gives the defaults
        output_dir_override: replaces ``output_dir`` (TROJLAB_OUTPUT_DIR)

    Raises:
        FileNotFoundError: config file missing
        ValueError: invalid JSON or failed validation (pydantic.ValidationError)
    """
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}: invalid JSON ({e.msg})") from None
        if not isinstance(data, dict):
            raise ValueError(f"{path}: expected a JSON object")
    if output_dir_override:
        data["output_dir"] = output_dir_override

    config = ExperimentConfig(**data)
    logger.debug(f"Loaded experiment config (task={config.task}, output_dir={config.output_dir})")
    return config
