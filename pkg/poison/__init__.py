# Poison module
from .crafter import (
    LOCATIONS,
    POISONED_SUFFIX,
    STYLE_PRESETS,
    GaussianStyle,
    PoisonConfig,
    SolidStyle,
    TargetText,
    TriggerSpec,
    build_training_mixture,
    insert_target_at,
    insert_target_text,
    make_pattern,
    poison_count,
    poison_sample,
    resolve_location,
    stamp_test_split,
    stamp_trigger,
    stamp_trigger_at,
    trigger_patches,
)

__all__ = [
    "LOCATIONS", "POISONED_SUFFIX", "STYLE_PRESETS", "GaussianStyle", "PoisonConfig",
    "SolidStyle", "TargetText", "TriggerSpec", "build_training_mixture", "insert_target_at",
    "insert_target_text", "make_pattern", "poison_count", "poison_sample", "resolve_location",
    "stamp_test_split", "stamp_trigger", "stamp_trigger_at", "trigger_patches",
]
