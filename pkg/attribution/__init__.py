# Attribution module
from .probes import (
    KEEP_CHOICES,
    NullificationResult,
    SaliencyMap,
    first_target_position,
    keep_mask,
    nullify_and_measure,
    saliency_encoder,
    saliency_projection,
    write_grid_csv,
    write_pgm,
)

__all__ = [
    "KEEP_CHOICES", "NullificationResult", "SaliencyMap", "first_target_position", "keep_mask",
    "nullify_and_measure", "saliency_encoder", "saliency_projection", "write_grid_csv", "write_pgm",
]
