# Training module
from .losses import (
    EncodedBatch,
    LossBreakdown,
    LossWeights,
    encode_batch,
    lm_loss,
    lm_terms,
    sample_output,
    sample_prompt,
    sp_loss,
    sp_terms,
    total_loss,
)
from .trainer import (
    LOSS_COLUMNS,
    PRETRAIN_CHECKPOINT,
    TrainConfig,
    TrainResult,
    train_backdoor,
    train_pretrain,
    write_loss_curve,
)

__all__ = [
    "EncodedBatch", "LossBreakdown", "LossWeights", "encode_batch", "lm_loss", "lm_terms",
    "sample_output", "sample_prompt", "sp_loss", "sp_terms", "total_loss",
    "LOSS_COLUMNS", "PRETRAIN_CHECKPOINT", "TrainConfig", "TrainResult", "train_backdoor",
    "train_pretrain", "write_loss_curve",
]
