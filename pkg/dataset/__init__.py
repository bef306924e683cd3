# Dataset module
from .corpus import (
    BOS_ID,
    CAPTION_PROMPT,
    DEFAULT_TARGET_TEXTS,
    EOS_ID,
    PAD_ID,
    QaPair,
    Sample,
    Vocab,
    generate_corpus,
    load_corpus,
    save_corpus,
    tokenize,
    vqa_prompt,
)
from .scenes import Scene, SceneObject, caption_of, cell_center, qa_of, random_scene, render

__all__ = [
    "BOS_ID", "CAPTION_PROMPT", "DEFAULT_TARGET_TEXTS", "EOS_ID", "PAD_ID", "QaPair", "Sample",
    "Vocab", "generate_corpus", "load_corpus", "save_corpus", "tokenize", "vqa_prompt",
    "Scene", "SceneObject", "caption_of", "cell_center", "qa_of", "random_scene", "render",
]
