"""Latent augmentation from domain descriptions over joint image/text
embedding spaces: train a feature-space augmenter from prompts (stage 1),
probe on original + augmented embeddings (stage 2), evaluate extended-domain
accuracy and augmentation quality."""

from .augnet import (
    AugNetParams,
    AugTrainConfig,
    class_consistency_loss,
    domain_alignment_loss,
    forward,
    lads_grad,
    lads_loss,
    load_augnet,
    save_augnet,
    train_augnet,
)
from .embedding_store import (
    EmbeddingBundle,
    PromptBank,
    cosine_similarity,
    l2_normalize,
    load_bank,
    load_bundle,
    save_bank,
    save_bundle,
)
from .evaluation import (
    EvalReport,
    accuracy,
    class_balanced_accuracy,
    evaluate_pipeline,
    extended_accuracy,
    nn_scores,
    per_class_accuracy,
    per_domain_accuracy,
)
from .probe import (
    LinearProbe,
    ProbeConfig,
    assemble_training_set,
    load_probe,
    predict,
    save_probe,
    train_probe,
    wise_ensemble,
)
from .synthworld import WorldConfig, generate_world, world_summary
from .zeroshot import ZeroShotHead, assign_domains, build_head, zero_shot_predict

__version__ = "0.1.0"
