"""ECMVAE: multimodal VAE machinery with a synthetic audio-visual segmentation benchmark."""

from ._core import (  # noqa: F401
    SynClip,
    difference_loss,
    fscore,
    gaussian_log_prob,
    gaussian_mi_oracle,
    generate_corpus,
    jsd_dynamic_prior,
    kl_closed_form,
    mc_kl,
    miou,
    moe_kl_upper,
    poe_combine,
    train_tiny,
)

__all__ = [
    "SynClip",
    "difference_loss",
    "fscore",
    "gaussian_log_prob",
    "gaussian_mi_oracle",
    "generate_corpus",
    "jsd_dynamic_prior",
    "kl_closed_form",
    "mc_kl",
    "miou",
    "moe_kl_upper",
    "poe_combine",
    "train_tiny",
]
