"""Multi-scale teacher-student anomaly localization."""

from ._featimit import (
    FeatimitError,
    ScaleBank,
    Teacher,
    aupro,
    auroc,
    connected_components,
    fit,
    generate_synthetic_fixture,
    init_student_bank,
    layer_loss,
    layer_loss_gradient,
    load_bank,
    load_image,
    load_teacher,
    make_toy_teacher,
    multi_scale_score,
    prune_top_k,
    resize_bilinear,
    run_cli,
    save_bank,
    search_weights,
    softmax_weights,
)

__all__ = [
    "FeatimitError",
    "ScaleBank",
    "Teacher",
    "aupro",
    "auroc",
    "connected_components",
    "fit",
    "generate_synthetic_fixture",
    "init_student_bank",
    "layer_loss",
    "layer_loss_gradient",
    "load_bank",
    "load_image",
    "load_teacher",
    "make_toy_teacher",
    "multi_scale_score",
    "prune_top_k",
    "resize_bilinear",
    "run_cli",
    "save_bank",
    "search_weights",
    "softmax_weights",
]
