"""Python bindings for the ulns unlearning toolkit."""

from ._ulns import (
    UlnsError,
    Model,
    make_mlp,
    generate,
    train,
    unlearn,
    evaluate,
    extract_features,
    simplex_etf,
    class_means,
    nc3_per_class,
    ncc_predict,
    certify_last_layer,
    run_cli,
    METHODS,
)

__all__ = [
    "UlnsError",
    "Model",
    "make_mlp",
    "generate",
    "train",
    "unlearn",
    "evaluate",
    "extract_features",
    "simplex_etf",
    "class_means",
    "nc3_per_class",
    "ncc_predict",
    "certify_last_layer",
    "run_cli",
    "METHODS",
]
