"""Negative-binomial VAE family: count, Dirichlet-multinomial, binary, and
conditional variants with a multinomial-VAE baseline.

Thin wrapper over the C++ core; see the per-function docstrings in
``nbvae._core``.
"""

from ._core import (
    BinaryMatrix,
    ContractError,
    DimensionError,
    EvalError,
    EvalReport,
    FeatureMatrix,
    HeldoutSplit,
    LoadError,
    ModelConfig,
    ModelParams,
    NumericDomainError,
    SparseCountMatrix,
    StepRecord,
    TrainConfig,
    TrainResult,
    bernoulli_link_loglik,
    decode,
    dirmulti_logpmf,
    encode,
    evaluate_multilabel,
    evaluate_perplexity,
    evaluate_ranking,
    feature_encode,
    kl_general,
    kl_standard,
    load_binary,
    load_bow,
    load_checkpoint,
    load_multilabel,
    minibatches,
    multinomial_loglik,
    nb_logpmf,
    perplexity,
    precision_at_r,
    predictive_rate,
    rank_metrics,
    reparam_sample,
    run_gradient_checks,
    save_bow,
    save_checkpoint,
    score_labels,
    split_heldout,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
