"""Python bindings for the carlab C++ core."""

import json as _json

from . import _carlab
from ._carlab import (
    CarError,
    class_weights,
    complexity_term,
    hard_margin_confusion,
    l1_operator_norm,
    longtail_counts,
    main,
    power_iteration,
    psi_identity_network,
    soft_confusion,
    spectral_norm_grad,
    svd_oracle,
    synth,
)


def evaluate_predictions(predictions, labels, k, lambdas):
    return _json.loads(_carlab.evaluate_predictions(list(predictions), list(labels), k, list(lambdas)))


def evaluate_model(checkpoint, features, labels, k, r0=0.2):
    return _json.loads(_carlab.evaluate_model(str(checkpoint), features, list(labels), k, r0))


def run_experiment(spec):
    """Trains and evaluates from a spec dict; returns the summary dict."""
    return _json.loads(_carlab.run_experiment(_json.dumps(spec)))


__all__ = [
    "CarError",
    "class_weights",
    "complexity_term",
    "evaluate_model",
    "evaluate_predictions",
    "hard_margin_confusion",
    "l1_operator_norm",
    "longtail_counts",
    "main",
    "power_iteration",
    "psi_identity_network",
    "run_experiment",
    "soft_confusion",
    "spectral_norm_grad",
    "svd_oracle",
    "synth",
]
