"""Python front end over the C++ core."""

import json

from ._rsvp import (
    accuracy,
    classification_loss,
    contrastive_loss,
    default_config,
    gen_data,
    generation_loss,
    mrr_at_k,
    preprocess,
    render_config,
    run_cli,
    tokenize,
)
from ._rsvp import run_rsvp as _run_rsvp

__all__ = [
    "accuracy",
    "classification_loss",
    "contrastive_loss",
    "default_config",
    "gen_data",
    "generation_loss",
    "mrr_at_k",
    "preprocess",
    "render_config",
    "run_cli",
    "run_rsvp",
    "tokenize",
]


def run_rsvp(records, variant="rsvp", **config):
    """Run the pipeline on a list of record dicts and return the report as a dict."""
    return json.loads(_run_rsvp(records, config, variant))
