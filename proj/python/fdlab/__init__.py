"""Fraternal dropout language-model lab (Python front end to the C++ core)."""

import json

from ._fdlab import (
    FormatError,
    evaluate,
    r_fd,
    render_config,
    sample_mask,
    tiny_expectations,
    train,
    verify_json,
)

__all__ = [
    "FormatError",
    "evaluate",
    "r_fd",
    "render_config",
    "sample_mask",
    "tiny_expectations",
    "train",
    "verify",
]


def verify(bits=12, trials=100, seed=1, mc_samples=100000):
    """Run the enumeration checks and return the report as a dict."""
    return json.loads(verify_json(bits=bits, trials=trials, seed=seed, mc_samples=mc_samples))
