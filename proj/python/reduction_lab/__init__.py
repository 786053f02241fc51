"""Energy-driven state reduction: closed-form filter, integrator and ensemble checks."""

import json

from ._core import (
    LabError,
    closed_form_state,
    reference_config,
    verify,
)
from . import _core

__all__ = [
    "LabError",
    "closed_form_state",
    "ensemble",
    "normalize_config",
    "reference_config",
    "simulate",
    "verify",
]


def _text(config):
    return config if isinstance(config, str) else json.dumps(config)


def normalize_config(config):
    """Validated config with every default filled in, as a dict."""
    return json.loads(_core.normalize_config(_text(config)))


def simulate(config, seed=None, mode=None):
    """One trajectory per mode, keyed by mode name, as dicts of numpy arrays."""
    return _core.simulate(_text(config), seed=seed, mode=mode)


def ensemble(config, seed=None, mode=None, paths=None, checks=None):
    """Run an ensemble; returns the summary as a dict."""
    return json.loads(_core.ensemble_summary(_text(config), seed=seed, mode=mode, paths=paths, checks=checks))
