"""Python bindings for the knowrl C++ core."""

import json as _json

try:
    from . import _knowrl as _native
except ImportError:  # built in-tree and placed on PYTHONPATH directly
    import _knowrl as _native

KnowrlError = _native.KnowrlError
ManifestError = _native.ManifestError

compute_consensus = _native.compute_consensus
parse_verdict = _native.parse_verdict
rouge_l = _native.rouge_l
tokenize = _native.tokenize
perplexity = _native.perplexity
keyword_hit = _native.keyword_hit
precision_recall_f1 = _native.precision_recall_f1
format_delta = _native.format_delta
default_config_toml = _native.default_config_toml
validate_config_toml = _native.validate_config_toml


def init_run(config, run_dir, run_id=""):
    """Scaffold a run directory from a TOML config and return its manifest."""
    return _json.loads(_native.init_run(str(config), str(run_dir), run_id))


def run(run_dir, stop_after=None):
    """Start or resume a run and return the updated manifest."""
    return _json.loads(_native.run(str(run_dir), stop_after))


__all__ = [
    "KnowrlError",
    "ManifestError",
    "compute_consensus",
    "parse_verdict",
    "rouge_l",
    "tokenize",
    "perplexity",
    "keyword_hit",
    "precision_recall_f1",
    "format_delta",
    "default_config_toml",
    "validate_config_toml",
    "init_run",
    "run",
]
