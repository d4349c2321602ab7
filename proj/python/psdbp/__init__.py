"""Python interface to the psdbp branching-process library."""

try:
    from ._psdbp import *  # noqa: F401,F403
    from . import _psdbp as _core
except ImportError:  # pragma: no cover - build-tree layout
    from _psdbp import *  # noqa: F401,F403
    import _psdbp as _core

import json as _json


def run_experiment_dict(config):
    """Run an experiment from a plain dict; returns (summary dict, file list)."""
    summary, files = _core.run_experiment(_json.dumps(config))
    return _json.loads(summary), files


__all__ = [name for name in dir(_core) if not name.startswith("_")] + [
    "run_experiment_dict"
]
