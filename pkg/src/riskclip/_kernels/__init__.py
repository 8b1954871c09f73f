"""Kernel backend selection.

The compiled extension is preferred when importable; set the environment
variable ``RISKCLIP_PURE_PYTHON=1`` to force the pure-numpy fallback. Both
backends consume pre-drawn uniforms and agree bit-for-bit, so switching
backends never changes results, only speed.
"""

import os

from . import _pure

if os.environ.get("RISKCLIP_PURE_PYTHON", "").strip() not in ("", "0"):
    _impl = _pure
else:
    try:
        from . import _core as _impl
    except ImportError:
        _impl = _pure

BACKEND = _impl.BACKEND
imh_chain_from_draws = _impl.imh_chain_from_draws
markov_sample_from_uniforms = _impl.markov_sample_from_uniforms
markov_log_prob = _impl.markov_log_prob

__all__ = [
    "BACKEND",
    "imh_chain_from_draws",
    "markov_sample_from_uniforms",
    "markov_log_prob",
]
