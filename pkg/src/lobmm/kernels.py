"""Engine selection: compiled extension when built, interpreted otherwise.

``lobmm._engine`` is authored in Cython pure-Python mode.  When the
package was installed with its extension compiled, importing it yields
the C version; otherwise the same file runs as plain Python.  Both give
bit-identical results; the benchmark suite compares their speed.
"""
from __future__ import annotations

import importlib.util
import os

from lobmm import _engine as engine

ENGINE_COMPILED = bool(getattr(engine, "__file__", "").endswith((".so", ".pyd")))


def load_interpreted_engine():
    """Load the pure-Python engine explicitly (even when compiled exists)."""
    src = os.path.join(os.path.dirname(__file__), "_engine.py")
    spec = importlib.util.spec_from_file_location("lobmm._engine_interpreted", src)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod
