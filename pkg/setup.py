"""Build script: compiles the hot-path engine to a C extension when possible.

``src/lobmm/_engine.py`` is written in Cython pure-Python mode, so the same
file runs interpreted if the extension cannot be built; the package falls
back to it automatically at import time.
"""
from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension("lobmm._engine", ["src/lobmm/_engine.py"],
                   extra_compile_args=["-O3"])],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
