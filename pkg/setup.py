"""Build script for the optional Cython walk kernels.

The package works without the extension; ``privsmc.kernels`` falls back to
the numpy implementation when ``privsmc._walk`` cannot be imported.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("PRIVSMC_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "privsmc._walk",
                    ["src/privsmc/_walk.pyx"],
                    include_dirs=[np.get_include()],
                    # keep IEEE semantics: results must match the fallback bit for bit
                    extra_compile_args=["-O2", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
