"""Builds the compiled kernel core.

The extension is optional: if Cython or a C compiler is unavailable, the
package installs anyway and falls back to the pure-numpy kernels at import
time.  -ffp-contract=off keeps the compiled kernels bit-identical to the
numpy backend (no fused multiply-add).
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "sparse24._core",
                ["src/sparse24/_core.pyx"],
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
