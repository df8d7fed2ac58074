"""Build shim for the compiled LSTM cell kernels.

The extension is optional: if Cython or a C compiler is unavailable the
install still succeeds and gaplab falls back to the numpy kernels at import.
"""
import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "gaplab.neural_lm._cell_kernels",
                ["src/gaplab/neural_lm/_cell_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )

setup(ext_modules=ext_modules)
