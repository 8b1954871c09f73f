"""Build script for the optional compiled kernels.

The package works without the extension: ``riskclip._kernels`` falls back to
pure-numpy implementations when ``riskclip._kernels._core`` is missing.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "riskclip._kernels._core",
                ["src/riskclip/_kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level="3",
    )
except ImportError:
    # No Cython at build time: ship the pure-python kernels only.
    pass

setup(ext_modules=ext_modules)
