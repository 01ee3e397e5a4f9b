"""Builds the optional compiled sampling kernels.

The package works without the extension: negseq._kernels falls back to the
pure-numpy implementation when the compiled module is absent.
"""

from setuptools import setup
from setuptools.extension import Extension

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext = Extension(
        "negseq._kernels._sampling",
        ["src/negseq/_kernels/_sampling.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext.optional = True
    ext_modules = cythonize([ext], language_level=3)
except ImportError:
    pass

setup(ext_modules=ext_modules)
