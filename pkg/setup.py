"""Build script for the optional compiled sweep kernel.

The package works without the extension: gridscreen._kernels falls back to a
pure numpy implementation when the compiled module is missing. Any failure
while compiling is therefore demoted to a warning instead of aborting the
install.
"""

import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Swallow compiler errors so the pure-Python install still succeeds."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001 - any build failure is non-fatal
            warnings.warn(f"compiled kernel skipped: {exc}", stacklevel=1)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            warnings.warn(f"compiled kernel skipped ({ext.name}): {exc}", stacklevel=1)


def extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    import os

    if not os.path.exists("src/gridscreen/_kernels/_sweep_cy.pyx"):
        return []
    ext = Extension(
        "gridscreen._kernels._sweep_cy",
        sources=["src/gridscreen/_kernels/_sweep_cy.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], language_level="3")


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
