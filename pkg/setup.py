"""Build script: compiles the optional packet-path speedup extension.

The package is fully functional without the extension; kernel selection
happens at import time in qosbridge._kernels.
"""

import logging

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

log = logging.getLogger(__name__)


class optional_build_ext(build_ext):
    """Build the speedups if possible, fall back to pure Python otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # missing compiler, broken toolchain
            log.warning("skipping compiled kernels (%s); pure-Python fallback will be used", exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            log.warning("failed to build %s (%s); pure-Python fallback will be used", ext.name, exc)


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    return cythonize(
        [
            Extension(
                "qosbridge._kernels._speedups",
                ["src/qosbridge/_kernels/_speedups.pyx"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )


setup(
    ext_modules=extensions(),
    cmdclass={"build_ext": optional_build_ext},
)
