import os

from setuptools import Extension, setup

# Set SDEBAYES_NO_EXTENSION=1 to install the pure-Python package only; the
# reference backend is selected automatically at import time.
ext_modules = []
if not os.environ.get("SDEBAYES_NO_EXTENSION"):
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "sdebayes.backends._core",
                ["src/sdebayes/backends/_core.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": 3, "embedsignature": True},
    )

setup(ext_modules=ext_modules)
