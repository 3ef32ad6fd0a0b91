"""Build script: compiles the optional convolution extension core.

The package works without the extension; `langwm.autodiff.conv` falls back
to a vectorized numpy implementation when the compiled module is missing.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "langwm.autodiff._convkernels",
                ["src/langwm/autodiff/_convkernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
