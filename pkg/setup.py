import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-python install; the numpy backend takes over
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "cagrain.kernels._life",
                ["src/cagrain/kernels/_life.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
