import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # the package still works through the numpy fallback
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("nearfield_sim._kernels", ["src/nearfield_sim/_kernels.pyx"],
                   include_dirs=[numpy.get_include()], extra_compile_args=["-O3"])],
        language_level=3,
    )

setup(ext_modules=ext_modules)
