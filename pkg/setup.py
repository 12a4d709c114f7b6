from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # the numpy fallback is used at import time
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("novalley._kernels", ["src/novalley/_kernels.pyx"],
                   extra_compile_args=["-O3"], optional=True)],
        language_level=3,
    )

setup(ext_modules=ext_modules)
