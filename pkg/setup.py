from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
    extensions = cythonize(
        [Extension("graphguard._speedups", ["src/graphguard/_speedups.pyx"], optional=True)],
        compiler_directives={"embedsignature": True},
    )
except ImportError:
    # no Cython: the pure-Python kernels in graphguard._pure are used instead
    extensions = []

setup(ext_modules=extensions)
