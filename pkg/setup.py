from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # sdist without Cython: numpy fallback only
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("dnas._race", ["src/dnas/_race.pyx"], extra_compile_args=["-O3"], optional=True)],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
