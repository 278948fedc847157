from setuptools import Extension, setup

setup(
    ext_modules=[
        Extension(
            "nwndetect._ldlcore",
            sources=["src/nwndetect/_ldlcore.c"],
            extra_compile_args=["-O3", "-march=native", "-funroll-loops"],
        )
    ]
)
