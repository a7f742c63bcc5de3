from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as f_:
    long_description = f_.read()

requirements_map = {
    "install": "",
    "test": "-test",
    }

requirements = {}
for category, fname in requirements_map.items():
    with open(f"requirements{fname}.txt") as fp:
        requirements[category] = fp.read().strip().split("\n")

setup(
    name='relukit',
    version="0.1.0",
    description="Exact and numerical analysis of ReLU network risks and training dynamics",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["test", "test.*"]),
    classifiers=[
        "Programming Language :: Python :: 3.7",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
    install_requires=requirements["install"],
    extras_require={
        "test": requirements["test"],
        },
    entry_points={
        "console_scripts": ["relukit=relukit.cli:main"],
        },
    python_requires='>=3.7'
)
