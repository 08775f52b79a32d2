from setuptools import setup, find_packages

setup(
    name="arl-lab",
    version="0.1.0",
    description="Adversarial representation learning lab: likelihood and maximum-entropy adversaries, "
                "linear-game dynamics and privacy/utility trade-off fronts",
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests", "tests.*"]),
    install_requires=[
        "numpy",
        "pandas>=1.5",
        "tqdm",
        "pathspec",
        "pyperclip"
    ],
    extras_require={
        "dev": [
            "pytest>=6.0",
            "pytest-cov",
        ]
    },
    entry_points={
        "console_scripts": [
            "arl-lab=arl_lab.cli:main"
        ]
    },
    classifiers=[
        "Programming Language :: Python :: 3",
        "Operating System :: OS Independent",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
    python_requires='>=3.8',
)
