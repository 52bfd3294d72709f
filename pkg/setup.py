"""
Setup script for amsskit.

Installs the flat src/ modules and the `amss` console command.

Usage:
    pip install -e .
"""

from setuptools import setup

# --- SETUP CONFIGURATION ---
setup(
    name="amsskit",
    version="1.0.0",
    description="Audio manipulation on specific sources: query language, DSP oracle, triple synthesis and AMSS network",
    long_description="amsskit parses audio manipulation queries, renders ground-truth edits from stems, "
                     "synthesizes training triples and trains/evaluates a numpy AMSS network with verified gradients.",
    package_dir={"": "src"},
    py_modules=["config", "errors", "main", "solver", "storage", "visualizer"],
    packages=["engines", "network"],
    python_requires=">=3.9",
    install_requires=[
        "numpy>=1.24.0",
        "scipy>=1.10.0",
        "pandas>=2.0.0",
        "python-dotenv>=1.0.0",
        "soundfile>=0.12.0",
        "librosa>=0.10.0",
        "matplotlib>=3.7.0",
        "seaborn>=0.12.0",
    ],
    extras_require={"test": ["pytest>=7.0.0"]},
    entry_points={"console_scripts": ["amss=main:main"]},
    zip_safe=False,
)
