"""
Setup script for the Coexist Twin library.
Kept alongside pyproject.toml for environments that still call setup.py directly.
"""

from setuptools import setup, find_packages

setup(
    name="coexist-twin",
    version="0.1.0",
    description="A Python library for simulating URLLC and distributed-learning coexistence",
    packages=find_packages(include=["coexist_twin*"]),
    install_requires=[
        "numpy>=1.20.0",
        "pandas>=1.3.0",
    ],
    entry_points={"console_scripts": ["coexist-twin=coexist_twin.cli:main"]},
    python_requires=">=3.8",
)
