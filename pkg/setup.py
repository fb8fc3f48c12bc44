from pathlib import Path

from setuptools import find_packages, setup

requirements = [
    line.strip()
    for line in Path(__file__).with_name("requirements.txt").read_text().splitlines()
    if line.strip() and not line.startswith(("#", "pytest"))
]

setup(
    name="treesir",
    version="0.1.0",
    packages=find_packages(exclude=("tests",)),
    python_requires=">=3.10",
    install_requires=requirements,
    entry_points={"console_scripts": ["treesir=treesir.main:main"]},
)
