# -*- coding: utf-8 -*-

import os
from setuptools import setup

REPO_ROOT = os.path.dirname(os.path.abspath(__file__))
README_PATH = os.path.join(REPO_ROOT, "README.md")
VERSION_PATH = os.path.join(REPO_ROOT, "bubbledyn", "version.py")
_version_content = {}
exec(open(VERSION_PATH).read(), _version_content)

setup(
    name="bubbledyn",
    version=_version_content["__version__"],
    packages=["bubbledyn"],
    author="bubbledyn developers",
    description="Learned soft membrane dynamics for tactile tool manipulation",
    long_description=open(README_PATH, encoding="utf-8").read(),
    long_description_content_type="text/markdown",
    include_package_data=True,
    # https://pypi.org/classifiers/
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Programming Language :: Python",
        "Programming Language :: Python :: 3",
    ],
    python_requires=">=3.8",
    install_requires=[
        "numpy >= 1.21",
        "scipy >= 1.7",
        "Unidecode >= 1.3.0",
        "appdirs >=1, <2",
    ],
    entry_points={
        "console_scripts": ["bubbledyn = bubbledyn.cli:main"],
    },
    keywords=["tactile", "soft gripper", "dynamics", "MPPI", "robotics"],
)
