import pathlib
import re

import setuptools


# Everything after the ".. description-end" marker in the README is
# developer documentation and stays out of the package metadata.
README = pathlib.Path(__file__).with_name("README.rst").read_text(encoding="utf-8")

setuptools.setup(
    long_description=re.sub(r"(?ms)^\.\. description-end.*", "", README, count=1),
)
