#!/usr/bin/env python
# Copyright 2026 The ContextCap Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
import os
import re
from setuptools import find_packages, setup

# pull long description from README
this_directory = os.path.abspath(os.path.dirname(__file__))
with open(os.path.join(this_directory, "README.md"), encoding="utf8") as f:
    long_description = f.read()


# get this package's version from contextcap/__version__.py
def _get_version_dict():
    _version_path = os.path.join(this_directory, "contextcap", "__version__.py")
    _semver = r"""(?P<major>\d+)\.(?P<minor>\d+)\.(?P<patch>\d+)"""
    _pre = r"""((?P<prekind>a|b|rc)(?P<pre>\d+))?"""
    _version_pattern = rf"""version\s*=\s*["']{_semver}{_pre}["']"""
    with open(_version_path) as f:
        match = re.search(_version_pattern, f.read().strip())
        if match is None:
            raise ValueError(f"invalid version at {_version_path}")
        return match.groupdict()


def _get_package_version():
    parts = _get_version_dict()
    pre = f"{parts['prekind']}{parts['pre']}" if parts["prekind"] else ""
    return "{major}.{minor}.{patch}".format(**parts) + pre


package_name = "contextcap"
package_version = _get_package_version()
description = """Context-aware dense captioning of 3D point-cloud scenes, at desk scale"""

setup(
    name=package_name,
    version=package_version,
    description=description,
    long_description=long_description,
    long_description_content_type="text/markdown",
    author="The ContextCap Authors",
    packages=find_packages(include=["contextcap", "contextcap.*"]),
    include_package_data=True,
    package_data={
        "contextcap": [
            "include/*.json",
        ]
    },
    entry_points={
        "console_scripts": ["contextcap=contextcap.cli:main"],
    },
    python_requires=">=3.10",
    install_requires=[
        "dbt-adapters>=1.7,<2.0",
        "dbt-common>=1.10,<2.0",
        "agate>=1.7,<1.10",
        "numpy>=1.24",
        "setuptools>=40.3.0",
        "python-decouple>=3.6",
    ],
)
