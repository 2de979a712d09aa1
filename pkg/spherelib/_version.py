from setuptools_scm import get_version

try:
    scm_version = get_version("..", relative_to=__file__)
except LookupError:
    # installed outside of a git checkout
    scm_version = None

__version__ = scm_version or "0.1.0"
