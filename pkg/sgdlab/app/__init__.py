# sgdlab/app/__init__.py
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("sgdlab")
except PackageNotFoundError:
    __version__ = "0.1.0"
