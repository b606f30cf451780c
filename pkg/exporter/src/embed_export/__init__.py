"""Bridge from a sentence encoder to the PTEB1 embedding file format."""

__version__ = "0.1.0"

from .exporter import ExportJob, export  # noqa: F401
