"""Byte-exact output back ends."""

from .gcode import ParseError, PrintParams, SliceJob, SliceWarning, estimate_print_time, jobs_from_assembly, slice_gcode
from .manifest import AssemblyManifest, Feature, ManifestComponent, SchemaError, read_manifest, write_manifest
from .stl import write_stl

__all__ = [
    "AssemblyManifest",
    "Feature",
    "ManifestComponent",
    "ParseError",
    "PrintParams",
    "SchemaError",
    "SliceJob",
    "SliceWarning",
    "estimate_print_time",
    "jobs_from_assembly",
    "read_manifest",
    "slice_gcode",
    "write_manifest",
    "write_stl",
]
