"""Static figure rendering for result CSVs.

Reads the delimited outputs of the simulation CLI and renders fixed-style
PNG or SVG images. No code dependency on the simulator: the CSV schema is
the whole interface.
"""

from .figures import SchemaError, plot_ablation, plot_training

__all__ = ["SchemaError", "plot_ablation", "plot_training"]
