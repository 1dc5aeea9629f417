"""Command-line surface: subcommands, run manifests and plot data."""

from .commands import build_parser, main
from .manifest import RunManifest
from .plots import emit_plot_data, evaluation_series

__all__ = ["build_parser", "main", "RunManifest", "emit_plot_data", "evaluation_series"]
