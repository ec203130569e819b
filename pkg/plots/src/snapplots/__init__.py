"""Figure rendering for snapgraph CLI output files."""

from .render import (
    KINDS,
    PlotSpec,
    RenderResult,
    SchemaError,
    Style,
    render,
)

__all__ = ["KINDS", "PlotSpec", "RenderResult", "SchemaError", "Style", "render"]
