"""Figure rendering for gridfleet CSV artifacts."""

__version__ = "0.1.0"

from .render import FIGURE_KINDS, FigureSpec, RenderError, render, tidy_path_for  # noqa: F401
