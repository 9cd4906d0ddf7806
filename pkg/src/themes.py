"""
Console themes for sorl-desk.

A theme fixes the colors and border style of the summary tables and
panels the CLI prints.
"""

from dataclasses import dataclass
from typing import List, Sequence

from rich import box
from rich.panel import Panel
from rich.style import Style
from rich.table import Table


@dataclass(frozen=True)
class Theme:
    """Colors and border for result tables, status words and error panels."""

    name: str
    primary: str
    secondary: str
    accent: str
    text: str
    success: str
    error: str
    border: box.Box = box.ROUNDED

    def get_panel_style(self) -> Style:
        """Get panel border style."""
        return Style(color=self.primary, bold=True)

    def get_header_style(self) -> Style:
        """Get header text style."""
        return Style(color=self.accent, bold=True)

    def get_error_style(self) -> Style:
        return Style(color=self.error, bold=True)

    def table(self, title: str, columns: Sequence[str]) -> Table:
        """Empty results table with this theme's borders and header colors."""
        table = Table(
            title=title,
            box=self.border,
            border_style=self.get_panel_style(),
            header_style=self.get_header_style(),
            title_style=Style(color=self.secondary, bold=True),
        )
        for column in columns:
            table.add_column(column, style=self.text, justify="right")
        return table

    def status_text(self, passed: bool) -> str:
        color = self.success if passed else self.error
        return f"[{color}]{'PASS' if passed else 'FAIL'}[/]"

    def error_panel(self, message: str, title: str = "Error") -> Panel:
        return Panel(message, title=title, border_style=self.get_error_style())


THEMES = {
    "desk": Theme(
        name="Desk",
        primary="#5f87af",
        secondary="#87afd7",
        accent="#d7af5f",
        text="#e4e4e4",
        success="#5faf5f",
        error="#d75f5f",
    ),
    "ocean": Theme(
        name="Ocean",
        primary="#1f6f9f",      # Deep water
        secondary="#5fd7d7",    # Shallows
        accent="#afd7ff",       # Foam
        text="#eef6fb",
        success="#3cb3a0",
        error="#ef6a4f",
        border=box.HEAVY_HEAD,
    ),
    "forest": Theme(
        name="Forest",
        primary="#2e7d32",      # Pine
        secondary="#7cb342",    # Moss
        accent="#c5e1a5",       # Fern
        text="#f1f8e9",
        success="#66bb6a",
        error="#c62828",
        border=box.SIMPLE_HEAVY,
    ),
    "plain": Theme(
        name="Plain",
        primary="white",
        secondary="white",
        accent="white",
        text="default",
        success="green",
        error="red",
        border=box.ASCII,
    ),
}


def get_theme(name: str) -> Theme:
    """Get theme by name, falling back to the default desk theme."""
    return THEMES.get(name.lower(), THEMES["desk"])


def list_themes() -> List[str]:
    return list(THEMES)
