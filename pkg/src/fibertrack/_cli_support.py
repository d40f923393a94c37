import sys
import typing

import configuraptor
import rich


class State(configuraptor.TypedConfig, configuraptor.Singleton):
    """Global cli app state."""

    verbose: bool = False
    workers: int = 1


def info(*message: typing.Any) -> None:
    """Print only in --verbose mode."""
    if State().verbose:
        rich.print(*message, file=sys.stderr)


def warn(message: str) -> None:
    """Always print, in yellow, to stderr."""
    rich.print(f"[yellow]{message}[/yellow]", file=sys.stderr)


def format_report(values: dict[str, typing.Any]) -> str:
    """Render `key: value` pairs on one line, floats with 4 significant digits."""
    parts = []
    for key, value in values.items():
        shown = f"{value:.4g}" if isinstance(value, float) else str(value)
        parts.append(f"[bold]{key}[/bold] {shown}")
    return " | ".join(parts)
