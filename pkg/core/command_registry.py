"""Command registry: decorator-based registration of pipeline commands.

Each command is defined once, handler and help text together.
"""

from __future__ import annotations

import argparse
from typing import Any, Callable

from core.errors import UsageError

_REGISTRY: dict[str, dict[str, Any]] = {}

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def command(name: str, help: str, *, arguments: tuple[tuple[tuple, dict], ...] = ()):
    """Register a command handler ``fn(cfg, args) -> dict``.

    Args:
        name: Sub-command name on the command line.
        help: One-line description for ``--help``.
        arguments: Extra argparse ``(flags, kwargs)`` pairs only this command takes.
    """

    def decorator(fn: Callable) -> Callable:
        _REGISTRY[name] = {"handler": fn, "help": help, "arguments": arguments}
        return fn

    return decorator


def get_handler(name: str) -> Callable | None:
    entry = _REGISTRY.get(name)
    return entry["handler"] if entry else None


def add_subparsers(parser: argparse.ArgumentParser, parents: list[argparse.ArgumentParser]) -> None:
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, entry in _REGISTRY.items():
        p = sub.add_parser(name, help=entry["help"], description=entry["help"], parents=parents)
        for flags, kwargs in entry["arguments"]:
            p.add_argument(*flags, **kwargs)


def dispatch(name: str, cfg: Any, args: Any) -> dict:
    """Run a command. Never raises: failures come back as
    ``{"ok": False, "error": ..., "exit_code": ...}``."""
    handler = get_handler(name)
    if handler is None:
        return {"ok": False, "error": f"Unknown command: {name}", "exit_code": EXIT_USAGE}
    try:
        result = handler(cfg, args)
    except UsageError as e:
        return {"ok": False, "error": str(e), "exit_code": EXIT_USAGE}
    except Exception as e:
        return {"ok": False, "error": f"{type(e).__name__}: {e}", "exit_code": EXIT_FAILURE}
    result.setdefault("ok", True)
    result.setdefault("exit_code", EXIT_OK if result["ok"] else EXIT_FAILURE)
    return result
