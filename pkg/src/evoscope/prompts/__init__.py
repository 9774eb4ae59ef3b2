"""Prompt templates shipped as UTF-8 data files.

Each template holds a ``SYSTEM:`` section followed by a ``USER:`` section
and uses named placeholders ({task_desc}, {question}, {parents}, {n}, ...)
filled via str.format, so literal braces inside templates are doubled.
"""

from __future__ import annotations

from importlib import resources


class TemplateError(KeyError):
    """Missing template file or unfilled placeholder."""


def load_template(name: str) -> str:
    ref = resources.files(__package__).joinpath(name)
    try:
        return ref.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise TemplateError(f"no prompt template named {name!r}") from exc


def render_template(name: str, **fields) -> tuple:
    """Return (system, user) for the named template with placeholders filled."""
    raw = load_template(name)
    if not raw.startswith("SYSTEM:"):
        raise TemplateError(f"template {name!r} must open with a SYSTEM: section")
    marker = "\nUSER:"
    at = raw.find(marker)
    if at < 0:
        raise TemplateError(f"template {name!r} is missing its USER: section")
    system = raw[len("SYSTEM:"):at].strip()
    user = raw[at + len(marker):].strip()
    try:
        return system.format(**fields), user.format(**fields)
    except KeyError as exc:
        raise TemplateError(
            f"template {name!r} needs a value for placeholder {exc.args[0]!r}"
        ) from exc
