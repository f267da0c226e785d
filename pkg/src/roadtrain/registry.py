"""Shared node registry file with advisory locking.

Line format: `Node <id> <host>, <port> <x> <y> links <id> <id>...`
Each node rewrites only its own line; readers take a shared lock so a write
never interleaves with a parse.
"""

from __future__ import annotations

import fcntl
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

LOG = logging.getLogger(__name__)


class ParseError(ValueError):
    """A registry line that does not follow the documented format."""


@dataclass
class RegistryEntry:
    node: int
    host: str
    port: int
    x: float
    y: float
    links: list[int] = field(default_factory=list)


def _format_num(value: float) -> str:
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


def format_line(entry: RegistryEntry) -> str:
    links = " ".join(str(n) for n in entry.links)
    head = (
        f"Node {entry.node} {entry.host}, {entry.port} "
        f"{_format_num(entry.x)} {_format_num(entry.y)} links"
    )
    return f"{head} {links}".rstrip()


def parse_line(line: str) -> RegistryEntry:
    tokens = line.split()
    if len(tokens) < 7 or tokens[0] != "Node" or tokens[6] != "links":
        raise ParseError(f"unrecognized registry line: {line!r}")
    host = tokens[2]
    if not host.endswith(","):
        raise ParseError(f"missing comma after host in: {line!r}")
    try:
        return RegistryEntry(
            node=int(tokens[1]),
            host=host[:-1],
            port=int(tokens[3]),
            x=float(tokens[4]),
            y=float(tokens[5]),
            links=[int(t) for t in tokens[7:]],
        )
    except ValueError as exc:
        raise ParseError(f"bad field in registry line {line!r}: {exc}") from exc


class Registry:
    """File-backed registry; every operation opens, locks, and releases."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)

    def truncate(self) -> None:
        """Erase the file; the lead truck does this once at startup."""
        with open(self.path, "w") as fh:
            fcntl.flock(fh, fcntl.LOCK_EX)
            fh.truncate(0)

    def read(self) -> list[RegistryEntry]:
        if not self.path.exists():
            return []
        with open(self.path, "r") as fh:
            fcntl.flock(fh, fcntl.LOCK_SH)
            lines = fh.read().splitlines()
        entries = []
        for line in lines:
            if not line.strip():
                continue
            try:
                entries.append(parse_line(line))
            except ParseError as exc:
                LOG.warning("skipping malformed registry line: %s", exc)
        return entries

    def write_entry(self, entry: RegistryEntry) -> None:
        """Replace (or append) the caller's own line under an exclusive lock."""
        with open(self.path, "a+") as fh:
            fcntl.flock(fh, fcntl.LOCK_EX)
            fh.seek(0)
            lines = fh.read().splitlines()
            kept = []
            for line in lines:
                if not line.strip():
                    continue
                try:
                    parsed = parse_line(line)
                except ParseError:
                    kept.append((1 << 30, line))  # preserve unknown lines at the tail
                    continue
                if parsed.node != entry.node:
                    kept.append((parsed.node, line))
            kept.append((entry.node, format_line(entry)))
            kept.sort(key=lambda pair: pair[0])
            fh.seek(0)
            fh.truncate(0)
            fh.write("".join(line + "\n" for _, line in kept))
            fh.flush()
