"""Character decomposition tables.

A table maps each character to the ordered list of components it is built
from.  The on-disk format is a UTF-8 TSV, one character per line::

    <character>\t<component>[,<component>...]

Duplicated components are kept as-is (a character built from two copies of
the same component lists it twice).
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

__all__ = [
    "CharacterId",
    "ComponentId",
    "DecompositionTable",
    "TableParseError",
    "UnknownCharacterError",
    "load_table",
    "table_from_mapping",
    "parse_table",
    "decompose",
    "covers",
    "component_frequency",
]


class TableParseError(ValueError):
    """Raised for malformed decomposition files."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownCharacterError(KeyError):
    pass


@dataclass(frozen=True, order=True)
class ComponentId:
    id: int
    codepoint: int

    @property
    def char(self) -> str:
        return chr(self.codepoint)


@dataclass(frozen=True, order=True)
class CharacterId:
    id: int
    codepoint: int

    @property
    def char(self) -> str:
        return chr(self.codepoint)


@dataclass(frozen=True)
class DecompositionTable:
    """Immutable character -> components mapping.

    Character and component ids are dense and assigned in sorted-codepoint
    order, so the same file always produces the same ids.
    """

    characters: tuple[CharacterId, ...]
    vocabulary: tuple[ComponentId, ...]
    entries: Mapping[CharacterId, tuple[ComponentId, ...]]
    _char_index: dict[int, CharacterId] = field(repr=False, compare=False)
    _comp_index: dict[int, ComponentId] = field(repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.characters)

    def __contains__(self, c) -> bool:
        try:
            self.character(c)
        except UnknownCharacterError:
            return False
        return True

    @property
    def n_components(self) -> int:
        return len(self.vocabulary)

    def character(self, c: CharacterId | str | int) -> CharacterId:
        """Resolve a character given as CharacterId, 1-char string or codepoint."""
        if isinstance(c, CharacterId):
            cp = c.codepoint
        elif isinstance(c, str):
            if len(c) != 1:
                raise UnknownCharacterError(c)
            cp = ord(c)
        else:
            cp = int(c)
        try:
            found = self._char_index[cp]
        except KeyError:
            raise UnknownCharacterError(chr(cp) if 0 <= cp < 0x110000 else cp) from None
        if isinstance(c, CharacterId) and c != found:
            raise UnknownCharacterError(c)
        return found

    def character_by_id(self, idx: int) -> CharacterId:
        if not 0 <= idx < len(self.characters):
            raise UnknownCharacterError(idx)
        return self.characters[idx]

    def component(self, u: ComponentId | str | int) -> ComponentId:
        if isinstance(u, ComponentId):
            return self.vocabulary[u.id]
        cp = ord(u) if isinstance(u, str) else int(u)
        try:
            return self._comp_index[cp]
        except KeyError:
            raise UnknownCharacterError(u) from None

    def decompose(self, c) -> list[ComponentId]:
        return list(self.entries[self.character(c)])

    def component_ids(self, c) -> list[int]:
        return [u.id for u in self.entries[self.character(c)]]

    def fingerprint(self) -> str:
        """Stable hash of the table contents (used to pair checkpoints with tables)."""
        h = hashlib.sha256()
        for c in self.characters:
            comps = ",".join(u.char for u in self.entries[c])
            h.update(f"{c.char}\t{comps}\n".encode("utf-8"))
        return h.hexdigest()[:16]

    def to_tsv(self) -> str:
        return "".join(
            f"{c.char}\t{','.join(u.char for u in self.entries[c])}\n" for c in self.characters
        )


def _build(rows: Sequence[tuple[str, Sequence[str]]]) -> DecompositionTable:
    seen = dict(rows)
    comp_chars = sorted({u for comps in seen.values() for u in comps}, key=ord)
    vocabulary = tuple(ComponentId(i, ord(u)) for i, u in enumerate(comp_chars))
    comp_index = {u.codepoint: u for u in vocabulary}
    characters = tuple(CharacterId(i, ord(ch)) for i, ch in enumerate(sorted(seen, key=ord)))
    entries = {c: tuple(comp_index[ord(u)] for u in seen[c.char]) for c in characters}
    return DecompositionTable(
        characters=characters,
        vocabulary=vocabulary,
        entries=entries,
        _char_index={c.codepoint: c for c in characters},
        _comp_index=comp_index,
    )


def parse_table(lines: Iterable[str]) -> DecompositionTable:
    rows: list[tuple[str, list[str]]] = []
    first_line: dict[str, int] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise TableParseError("expected '<character>\\t<component>[,<component>...]'", lineno)
        ch, comp_field = parts
        if len(ch) != 1:
            raise TableParseError(f"character field must be one codepoint, got {ch!r}", lineno)
        comps = [u.strip() for u in comp_field.split(",")] if comp_field.strip() else []
        if not comps:
            raise TableParseError(f"character {ch!r} has an empty component list", lineno)
        for u in comps:
            if len(u) != 1:
                raise TableParseError(f"component must be one codepoint, got {u!r}", lineno)
        if ch in first_line:
            raise TableParseError(f"character {ch!r} already defined on line {first_line[ch]}", lineno)
        first_line[ch] = lineno
        rows.append((ch, comps))
    if not rows:
        raise TableParseError("decomposition table is empty")
    return _build(rows)


def load_table(path: str | Path) -> DecompositionTable:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        return parse_table(fh)


def table_from_mapping(mapping: Mapping[str, Sequence[str]]) -> DecompositionTable:
    return parse_table(f"{ch}\t{','.join(comps)}" for ch, comps in mapping.items())


def decompose(table: DecompositionTable, c) -> list[ComponentId]:
    return table.decompose(c)


def covers(table: DecompositionTable, reference_chars: Iterable, target) -> bool:
    """True iff every distinct component of `target` occurs in some reference."""
    available: set[ComponentId] = set()
    for r in reference_chars:
        available.update(table.entries[table.character(r)])
    return set(table.entries[table.character(target)]) <= available


def component_frequency(table: DecompositionTable) -> dict[ComponentId, int]:
    """Number of characters (not occurrences) that contain each component."""
    counts: Counter[ComponentId] = Counter()
    for comps in table.entries.values():
        counts.update(set(comps))
    return {u: counts[u] for u in table.vocabulary}
