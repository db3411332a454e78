"""Structure of a two-row Bengali registration plate.

Upper row: ``CITY [METRO] CLASS_LETTER``. Lower row: six digits, split
2 + 4 into the class number and the serial. The grammar works on OCR class
names (``"0"``-``"9"``, ``"KA"``, ``"DHAKA"`` ...), never on script.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

DEFAULT_CITIES = ("DHAKA", "CHATTA")
DEFAULT_CLASS_LETTERS = ("KA", "KHA", "GHA", "CHA")
DIGITS = tuple(str(d) for d in range(10))
METRO = "METRO"
UPPER, LOWER = "upper", "lower"


class Token(NamedTuple):
    class_name: str
    confidence: float
    row: str
    order: int


class PlateParseError(ValueError):
    def __init__(self, row: str, position: int, message: str, token: str | None = None):
        self.row = row
        self.position = position
        self.token = token
        where = f"{row} row position {position}"
        super().__init__(f"{message} at {where}" + (f" (token {token!r})" if token is not None else ""))


@dataclass(frozen=True)
class PlateRecord:
    city: str
    metro: bool
    class_letter: str
    class_digits: str
    serial_digits: str

    def __post_init__(self):
        if len(self.class_digits) != 2 or not self.class_digits.isdigit():
            raise ValueError(f"class_digits must be 2 digits, got {self.class_digits!r}")
        if len(self.serial_digits) != 4 or not self.serial_digits.isdigit():
            raise ValueError(f"serial_digits must be 4 digits, got {self.serial_digits!r}")

    def upper_tokens(self) -> list[str]:
        return [self.city] + ([METRO] if self.metro else []) + [self.class_letter]

    def lower_tokens(self) -> list[str]:
        return list(self.class_digits + self.serial_digits)


@dataclass(frozen=True)
class Grammar:
    cities: tuple[str, ...] = DEFAULT_CITIES
    class_letters: tuple[str, ...] = DEFAULT_CLASS_LETTERS
    digits: tuple[str, ...] = DIGITS

    def parse(self, tokens) -> PlateRecord:
        return parse_plate(tokens, self)


def _rows(tokens):
    upper, lower = [], []
    for i, tok in enumerate(tokens):
        try:
            name, _, row, order = tok
        except (TypeError, ValueError):
            raise PlateParseError("?", i, "malformed token") from None
        if row == UPPER:
            upper.append((order, len(upper), name))
        elif row == LOWER:
            lower.append((order, len(lower), name))
        else:
            raise PlateParseError(str(row), i, "unknown row label")
    try:
        upper.sort()
        lower.sort()
    except TypeError:
        raise PlateParseError("?", 0, "non-comparable token order") from None
    return [n for *_, n in upper], [n for *_, n in lower]


def parse_plate(tokens, grammar: Grammar = Grammar()) -> PlateRecord:
    """Parse a recognized token stream into a :class:`PlateRecord`.

    Any structural violation raises :class:`PlateParseError` carrying the row
    and the within-row position of the offending token.
    """
    upper, lower = _rows(tokens)

    if not upper:
        raise PlateParseError(UPPER, 0, "missing city")
    if upper[0] not in grammar.cities:
        raise PlateParseError(UPPER, 0, "unknown city", upper[0])
    pos = 1
    metro = pos < len(upper) and upper[pos] == METRO
    if metro:
        pos += 1
    if pos >= len(upper):
        raise PlateParseError(UPPER, pos, "missing class letter")
    letter = upper[pos]
    if letter not in grammar.class_letters:
        raise PlateParseError(UPPER, pos, "class letter not in configured set", letter)
    if pos + 1 < len(upper):
        raise PlateParseError(UPPER, pos + 1, "unexpected token", upper[pos + 1])

    for i, name in enumerate(lower):
        if name not in grammar.digits:
            raise PlateParseError(LOWER, i, "expected a digit", name)
    if len(lower) != 6:
        raise PlateParseError(LOWER, min(len(lower), 6), f"expected 6 digits, found {len(lower)}")
    digits = "".join(str(grammar.digits.index(d)) for d in lower)
    return PlateRecord(upper[0], metro, letter, digits[:2], digits[2:])


def format_plate(record: PlateRecord) -> str:
    """Canonical one-line text, e.g. ``DHAKA METRO KHA | 11-2233``."""
    return f"{' '.join(record.upper_tokens())} | {record.class_digits}-{record.serial_digits}"


def tokenize(text: str) -> list[Token]:
    """Token stream for a canonical plate string (inverse of :func:`format_plate`)."""
    upper_text, sep, lower_text = text.partition("|")
    if not sep:
        raise PlateParseError(LOWER, 0, "missing row separator '|'")
    tokens = [Token(w, 1.0, UPPER, i) for i, w in enumerate(upper_text.split())]
    lower_chars = [c for c in lower_text.strip() if c != "-"]
    tokens += [Token(c, 1.0, LOWER, i) for i, c in enumerate(lower_chars)]
    return tokens


def parse_text(text: str, grammar: Grammar = Grammar()) -> PlateRecord:
    return parse_plate(tokenize(text), grammar)


def record_tokens(record: PlateRecord) -> list[Token]:
    up = [Token(n, 1.0, UPPER, i) for i, n in enumerate(record.upper_tokens())]
    low = [Token(n, 1.0, LOWER, i) for i, n in enumerate(record.lower_tokens())]
    return up + low


def random_record(rng, grammar: Grammar = Grammar()) -> PlateRecord:
    """Uniform draw over valid records (numpy Generator)."""
    city = grammar.cities[rng.integers(len(grammar.cities))]
    letter = grammar.class_letters[rng.integers(len(grammar.class_letters))]
    metro = bool(rng.integers(2))
    digits = "".join(str(d) for d in rng.integers(0, 10, size=6))
    return PlateRecord(city, metro, letter, digits[:2], digits[2:])
