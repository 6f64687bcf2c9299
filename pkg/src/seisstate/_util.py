"""Small shared helpers: seed derivation, ordered parallel map, exact number I/O."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from typing import Any, Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")

_SEED_MASK = (1 << 63) - 1


def derive_seed(master: int, *labels: object) -> int:
    """Derive a stable sub-seed from a master seed and a label path.

    Uses SHA-256 over the textual path, so the mapping is independent of
    Python hash randomization, numpy version, and process layout.
    """
    text = ":".join([str(int(master))] + [str(x) for x in labels])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & _SEED_MASK


def parallel_map(fn: Callable[[T], R], items: Sequence[T], threads: int = 1) -> list[R]:
    """Map ``fn`` over ``items``, optionally on a thread pool.

    Results are returned in input order regardless of completion order, so
    the output is independent of ``threads``.
    """
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def fmt_number(x: Any) -> str:
    """Shortest exact text form for CSV cells (int stays int, float round-trips)."""
    if isinstance(x, bool):
        raise TypeError("bool is not a CSV number")
    if isinstance(x, int):
        return str(x)
    f = float(x)
    if f.is_integer() and abs(f) < 2**53:
        return str(int(f))
    return repr(f)


def parse_number(text: str) -> int | float:
    """Parse a CSV cell as int when integral, float otherwise."""
    s = text.strip()
    try:
        return int(s)
    except ValueError:
        return float(s)


def parse_rational(text: str) -> Fraction:
    """Parse ``"1"``, ``"0.0625"`` or ``"1/16"`` into an exact Fraction."""
    s = str(text).strip()
    if "/" in s:
        num, den = s.split("/", 1)
        return Fraction(int(num), int(den))
    return Fraction(s)


def rational_str(fr: Fraction) -> str:
    fr = Fraction(fr)
    if fr.denominator == 1:
        return str(fr.numerator)
    return f"{fr.numerator}/{fr.denominator}"


def json_dumps(obj: Any) -> str:
    """Deterministic JSON text: sorted keys, no whitespace drift, LF newline."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(path: Any, obj: Any) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json_dumps(obj))


def as_float_list(values: Iterable[Any]) -> list[float]:
    """Plain Python floats for JSON serialization of numpy arrays."""
    return [float(v) for v in values]
