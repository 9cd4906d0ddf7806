"""
Utility functions for sorl-desk.

Provides helpers for step budgets, decimal formatting and small statistics.
"""

import math
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np


def ensure_directory(path: Path) -> None:
    """Ensure the parent directory of a file path exists."""
    path.parent.mkdir(parents=True, exist_ok=True)


def is_power_of_two(value: int) -> bool:
    """True for 1, 2, 4, 8, ..."""
    return isinstance(value, (int, np.integer)) and value >= 1 and (value & (value - 1)) == 0


def log2_exact(value: int) -> int:
    """log2 of a power of two."""
    if not is_power_of_two(value):
        raise ValueError(f"{value} is not a power of two")
    return int(value).bit_length() - 1


def powers_of_two_up_to(limit: int) -> list[int]:
    """[1, 2, 4, ..., limit] for a power-of-two limit."""
    return [2**k for k in range(log2_exact(limit) + 1)]


def format_decimal(value: Optional[float]) -> str:
    """Shortest repr that round-trips; empty string for missing values."""
    if value is None:
        return ""
    return repr(float(value))


def format_row(values: Iterable[object]) -> str:
    """Comma-join a CSV row with repeatable float formatting."""
    parts = []
    for value in values:
        if value is None:
            parts.append("")
        elif isinstance(value, (bool, np.bool_)):
            parts.append("1" if value else "0")
        elif isinstance(value, (int, np.integer)):
            parts.append(str(int(value)))
        elif isinstance(value, (float, np.floating)):
            parts.append(format_decimal(value))
        else:
            parts.append(str(value))
    return ",".join(parts)


def parse_int_list(text: str) -> list[int]:
    """Parse '1,2,4' into [1, 2, 4]."""
    return [int(part) for part in text.split(",") if part.strip()]


def standard_error(values: Sequence[float]) -> float:
    """Standard error of the mean (sample std / sqrt(n)); 0 for fewer than two values."""
    if len(values) < 2:
        return 0.0
    return float(np.std(np.asarray(values, dtype=np.float64), ddof=1) / math.sqrt(len(values)))
