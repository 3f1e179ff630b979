"""Call counters used to verify which pipeline stages ran.

Tests reset the counters, run a code path, and assert on what was touched
(for instance that evaluation never pairs, co-attends or erases).
"""

from collections import Counter

counters: Counter = Counter()


def count(name: str, n: int = 1) -> None:
    counters[name] += n


def reset() -> None:
    counters.clear()
