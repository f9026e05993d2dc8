"""Misra-Gries frequent-item counter table with a spillover counter."""

from __future__ import annotations


class CounterTable:
    """Fixed-size activation counter table.

    ``update`` implements one step of the Misra-Gries summary: a tracked row is
    incremented; an untracked row replaces a minimum entry when the spillover
    counter equals the table minimum, otherwise the spillover counter grows.
    Every operation is O(1) amortized (entries are bucketed by count).
    """

    def __init__(self, size: int):
        if size < 1:
            raise ValueError("counter table needs at least one entry")
        self.size = size
        self.reset()

    def reset(self) -> None:
        self.counts: dict[int, int] = {}
        self._buckets: dict[int, set] = {}
        self._free = self.size
        self._min = 0
        self.spillover = 0

    def __len__(self) -> int:
        return len(self.counts)

    def __contains__(self, row: int) -> bool:
        return row in self.counts

    def count(self, row: int) -> int | None:
        return self.counts.get(row)

    @property
    def min_count(self) -> int:
        return 0 if self._free else self._min

    def _place(self, row: int, value: int) -> None:
        self.counts[row] = value
        b = self._buckets.get(value)
        if b is None:
            self._buckets[value] = {row}
        else:
            b.add(row)

    def _remove(self, row: int, value: int) -> None:
        b = self._buckets[value]
        b.discard(row)
        if not b:
            del self._buckets[value]
            if not self._free and value == self._min:
                # counts only move up by one, so the next bucket is occupied
                self._min = value + 1 if (value + 1) in self._buckets else min(self._buckets)

    def update(self, row: int) -> int | None:
        """Record one activation; return the row's counter if it is tracked."""
        c = self.counts.get(row)
        if c is not None:
            self._place(row, c + 1)
            self._remove(row, c)
            return c + 1
        m = self.min_count
        if self.spillover == m:
            if self._free:
                self._free -= 1
                self._place(row, m + 1)
                if not self._free:
                    self._min = min(self._buckets)
            else:
                victim = next(iter(self._buckets[m]))
                del self.counts[victim]
                self._place(row, m + 1)
                self._remove(victim, m)
            return m + 1
        self.spillover += 1
        return None
