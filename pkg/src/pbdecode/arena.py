"""Per-worker memory pools.

A :class:`Pool` hands out byte ranges from a list of anonymous ``mmap``
blocks using a bump pointer.  Nothing is freed individually; the whole pool
is rewound by :meth:`Pool.reset`.  Blocks are never released, so a pool that
has seen one large sentence keeps that capacity for the next one.

:class:`RecyclingQueue` sits on top of a pool and keeps a LIFO free list of
fixed-size slots for objects that churn within a sentence (hypotheses), so
they can be reused before the reset.

Pools carry no locks.  Each worker owns one :class:`PoolPair`.
"""

from __future__ import annotations

import ctypes
import mmap
import os
from typing import Any, Callable, NamedTuple

DEFAULT_BLOCK_SIZE = 64 * 1024
MAX_BLOCK_SIZE = 16 * 1024 * 1024
POISON_BYTE = 0xDB

PAGE = mmap.PAGESIZE


def debug_enabled() -> bool:
    return os.environ.get("PBDECODE_DEBUG", "") not in ("", "0")


class PoolError(RuntimeError):
    pass


class RecycleError(PoolError):
    """A slot was recycled while already on the free list."""


class Allocation(NamedTuple):
    block: int  # index into Pool._blocks
    offset: int
    size: int
    address: int


class _Block:
    __slots__ = ("mem", "size", "address", "view")

    def __init__(self, size: int):
        self.mem = mmap.mmap(-1, size)
        self.size = size
        self.view = memoryview(self.mem)
        self.address = ctypes.addressof(ctypes.c_char.from_buffer(self.mem))


class Pool:
    """Growable bump allocator.

    Regular blocks are consumed strictly in order.  The k-th appended block has
    size ``min(default_block_size * 2**k, max_block_size)``.  A request that
    does not fit in ``default_block_size`` gets a dedicated block kept in a
    separate list, reused positionally after each reset, so the bump pointer
    of the regular blocks is not disturbed.
    """

    def __init__(
        self,
        default_block_size: int = DEFAULT_BLOCK_SIZE,
        max_block_size: int = MAX_BLOCK_SIZE,
        debug: bool | None = None,
    ):
        if default_block_size <= 0:
            raise ValueError("default_block_size must be positive")
        self.default_block_size = default_block_size
        self.max_block_size = max(max_block_size, default_block_size)
        self.debug = debug_enabled() if debug is None else debug
        self._regular: list[_Block] = [_Block(default_block_size)]
        self._large: list[_Block] = []
        # flat list so an Allocation.block index stays valid for the pool's life
        self._blocks: list[_Block] = [self._regular[0]]
        self._block_ids: dict[int, int] = {id(self._regular[0]): 0}
        self._current = 0
        self._offset = 0
        self._large_cursor = 0
        self._consumed_before_current = 0
        self._large_used = 0
        self.high_water_mark = 0
        self.reset_count = 0
        self.alloc_count = 0

    # -- properties -------------------------------------------------------
    @property
    def total_capacity(self) -> int:
        return sum(b.size for b in self._regular) + sum(b.size for b in self._large)

    @property
    def block_count(self) -> int:
        return len(self._regular) + len(self._large)

    @property
    def in_use(self) -> int:
        return self._consumed_before_current + self._offset + self._large_used

    def stats(self) -> dict[str, int]:
        return {
            "total_capacity": self.total_capacity,
            "high_water_mark": self.high_water_mark,
            "block_count": self.block_count,
        }

    # -- allocation -------------------------------------------------------
    def _register(self, block: _Block) -> int:
        self._blocks.append(block)
        idx = len(self._blocks) - 1
        self._block_ids[id(block)] = idx
        return idx

    def _growth_size(self) -> int:
        k = len(self._regular)
        return min(self.default_block_size << k, self.max_block_size)

    def alloc(self, size: int, alignment: int = 8) -> Allocation:
        if size < 0:
            raise ValueError("size must be non-negative")
        if alignment <= 0 or alignment & (alignment - 1):
            raise ValueError(f"alignment must be a power of two, got {alignment}")
        self.alloc_count += 1
        if alignment > PAGE or size + alignment > self.default_block_size:
            return self._alloc_large(size, alignment)

        block = self._regular[self._current]
        start = (block.address + self._offset + alignment - 1) & -alignment
        start -= block.address
        if start + size > block.size:
            self._consumed_before_current += block.size
            self._current += 1
            if self._current == len(self._regular):
                nb = _Block(self._growth_size())
                self._regular.append(nb)
                self._register(nb)
            block = self._regular[self._current]
            start = 0  # page aligned, alignment <= PAGE here
        self._offset = start + size
        self._touch()
        return Allocation(self._block_ids[id(block)], start, size, block.address + start)

    def _alloc_large(self, size: int, alignment: int) -> Allocation:
        need = size + (alignment if alignment > PAGE else 0)
        need = max(need, 1)
        i = self._large_cursor
        if i < len(self._large) and self._large[i].size >= need:
            block = self._large[i]
        else:
            block = _Block(need)
            if i < len(self._large):
                # undersized dedicated block: swap in a bigger one, capacity only grows
                old = self._large[i]
                self._large[i] = block
                idx = self._block_ids.pop(id(old))
                self._blocks[idx] = block
                self._block_ids[id(block)] = idx
            else:
                self._large.append(block)
                self._register(block)
        self._large_cursor += 1
        self._large_used += block.size
        start = (block.address + alignment - 1) & -alignment
        start -= block.address
        self._touch()
        return Allocation(self._block_ids[id(block)], start, size, block.address + start)

    def _touch(self) -> None:
        used = self._consumed_before_current + self._offset + self._large_used
        if used > self.high_water_mark:
            self.high_water_mark = used

    def view(self, a: Allocation) -> memoryview:
        return self._blocks[a.block].view[a.offset:a.offset + a.size]

    def block_bounds(self, a: Allocation) -> tuple[int, int]:
        """(start address, end address) of the block holding ``a``."""
        b = self._blocks[a.block]
        return b.address, b.address + b.size

    def reset(self) -> None:
        if self.debug:
            for b in self._regular[: self._current + 1]:
                b.mem[:] = bytes([POISON_BYTE]) * b.size
            for b in self._large[: self._large_cursor]:
                b.mem[:] = bytes([POISON_BYTE]) * b.size
        self._current = 0
        self._offset = 0
        self._consumed_before_current = 0
        self._large_cursor = 0
        self._large_used = 0
        self.reset_count += 1


def pool_stats(pool: Pool) -> dict[str, int]:
    return pool.stats()


class RecyclingQueue:
    """LIFO free list of objects, each bound to a fixed-size slot in a pool.

    ``factory`` builds the Python-side object for a fresh slot; the object
    must have a writable ``slot`` attribute that receives its
    :class:`Allocation`.
    """

    def __init__(
        self,
        object_class: str,
        slot_size: int,
        factory: Callable[[], Any],
        alignment: int = 8,
        debug: bool | None = None,
    ):
        self.object_class = object_class
        self.slot_size = slot_size
        self.alignment = alignment
        self.factory = factory
        self.debug = debug_enabled() if debug is None else debug
        self.free_list: list[Any] = []
        self._free_ids: set[int] = set()
        self.recycled_count = 0
        self.acquired_count = 0
        self.fresh_count = 0

    def acquire(self, pool: Pool) -> Any:
        self.acquired_count += 1
        if self.free_list:
            obj = self.free_list.pop()
            if self.debug:
                self._free_ids.discard(id(obj))
            return obj
        self.fresh_count += 1
        obj = self.factory()
        obj.slot = pool.alloc(self.slot_size, self.alignment)
        return obj

    def recycle(self, obj: Any) -> None:
        if self.debug:
            if id(obj) in self._free_ids:
                raise RecycleError(f"{self.object_class} slot recycled twice")
            self._free_ids.add(id(obj))
        self.recycled_count += 1
        self.free_list.append(obj)

    def clear(self) -> None:
        """Drop every free slot; required when the backing pool is reset."""
        self.free_list.clear()
        self._free_ids.clear()


def acquire(queue: RecyclingQueue, pool: Pool) -> Any:
    return queue.acquire(pool)


def recycle(queue: RecyclingQueue, obj: Any) -> None:
    queue.recycle(obj)


class PoolPair:
    """The two pools a decoding worker owns.

    ``persistent`` lives as long as the worker; ``ephemeral`` is reset after
    every sentence, together with every queue registered on it.
    """

    def __init__(self, default_block_size: int = DEFAULT_BLOCK_SIZE, debug: bool | None = None):
        self.persistent = Pool(default_block_size, debug=debug)
        self.ephemeral = Pool(default_block_size, debug=debug)
        self.queues: dict[str, RecyclingQueue] = {}

    def queue(self, object_class: str, slot_size: int, factory: Callable[[], Any]) -> RecyclingQueue:
        q = self.queues.get(object_class)
        if q is None:
            q = RecyclingQueue(object_class, slot_size, factory, debug=self.ephemeral.debug)
            self.queues[object_class] = q
        return q

    def reset_ephemeral(self) -> None:
        for q in self.queues.values():
            q.clear()
        self.ephemeral.reset()

    def stats(self) -> dict[str, dict[str, int]]:
        return {"persistent": self.persistent.stats(), "ephemeral": self.ephemeral.stats()}
