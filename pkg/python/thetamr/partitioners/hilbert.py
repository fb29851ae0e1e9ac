"""n-dimensional Hilbert curve partitioner."""

from functools import lru_cache
from typing import List, Sequence

import numpy as np

from thetamr.exceptions import PartitionError
from thetamr.partitioners.base import BasePartitioner, cell_coordinates
from thetamr.types import CubeConfig


def _check(coords: Sequence[int], eta: int) -> None:
    if eta < 1 or eta * len(coords) > 62:
        raise PartitionError(f"unsupported curve order eta={eta} for {len(coords)} dims")
    side = 1 << eta
    for value in coords:
        if not 0 <= value < side:
            raise PartitionError(f"coordinate {value} outside [0, {side})")


def hilbert_index(coords: Sequence[int], eta: int) -> int:
    """Position of a cell on the curve (Skilling's transpose construction)."""
    _check(coords, eta)
    x = [int(c) for c in coords]
    n = len(x)
    q = 1 << (eta - 1)
    while q > 1:
        p = q - 1
        for i in range(n):
            if x[i] & q:
                x[0] ^= p
            else:
                t = (x[0] ^ x[i]) & p
                x[0] ^= t
                x[i] ^= t
        q >>= 1
    for i in range(1, n):
        x[i] ^= x[i - 1]
    t = 0
    q = 1 << (eta - 1)
    while q > 1:
        if x[n - 1] & q:
            t ^= q - 1
        q >>= 1
    for i in range(n):
        x[i] ^= t

    index = 0
    for bit in range(eta - 1, -1, -1):
        for i in range(n):
            index = (index << 1) | ((x[i] >> bit) & 1)
    return index


def hilbert_inverse(index: int, dims: int, eta: int) -> List[int]:
    """Cell coordinates at a curve position."""
    if eta < 1 or eta * dims > 62:
        raise PartitionError(f"unsupported curve order eta={eta} for {dims} dims")
    if not 0 <= index < 1 << (eta * dims):
        raise PartitionError(f"curve position {index} out of range")
    x = [0] * dims
    shift = eta * dims
    for bit in range(eta - 1, -1, -1):
        for i in range(dims):
            shift -= 1
            x[i] |= ((index >> shift) & 1) << bit

    n = dims
    t = x[n - 1] >> 1
    for i in range(n - 1, 0, -1):
        x[i] ^= x[i - 1]
    x[0] ^= t
    q = 2
    while q != 1 << eta:
        p = q - 1
        for i in range(n - 1, -1, -1):
            if x[i] & q:
                x[0] ^= p
            else:
                t = (x[0] ^ x[i]) & p
                x[0] ^= t
                x[i] ^= t
        q <<= 1
    return x


def hilbert_indices(coords: np.ndarray, eta: int) -> np.ndarray:
    """Vectorised hilbert_index over coordinates of shape (dims, k)."""
    x = [row.astype(np.int64) for row in np.asarray(coords)]
    n = len(x)
    q = 1 << (eta - 1)
    while q > 1:
        p = q - 1
        for i in range(n):
            high = (x[i] & q) != 0
            if i == 0:
                x[0] = np.where(high, x[0] ^ p, x[0])
                continue
            t = (x[0] ^ x[i]) & p
            x[0], x[i] = np.where(high, x[0] ^ p, x[0] ^ t), np.where(high, x[i], x[i] ^ t)
        q >>= 1
    for i in range(1, n):
        x[i] = x[i] ^ x[i - 1]
    t = np.zeros_like(x[0])
    q = 1 << (eta - 1)
    while q > 1:
        t = np.where((x[n - 1] & q) != 0, t ^ (q - 1), t)
        q >>= 1
    x = [row ^ t for row in x]

    index = np.zeros_like(x[0])
    for bit in range(eta - 1, -1, -1):
        for i in range(n):
            index = (index << 1) | ((x[i] >> bit) & 1)
    return index


@lru_cache(maxsize=64)
def hilbert_order(dims: int, eta: int) -> np.ndarray:
    """Row-major cell ids listed in curve order."""
    positions = hilbert_indices(cell_coordinates(dims, eta), eta)
    order = np.empty(len(positions), dtype=np.int64)
    order[positions] = np.arange(len(positions), dtype=np.int64)
    order.setflags(write=False)
    return order


class HilbertPartitioner(BasePartitioner):
    """Contiguous segments of the Hilbert traversal of the cube."""

    name = "hilbert"

    def cell_order(self, config: CubeConfig) -> np.ndarray:
        return hilbert_order(config.dims, config.eta)
