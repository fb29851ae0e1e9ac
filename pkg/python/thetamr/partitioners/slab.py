"""Axis-aligned slab partitioner."""

import numpy as np

from thetamr.exceptions import PartitionError
from thetamr.partitioners.base import BasePartitioner, cell_coordinates
from thetamr.types import CubeConfig


class SlabPartitioner(BasePartitioner):
    """Row-major traversal with `outer_axis` varying slowest."""

    name = "slab"

    def __init__(self, outer_axis: int = 0):
        self.outer_axis = outer_axis

    def options(self):
        return (("outer_axis", self.outer_axis),)

    def cell_order(self, config: CubeConfig) -> np.ndarray:
        if not 0 <= self.outer_axis < config.dims:
            raise PartitionError(
                f"outer axis {self.outer_axis} outside a {config.dims}-d cube"
            )
        axes = [self.outer_axis] + [
            a for a in range(config.dims) if a != self.outer_axis
        ]
        coords = cell_coordinates(config.dims, config.eta)
        return np.lexsort(tuple(coords[a] for a in reversed(axes)))
