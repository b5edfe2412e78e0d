from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Uniform 1-D cell grid on ``[x_lo, x_hi]`` with ``n`` cells.

    Cell-averaged fields live on :attr:`centers`. Cumulative quantities
    (``u``, ``z``) and the perceived density ``xi`` are sampled at the left
    face of each cell, :attr:`faces`.
    """

    x_lo: float
    x_hi: float
    n: int

    def __post_init__(self):
        if not self.x_lo < self.x_hi:
            raise ValueError(f"empty domain [{self.x_lo}, {self.x_hi}]")
        if self.n < 1:
            raise ValueError("grid needs at least one cell")

    @property
    def dx(self):
        return (self.x_hi - self.x_lo) / self.n

    @property
    def centers(self):
        return self.x_lo + (np.arange(self.n) + 0.5) * self.dx

    @property
    def faces(self):
        """Left face of every cell (length ``n``)."""
        return self.x_lo + np.arange(self.n) * self.dx

    @property
    def all_faces(self):
        return self.x_lo + np.arange(self.n + 1) * self.dx

    @property
    def length(self):
        return self.x_hi - self.x_lo

    def refined(self, factor):
        return Grid(self.x_lo, self.x_hi, self.n * factor)
