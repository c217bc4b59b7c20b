"""Real-valued profiles sampled on a uniform grid over [0, 1]."""

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch


def uniform_nodes(m: int) -> np.ndarray:
    """The m + 1 equidistant nodes covering [0, 1]."""
    return np.linspace(0.0, 1.0, m + 1)


@dataclass(frozen=True)
class GridFunction:
    """Scalar function of z known through samples at ``m + 1`` uniform nodes.

    The carrier type for reaction profiles, feedback-gain profiles and agent
    states.  Values are immutable after construction; evaluation between
    nodes is linear interpolation.
    """

    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1 or vals.size < 2:
            raise ValueError("GridFunction needs a 1-D array with at least two nodes")
        if not np.all(np.isfinite(vals)):
            raise ValueError("GridFunction samples must be finite")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_callable(cls, fn, m: int) -> "GridFunction":
        z = uniform_nodes(m)
        return cls(np.broadcast_to(np.asarray(fn(z), dtype=float), z.shape))

    @classmethod
    def constant(cls, value: float, m: int) -> "GridFunction":
        return cls(np.full(m + 1, float(value)))

    @property
    def m(self) -> int:
        return self.values.size - 1

    @property
    def h(self) -> float:
        return 1.0 / self.m

    @property
    def nodes(self) -> np.ndarray:
        return uniform_nodes(self.m)

    def __call__(self, z):
        return np.interp(z, self.nodes, self.values)

    def integral(self) -> float:
        """Composite-trapezoid integral over [0, 1]."""
        return float(np.trapezoid(self.values, dx=self.h))

    def _binary(self, other, op):
        if isinstance(other, GridFunction):
            require_same_grid(self, other)
            return GridFunction(op(self.values, other.values))
        return GridFunction(op(self.values, float(other)))

    def __add__(self, other):
        return self._binary(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(-self.values)


def require_same_grid(*funcs) -> int:
    """Return the shared interval count, raising GridMismatch otherwise."""
    sizes = {f.m for f in funcs}
    if len(sizes) != 1:
        raise GridMismatch(f"grids differ: interval counts {sorted(sizes)}")
    return sizes.pop()


def trapezoid_weights(m: int) -> np.ndarray:
    """Quadrature weights of the composite trapezoid rule on m intervals."""
    w = np.full(m + 1, 1.0 / m)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w
