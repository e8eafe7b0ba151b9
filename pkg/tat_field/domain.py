from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from config.exceptions import InvariantError

# c ≡ 1 outside the unit disc is checked to this tolerance
EXTERIOR_SPEED_TOL = 1e-12


@dataclass(frozen=True)
class Grid2D:
    """
    [−L, L]² 위의 균일 격자

    Arrays on this grid are indexed ``[iy, ix]`` with node ``(ix, iy)`` at
    ``(−L + ix·h, −L + iy·h)``. The outer ``pml_width`` band is the absorbing
    layer; everything inside ``L − pml_width`` is the interior.
    """
    half_width: float
    n: int
    pml_width: float = 0.0

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / (self.n - 1)

    @property
    def shape(self) -> tuple:
        return (self.n, self.n)

    @property
    def interior_half_width(self) -> float:
        return self.half_width - self.pml_width

    @cached_property
    def coords(self) -> np.ndarray:
        return -self.half_width + self.h * np.arange(self.n)

    @cached_property
    def mesh(self) -> tuple:
        X, Y = np.meshgrid(self.coords, self.coords, indexing='xy')
        X.flags.writeable = False
        Y.flags.writeable = False
        return X, Y

    @cached_property
    def radius(self) -> np.ndarray:
        X, Y = self.mesh
        r = np.hypot(X, Y)
        r.flags.writeable = False
        return r

    def in_interior(self, points: np.ndarray) -> np.ndarray:
        """True for points inside the box |x_i| <= L − pml_width."""
        points = np.asarray(points, dtype=np.float64)
        return np.all(np.abs(points) <= self.interior_half_width + 1e-12, axis=-1)

    def same_as(self, other: 'Grid2D') -> bool:
        return (self.n == other.n
                and self.half_width == other.half_width
                and self.pml_width == other.pml_width)


@dataclass(frozen=True, eq=False)
class SpeedField:
    grid: Grid2D
    c: np.ndarray

    def __post_init__(self):
        c = np.array(self.c, dtype=np.float64)
        if c.shape != self.grid.shape:
            raise InvariantError(f"speed array shape {c.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(c)) or c.min() <= 0:
            raise InvariantError("speed must be finite and positive (min c > 0)")
        exterior = self.grid.radius >= 1.0
        if exterior.any() and np.max(np.abs(c[exterior] - 1.0)) > EXTERIOR_SPEED_TOL:
            raise InvariantError("speed must equal 1 at every node with |x| >= 1")
        c.flags.writeable = False
        object.__setattr__(self, 'c', c)

    @property
    def max_speed(self) -> float:
        return float(self.c.max())

    @property
    def min_speed(self) -> float:
        return float(self.c.min())

    @cached_property
    def laplacian_bound(self) -> float:
        """max |Δ_h c| over the interior nodes (smoothness proxy)."""
        c, h = self.c, self.grid.h
        lap = (c[1:-1, 2:] + c[1:-1, :-2] + c[2:, 1:-1] + c[:-2, 1:-1] - 4.0 * c[1:-1, 1:-1]) / h**2
        return float(np.abs(lap).max())


@dataclass(frozen=True, eq=False)
class Phantom:
    grid: Grid2D
    f: np.ndarray
    margin: float = 0.05

    def __post_init__(self):
        f = np.array(self.f, dtype=np.float64)
        if f.shape != self.grid.shape:
            raise InvariantError(f"phantom array shape {f.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(f)):
            raise InvariantError("phantom values must be finite")
        outside = self.grid.radius >= 1.0 - self.margin
        if np.any(f[outside] != 0.0):
            raise InvariantError(f"phantom must vanish for |x| >= 1 - margin ({1.0 - self.margin})")
        f.flags.writeable = False
        object.__setattr__(self, 'f', f)

    def support_mask(self) -> np.ndarray:
        return self.grid.radius < 1.0 - self.margin


@dataclass(frozen=True)
class Covector:
    """
    위상 공간 표본 (y, ξ)

    ``xi`` carries both the direction and the frequency scale |ξ|.
    """
    y: tuple
    xi: tuple = field(default=(1.0, 0.0))

    def __post_init__(self):
        y = tuple(float(v) for v in self.y)
        xi = tuple(float(v) for v in self.xi)
        if np.hypot(*xi) <= 0:
            raise InvariantError("covector xi must be nonzero (|xi| > 0)")
        if np.hypot(*y) >= 1.0:
            raise InvariantError(f"covector base point must satisfy |y| < 1, got {y}")
        object.__setattr__(self, 'y', y)
        object.__setattr__(self, 'xi', xi)

    @property
    def norm(self) -> float:
        return float(np.hypot(*self.xi))

    @property
    def direction(self) -> np.ndarray:
        return np.asarray(self.xi) / self.norm

    @property
    def position(self) -> np.ndarray:
        return np.asarray(self.y)

    def scaled(self, factor: float) -> 'Covector':
        return Covector(self.y, (self.xi[0] * factor, self.xi[1] * factor))
