from dataclasses import dataclass, replace
from functools import cached_property
from typing import Optional, Tuple

import numpy as np

from config.exceptions import InvariantError

SMALL = 'small'
LARGE = 'large'
MIN_QUADRATURE_NODES = 64


@dataclass(frozen=True)
class DetectorConfig:
    """
    원형 적분 검출기 배치

    ``small``: circles of radius r centred on |z| = R with R − r ≥ 1, the
    object lies outside every detector disc.
    ``large``: R = 1 and r ≥ 2, every detector disc contains the object.

    ``arc`` restricts the centres to a sub-arc Γ = (a, b) of S¹; None is the
    full circle.
    """
    mode: str
    r: float
    R: float = 1.0
    n_theta: int = 180
    n_alpha: int = 256
    T: float = 5.0
    arc: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if self.mode not in (SMALL, LARGE):
            raise InvariantError(f"detector mode must be '{SMALL}' or '{LARGE}', got {self.mode!r}")
        if self.r <= 0:
            raise InvariantError(f"detector radius r must be > 0, got {self.r}")
        if self.mode == SMALL and self.R - self.r < 1.0 - 1e-12:
            raise InvariantError(f"small radius detectors need R - r >= 1, got R={self.R}, r={self.r}")
        if self.mode == LARGE:
            if self.R != 1.0:
                raise InvariantError(f"large radius detectors are centred on the unit circle (R = 1), got R={self.R}")
            if self.r < 2.0 - 1e-12:
                raise InvariantError(f"large radius detectors need r >= 2, got r={self.r}")
        if self.n_alpha < MIN_QUADRATURE_NODES:
            raise InvariantError(f"n_alpha must be >= {MIN_QUADRATURE_NODES}, got {self.n_alpha}")
        if self.n_theta < 1:
            raise InvariantError(f"n_theta must be >= 1, got {self.n_theta}")
        if self.T <= 0:
            raise InvariantError(f"record length T must be > 0, got {self.T}")
        if self.arc is not None:
            a, b = (float(v) for v in self.arc)
            if not (a < b <= a + 2.0 * np.pi):
                raise InvariantError(f"aperture arc must satisfy a < b <= a + 2pi, got ({a}, {b})")
            object.__setattr__(self, 'arc', (a, b))

    @property
    def reach(self) -> float:
        """Largest |x| over all detector circles."""
        return self.R + self.r

    @property
    def clearance(self) -> float:
        """Smallest |x| over all detector circles (≥ 1)."""
        return abs(self.R - self.r)

    @property
    def full_circle(self) -> bool:
        return self.arc is None

    def with_radii(self, R: Optional[float] = None, r: Optional[float] = None) -> 'DetectorConfig':
        return replace(self, R=self.R if R is None else float(R), r=self.r if r is None else float(r))

    def describe(self) -> dict:
        return {
            'mode': self.mode,
            'R': self.R,
            'r': self.r,
            'n_theta': self.n_theta,
            'n_alpha': self.n_alpha,
            'T': self.T,
            'arc': list(self.arc) if self.arc is not None else None,
        }


@dataclass(frozen=True, eq=False)
class Sinogram:
    """
    Mf(t_i, θ_j) 측정값

    ``data[i, j]`` is the ring average at t_i = i·dt for the detector centred
    at ``theta[j]``.
    """
    data: np.ndarray
    dt: float
    theta: np.ndarray
    config: DetectorConfig

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        theta = np.array(self.theta, dtype=np.float64)
        if data.ndim != 2 or data.shape[1] != theta.size:
            raise InvariantError(f"sinogram data {data.shape} does not match {theta.size} detector angles")
        if not np.all(np.isfinite(data)):
            raise InvariantError("sinogram values must be finite")
        if self.dt <= 0:
            raise InvariantError(f"sinogram time step must be > 0, got {self.dt}")
        if self.config.arc is not None:
            a, b = self.config.arc
            if np.any(theta <= a) or np.any(theta >= b):
                raise InvariantError(f"detector angles must lie strictly inside the aperture ({a}, {b})")
        object.__setattr__(self, 'data', data)
        object.__setattr__(self, 'theta', theta)

    @property
    def nt(self) -> int:
        return self.data.shape[0]

    @cached_property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.nt)

    def with_data(self, data: np.ndarray) -> 'Sinogram':
        return Sinogram(data=data, dt=self.dt, theta=self.theta, config=self.config)


@dataclass(frozen=True, eq=False)
class RadiusFamily:
    """
    P(t, θ, ρ): ring averages over a lattice of detector radii

    ``radii`` holds the swept R (small mode) or r (large mode); ``data`` is
    indexed ``[t, θ, ρ]`` with time spacing ``dt``.
    """
    data: np.ndarray
    dt: float
    theta: np.ndarray
    radii: np.ndarray
    config: DetectorConfig

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.shape[1:] != (np.size(self.theta), np.size(self.radii)):
            raise InvariantError(
                f"family data {data.shape} does not match {np.size(self.theta)} angles x {np.size(self.radii)} radii"
            )
        object.__setattr__(self, 'data', data)
        object.__setattr__(self, 'theta', np.asarray(self.theta, dtype=np.float64))
        object.__setattr__(self, 'radii', np.asarray(self.radii, dtype=np.float64))

    @property
    def mode(self) -> str:
        return self.config.mode

    def at_radius(self, index: int) -> np.ndarray:
        return self.data[:, :, index]
