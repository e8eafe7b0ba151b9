from dataclasses import dataclass, replace

import numpy as np

from tat_field.domain import Grid2D


@dataclass(frozen=True, eq=False)
class PmlProfile:
    """
    흡수층 감쇠 계수

    ``sigma_x`` varies along x (array columns), ``sigma_y`` along y (rows);
    both are 0 in the interior and reach ``sigma_max`` at the outer edge.
    """
    width: float
    sigma_max: float
    order: int
    sigma_x: np.ndarray
    sigma_y: np.ndarray

    @property
    def absorbing(self) -> bool:
        return self.width > 0 and self.sigma_max > 0

    @classmethod
    def closed(cls, grid: Grid2D) -> 'PmlProfile':
        """No damping: the outer ring of the grid is a rigid (Dirichlet) wall."""
        zeros = np.zeros(grid.n)
        return cls(width=0.0, sigma_max=0.0, order=2, sigma_x=zeros, sigma_y=zeros)


@dataclass(frozen=True, eq=False)
class WaveState:
    """
    leapfrog 상태 (u^k, u^{k-1}) 와 PML 보조 변수

    The same container carries the adjoint state during back-propagation,
    where ``u_curr``/``u_prev``/``phi``/``psi`` hold the multipliers of the
    corresponding forward variables.
    """
    u_curr: np.ndarray
    u_prev: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    t: float
    dt: float

    @classmethod
    def zeros(cls, grid: Grid2D, dt: float, t: float = 0.0) -> 'WaveState':
        return cls(
            u_curr=np.zeros(grid.shape),
            u_prev=np.zeros(grid.shape),
            phi=np.zeros(grid.shape),
            psi=np.zeros(grid.shape),
            t=t,
            dt=dt,
        )

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.u_curr).all() and np.isfinite(self.u_prev).all()
                    and np.isfinite(self.phi).all() and np.isfinite(self.psi).all())

    def with_time(self, t: float) -> 'WaveState':
        return replace(self, t=t)
