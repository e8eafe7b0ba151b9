"""
원형 적분 검출기 측정 연산자 M

A detector circle C(θ, α) = R(cos θ, sin θ) + r(cos α, sin α) is sampled at
``n_alpha`` equispaced α nodes. Field values at the nodes come from bilinear
interpolation, and the trapezoid rule averages them. Each ring is therefore one
row of a sparse matrix acting on the flattened grid. The wave solver probes
the field once per step and the matrix turns the snapshot into one sinogram
row.
"""
import logging
from typing import Callable, Optional, Sequence, Union

import numpy as np
from django.conf import settings
from scipy import sparse

from config.exceptions import InvariantError
from tat_detector.domain import LARGE, SMALL, DetectorConfig, RadiusFamily, Sinogram
from tat_field.domain import Grid2D, Phantom, SpeedField
from tat_wave.domain import PmlProfile
from tat_wave.services import cfl_time_step, solve_forward, step_count

logger = logging.getLogger(__name__)


def theta_grid(config: DetectorConfig) -> np.ndarray:
    """
    검출기 중심 각도

    Full circle: θ_j = 2πj/n. Sub-arc (a, b): cell midpoints
    a + (j + ½)(b − a)/n, so that no angle sits on the aperture edge.
    """
    n = config.n_theta
    if config.arc is None:
        return 2.0 * np.pi * np.arange(n) / n
    a, b = config.arc
    return a + (np.arange(n) + 0.5) * (b - a) / n


def quadrature_angles(n_alpha: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(n_alpha) / n_alpha


def detector_points(config: DetectorConfig, theta: float) -> np.ndarray:
    """C(θ, α_k) for the ``n_alpha`` quadrature nodes, shape (n_alpha, 2)."""
    alpha = quadrature_angles(config.n_alpha)
    center = config.R * np.array([np.cos(theta), np.sin(theta)])
    return center + config.r * np.stack([np.cos(alpha), np.sin(alpha)], axis=1)


def bilinear_weights(grid: Grid2D, points: np.ndarray):
    """
    격자 노드 인덱스와 bilinear 가중치

    Returns:
        tuple: (cols, weights), both of shape (m, 4); cols index the
        flattened ``[iy, ix]`` array
    """
    n, h, L = grid.n, grid.h, grid.half_width
    fx = (points[:, 0] + L) / h
    fy = (points[:, 1] + L) / h
    ix = np.clip(np.floor(fx).astype(np.int64), 0, n - 2)
    iy = np.clip(np.floor(fy).astype(np.int64), 0, n - 2)
    wx = fx - ix
    wy = fy - iy
    base = iy * n + ix
    cols = np.stack([base, base + 1, base + n, base + n + 1], axis=1)
    weights = np.stack([(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy], axis=1)
    return cols, weights


def ring_operator(
    grid: Grid2D,
    centers: np.ndarray,
    radii: Union[float, np.ndarray],
    n_alpha: int,
) -> sparse.csr_matrix:
    """
    원 평균 행렬 조립

    Row i is the discrete circular mean over the circle of radius
    ``radii[i]`` about ``centers[i]``. Duplicate node indices within a row are
    merged, so rows built from equal inputs are bit-identical.

    Raises:
        InvariantError: a quadrature node leaves the grid interior (the PML
            band or beyond)
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    m = centers.shape[0]
    radii = np.broadcast_to(np.asarray(radii, dtype=np.float64), (m,))
    alpha = quadrature_angles(n_alpha)
    unit = np.stack([np.cos(alpha), np.sin(alpha)], axis=1)

    indptr = [0]
    indices = []
    values = []
    for i in range(m):
        points = centers[i] + radii[i] * unit
        if not grid.in_interior(points).all():
            raise InvariantError(
                f"detector circle about ({centers[i][0]:.4f}, {centers[i][1]:.4f}) with r={radii[i]:.4f} "
                f"leaves the grid interior |x_i| <= {grid.interior_half_width}"
            )
        cols, weights = bilinear_weights(grid, points)
        unique, inverse = np.unique(cols.ravel(), return_inverse=True)
        merged = np.bincount(inverse, weights=weights.ravel() / n_alpha, minlength=unique.size)
        indices.append(unique)
        values.append(merged)
        indptr.append(indptr[-1] + unique.size)
    return sparse.csr_matrix(
        (np.concatenate(values), np.concatenate(indices), np.asarray(indptr)),
        shape=(m, grid.n * grid.n),
    )


def measurement_matrix(grid: Grid2D, config: DetectorConfig, theta: Optional[np.ndarray] = None) -> sparse.csr_matrix:
    """Q with one row per detector angle of ``config``."""
    theta = theta_grid(config) if theta is None else np.asarray(theta, dtype=np.float64)
    centers = config.R * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return ring_operator(grid, centers, config.r, config.n_alpha)


def ring_average(
    u: Union[np.ndarray, Callable],
    config: DetectorConfig,
    theta: float,
    grid: Optional[Grid2D] = None,
) -> float:
    """
    한 검출기 원 위의 평균

    Args:
        u: a field snapshot on ``grid``, or a callable u(x, y) evaluated at
            the quadrature nodes directly
        config (DetectorConfig): detector geometry
        theta (float): detector centre angle
        grid (Grid2D): required for sampled snapshots

    Raises:
        InvariantError: a node falls outside the grid interior
    """
    if callable(u):
        points = detector_points(config, theta)
        return float(np.mean(u(points[:, 0], points[:, 1])))
    if grid is None:
        raise InvariantError("ring_average of a sampled field needs its grid")
    row = measurement_matrix(grid, config, np.array([theta]))
    return float((row @ np.asarray(u, dtype=np.float64).ravel())[0])


class RingRecorder:
    """solve_forward probe: applies Q to every ``stride``-th snapshot."""

    def __init__(self, matrix: sparse.csr_matrix, stride: int = 1):
        self.matrix = matrix
        self.stride = stride
        self.count = 0
        self.rows = []

    def __call__(self, t: float, u: np.ndarray) -> None:
        if self.count % self.stride == 0:
            self.rows.append(self.matrix @ u.ravel())
        self.count += 1

    def stacked(self) -> np.ndarray:
        return np.asarray(self.rows)


def _time_step(speed: SpeedField, dt: Optional[float]) -> float:
    return cfl_time_step(speed.grid, speed) if dt is None else float(dt)


def forward_operator(
    f: Phantom,
    speed: SpeedField,
    config: DetectorConfig,
    pml: PmlProfile,
    dt: Optional[float] = None,
    progress: Optional[bool] = None,
) -> Sinogram:
    """
    Mf 계산: 파동 방정식 한 번 풀고 매 스텝마다 원 평균 기록

    Args:
        f (Phantom): initial pressure
        speed (SpeedField): wave speed on the phantom grid
        config (DetectorConfig): detector geometry and record length
        pml (PmlProfile): absorbing layer
        dt (float): time step, CFL policy by default

    Returns:
        Sinogram: ``step_count(T, dt) + 1`` rows, t = 0 included

    Raises:
        InvariantError: detector circles reach the PML band
    """
    grid = f.grid
    dt = _time_step(speed, dt)
    theta = theta_grid(config)
    recorder = RingRecorder(measurement_matrix(grid, config, theta))
    solve_forward(f, speed, config.T, pml, probe=recorder, dt=dt, progress=progress)
    sinogram = Sinogram(data=recorder.stacked(), dt=dt, theta=theta, config=config)
    logger.info(f"forward {config.mode} R={config.R} r={config.r}: sinogram {sinogram.data.shape}, dt={dt:.5g}")
    return sinogram


def _sweep(
    f: Phantom,
    speed: SpeedField,
    pml: PmlProfile,
    config: DetectorConfig,
    centers: np.ndarray,
    ring_radii: np.ndarray,
    radii: np.ndarray,
    theta: np.ndarray,
    record_stride: int,
    dt: Optional[float],
    progress: Optional[bool],
) -> RadiusFamily:
    if record_stride < 1:
        raise InvariantError(f"record_stride must be >= 1, got {record_stride}")
    dt = _time_step(speed, dt)
    matrix = ring_operator(f.grid, centers, ring_radii, config.n_alpha)
    recorder = RingRecorder(matrix, record_stride)
    solve_forward(f, speed, config.T, pml, probe=recorder, dt=dt, progress=progress)
    data = recorder.stacked().reshape(-1, theta.size, radii.size)
    logger.info(
        f"{config.mode} radius sweep over {radii.size} radii x {theta.size} angles: "
        f"{data.shape[0]} records every {record_stride} steps ({step_count(config.T, dt)} steps)"
    )
    return RadiusFamily(data=data, dt=dt * record_stride, theta=theta, radii=radii, config=config)


def sweep_small_radius(
    f: Phantom,
    speed: SpeedField,
    pml: PmlProfile,
    config: DetectorConfig,
    R_values: Sequence[float],
    record_stride: int = 1,
    dt: Optional[float] = None,
    progress: Optional[bool] = None,
) -> RadiusFamily:
    """
    고정 r 에서 중심 반지름 R 을 바꾸며 P(t, θ, R) 기록

    One wave solve serves every (θ, R) pair.

    Raises:
        InvariantError: some R violates R − r >= 1, or a circle reaches the PML
    """
    if config.mode != SMALL:
        raise InvariantError(f"small radius sweep needs a '{SMALL}' detector config, got {config.mode!r}")
    radii = np.asarray(R_values, dtype=np.float64)
    for R in radii:
        config.with_radii(R=R)
    theta = theta_grid(config)
    directions = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    centers = (directions[:, None, :] * radii[None, :, None]).reshape(-1, 2)
    return _sweep(f, speed, pml, config, centers, np.full(centers.shape[0], config.r), radii, theta,
                  record_stride, dt, progress)


def sweep_large_radius(
    f: Phantom,
    speed: SpeedField,
    pml: PmlProfile,
    config: DetectorConfig,
    r_values: Sequence[float],
    record_stride: int = 1,
    dt: Optional[float] = None,
    progress: Optional[bool] = None,
) -> RadiusFamily:
    """중심을 단위원에 두고 반지름 r 을 바꾸며 P(t, θ, r) 기록"""
    if config.mode != LARGE:
        raise InvariantError(f"large radius sweep needs a '{LARGE}' detector config, got {config.mode!r}")
    radii = np.asarray(r_values, dtype=np.float64)
    for r in radii:
        config.with_radii(r=r)
    theta = theta_grid(config)
    directions = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    centers = np.repeat(directions, radii.size, axis=0)
    ring_radii = np.tile(radii, theta.size)
    return _sweep(f, speed, pml, config, centers, ring_radii, radii, theta, record_stride, dt, progress)


def _padded_lattice(P: RadiusFamily, even_extension: bool) -> np.ndarray:
    data = P.data
    if even_extension:
        # P(−Δt) = P(Δt) for data of a time-even solution
        data = np.concatenate([data[1:2], data], axis=0)
    if P.config.full_circle:
        data = np.concatenate([data[:, -1:], data, data[:, :1]], axis=1)
    return data


def _spacing(values: np.ndarray, name: str) -> float:
    steps = np.diff(values)
    if steps.size == 0 or not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
        raise InvariantError(f"{name} lattice must be uniform with at least two points")
    return float(steps[0])


def _cylinder_residual(P: RadiusFamily, angular: bool, even_extension: bool) -> np.ndarray:
    nt, n_theta, n_rho = P.data.shape
    if n_rho < 3 or n_theta < 3 or nt + int(even_extension) < 3:
        raise InvariantError(
            f"residual stencil needs >= 3 points per axis, got t={nt}, theta={n_theta}, radius={n_rho}"
        )
    d_theta = _spacing(P.theta, 'theta')
    d_rho = _spacing(P.radii, 'radius')
    dt = P.dt

    X = _padded_lattice(P, even_extension)
    C = X[1:-1, 1:-1, 1:-1]
    p_tt = (X[2:, 1:-1, 1:-1] - 2.0 * C + X[:-2, 1:-1, 1:-1]) / dt**2
    p_rr = (X[1:-1, 1:-1, 2:] - 2.0 * C + X[1:-1, 1:-1, :-2]) / d_rho**2
    p_r = (X[1:-1, 1:-1, 2:] - X[1:-1, 1:-1, :-2]) / (2.0 * d_rho)
    rho = P.radii[1:-1][None, None, :]
    residual = p_tt - p_rr - p_r / rho
    if angular:
        p_qq = (X[1:-1, 2:, 1:-1] - 2.0 * C + X[1:-1, :-2, 1:-1]) / d_theta**2
        residual -= p_qq / rho**2
    return residual


def cylinder_residual_small(P: RadiusFamily, even_extension: bool = False) -> np.ndarray:
    """
    P_tt − (1/R)(R P_R)_R − P_θθ/R² 의 중심 차분

    Evaluated at interior lattice points only: boundary times, boundary radii
    and (for a sub-arc) boundary angles are dropped. θ wraps around on the
    full circle. With ``even_extension`` the t = 0 row is kept using
    P(−Δt) = P(Δt).
    """
    return _cylinder_residual(P, angular=True, even_extension=even_extension)


def cylinder_residual_large(P: RadiusFamily, even_extension: bool = False) -> np.ndarray:
    """P_tt − (1/r)(r P_r)_r 의 중심 차분 (θ 미분 항 없음)"""
    return _cylinder_residual(P, angular=False, even_extension=even_extension)


def rms(values: np.ndarray) -> float:
    values = np.asarray(values)
    return float(np.sqrt(np.mean(values**2))) if values.size else 0.0


def add_noise(sinogram: Sinogram, level: float, seed: Optional[int] = None) -> Sinogram:
    """
    가산 가우시안 잡음 (확장 기능)

    Standard deviation ``level``·max|data|; a seeded generator makes the
    result reproducible.
    """
    if level < 0:
        raise InvariantError(f"noise level must be >= 0, got {level}")
    if level == 0:
        return sinogram
    seed = getattr(settings, 'TAT_DEFAULT_SEED', 0) if seed is None else seed
    rng = np.random.default_rng(seed)
    scale = level * float(np.abs(sinogram.data).max())
    noisy = sinogram.data + scale * rng.standard_normal(sinogram.data.shape)
    logger.info(f"added gaussian noise: level={level}, sigma={scale:.4g}, seed={seed}")
    return sinogram.with_data(noisy)
