import logging
from typing import Callable, List, Tuple

import numpy as np
from scipy import ndimage

from config.exceptions import InvariantError
from tat_field.domain import Covector, Grid2D, Phantom, SpeedField
from tat_field.serializers.spec_serializers import (
    ConstantSpeedSpec,
    GaussianComponent,
    PaperDefaultSpeedSpec,
    PhantomSpec,
    RadialBumpSpeedSpec,
    SmoothedDiscComponent,
)

logger = logging.getLogger(__name__)

MIN_GRID_POINTS = 16


def _psi(s: np.ndarray) -> np.ndarray:
    positive = s > 0
    return np.where(positive, np.exp(-1.0 / np.where(positive, s, 1.0)), 0.0)


def smooth_step(x) -> np.ndarray:
    """
    C^∞ 단조 증가 계단 함수

    0 for x ≤ 0, 1 for x ≥ 1 and ψ(x)/(ψ(x)+ψ(1−x)) in between, with
    ψ(s) = exp(−1/s). Takes the value 0.5 at x = 0.5.
    """
    x = np.asarray(x, dtype=np.float64)
    a = _psi(x)
    b = _psi(1.0 - x)
    return a / (a + b)


def smooth_cutoff_eta(radius: float, taper: float) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """
    반지름 방향 C^∞ cutoff η 를 반환

    Args:
        radius (float): support radius, η = 0 for |x| ≥ radius
        taper (float): width of the transition, η = 1 for |x| ≤ radius − taper

    Returns:
        Callable: η(x, y), vectorized over numpy arrays

    Raises:
        InvariantError: unless 0 < taper < radius ≤ 1
    """
    if not (0 < taper < radius <= 1.0):
        raise InvariantError(f"cutoff requires 0 < taper < radius <= 1, got taper={taper}, radius={radius}")

    def eta(x, y):
        rho = np.hypot(x, y)
        return smooth_step((radius - rho) / taper)

    return eta


def make_grid(L: float, n: int, pml_width: float = 0.0) -> Grid2D:
    """
    [−L, L]² 균일 격자 생성

    Raises:
        InvariantError: n < 16, L <= 1 (B₁(0) must be strictly interior),
            negative pml_width or a band reaching the unit disc
    """
    if n < MIN_GRID_POINTS:
        raise InvariantError(f"grid needs n >= {MIN_GRID_POINTS} points per axis, got {n}")
    if L <= 1.0:
        raise InvariantError(f"domain too small: half width L={L} must exceed 1 so that B_1(0) is interior")
    if pml_width < 0:
        raise InvariantError(f"pml_width must be >= 0, got {pml_width}")
    if L - pml_width <= 1.0:
        raise InvariantError(f"absorbing band of width {pml_width} reaches the unit disc (L={L})")
    grid = Grid2D(half_width=float(L), n=int(n), pml_width=float(pml_width))
    logger.debug(f"grid L={L} n={n} h={grid.h:.5f} pml={pml_width}")
    return grid


def evaluate_speed(spec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Analytic c(x, y) of a speed spec; exactly 1 for |x| ≥ 1."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if isinstance(spec, ConstantSpeedSpec):
        if spec.c0 == 1.0:
            return np.ones(np.broadcast(x, y).shape)
        eta = smooth_cutoff_eta(1.0, 0.2)
        return 1.0 + (spec.c0 - 1.0) * eta(x, y)
    if isinstance(spec, PaperDefaultSpeedSpec):
        eta = smooth_cutoff_eta(spec.radius, spec.taper)
        return 1.0 + spec.amplitude * np.sin(spec.kx * x) * np.cos(spec.ky * y) * eta(x, y)
    if isinstance(spec, RadialBumpSpeedSpec):
        eta = smooth_cutoff_eta(spec.radius, spec.taper)
        return 1.0 + spec.a * np.exp(-(x**2 + y**2) / spec.sigma**2) * eta(x, y)
    raise InvariantError(f"unknown speed spec: {spec!r}")


def sample_speed(spec, grid: Grid2D) -> SpeedField:
    """
    speed spec 을 격자에 샘플링

    Raises:
        InvariantError: the speed spec yields min c <= 0
    """
    X, Y = grid.mesh
    c = evaluate_speed(spec, X, Y)
    c = np.where(grid.radius >= 1.0, 1.0, c)
    if c.min() <= 0:
        raise InvariantError(f"speed spec {spec.kind} produces min c = {c.min():.4g} <= 0")
    field = SpeedField(grid=grid, c=c)
    logger.info(f"speed {spec.kind}: c in [{field.min_speed:.4f}, {field.max_speed:.4f}]")
    return field


def _component_values(component, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    cx, cy = component.center
    rho = np.hypot(X - cx, Y - cy)
    if isinstance(component, GaussianComponent):
        s = component.sigma
        cut = smooth_step((5.0 * s - rho) / s)
        return component.amp * np.exp(-rho**2 / (2.0 * s**2)) * cut
    if isinstance(component, SmoothedDiscComponent):
        edge = component.radius + component.taper
        return component.amp * smooth_step((edge - rho) / component.taper)
    raise InvariantError(f"unknown phantom component: {component!r}")


def make_phantom(spec: PhantomSpec, grid: Grid2D) -> Phantom:
    """
    phantom spec 으로부터 초기 압력 f 생성

    Args:
        spec (PhantomSpec): components and support margin
        grid (Grid2D): target grid

    Returns:
        Phantom: sum of the components, exactly 0 for |x| >= 1 − margin

    Raises:
        InvariantError: a component support exits B_{1−margin}(0)
    """
    limit = 1.0 - spec.margin
    X, Y = grid.mesh
    f = np.zeros(grid.shape)
    for i, component in enumerate(spec.components):
        reach = float(np.hypot(*component.center)) + component.support_radius
        if reach > limit:
            raise InvariantError(
                f"phantom component {i} ({component.kind}) support exits B_1(0): "
                f"|center| + support = {reach:.4g} > 1 - margin = {limit:.4g}"
            )
        f += _component_values(component, X, Y)
    f[grid.radius >= limit] = 0.0
    logger.debug(f"phantom with {len(spec.components)} components, max |f| = {np.abs(f).max():.4g}")
    return Phantom(grid=grid, f=f, margin=spec.margin)


def _gradient(p: Phantom) -> Tuple[np.ndarray, np.ndarray]:
    gy, gx = np.gradient(p.f, p.grid.h)
    return gx, gy


def edge_mask(p: Phantom, threshold: float) -> np.ndarray:
    if not (0 < threshold < 1):
        raise InvariantError(f"edge threshold must lie in (0, 1), got {threshold}")
    gx, gy = _gradient(p)
    magnitude = np.hypot(gx, gy)
    peak = magnitude.max()
    if peak == 0:
        return np.zeros(p.grid.shape, dtype=bool)
    return magnitude >= threshold * peak


def phantom_edges(p: Phantom, threshold: float = 0.5) -> List[Covector]:
    """
    강한 gradient 노드로 WF(f) 근사

    Every selected node appears twice, with ξ = +∇f/|∇f| and ξ = −∇f/|∇f|.

    Returns:
        list[Covector]: empty for f ≡ 0
    """
    mask = edge_mask(p, threshold)
    if not mask.any():
        return []
    gx, gy = _gradient(p)
    X, Y = p.grid.mesh
    magnitude = np.hypot(gx, gy)
    edges = []
    for iy, ix in zip(*np.nonzero(mask)):
        y = (X[iy, ix], Y[iy, ix])
        direction = (gx[iy, ix] / magnitude[iy, ix], gy[iy, ix] / magnitude[iy, ix])
        edges.append(Covector(y, direction))
        edges.append(Covector(y, (-direction[0], -direction[1])))
    logger.info(f"{mask.sum()} edge nodes above {threshold:.2f} of max |grad f|")
    return edges


def label_edge_rims(p: Phantom, threshold: float = 0.5) -> Tuple[np.ndarray, int]:
    """Connected components (8-connectivity) of the edge node set."""
    mask = edge_mask(p, threshold)
    labels, count = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    return labels, int(count)


def dirichlet_energy(f: np.ndarray) -> float:
    """½∫|∇f|² with forward differences and zero values beyond the array."""
    padded = np.pad(np.asarray(f, dtype=np.float64), 1)
    dx = np.diff(padded, axis=1)
    dy = np.diff(padded, axis=0)
    return 0.5 * float(np.sum(dx**2) + np.sum(dy**2))
