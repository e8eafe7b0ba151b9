"""
2차 유한차분 파동 방정식 solver (u_tt = c²Δu)

Five-point Laplacian, leapfrog in time and the Grote–Sim split PML. The
outermost ring of grid nodes is held at zero. Every update is written as an
explicit linear map so that ``LeapfrogScheme.transpose_step`` is its exact
matrix transpose; adjoint back-propagation relies on this.
"""
import logging
from typing import Callable, Optional

import numpy as np
from django.conf import settings
from scipy import sparse
from tqdm import tqdm

from config.exceptions import CFLError, InvariantError, SolverDivergenceError
from tat_field.domain import Grid2D, Phantom, SpeedField
from tat_wave.domain import PmlProfile, WaveState

logger = logging.getLogger(__name__)

Probe = Callable[[float, np.ndarray], None]

# reflection coefficient used for the default sigma_max
TARGET_REFLECTION = 1e-3


def laplacian(u: np.ndarray, h: float) -> np.ndarray:
    """5-point Laplacian, zero values beyond the array (symmetric operator)."""
    out = -4.0 * u
    out[1:, :] += u[:-1, :]
    out[:-1, :] += u[1:, :]
    out[:, 1:] += u[:, :-1]
    out[:, :-1] += u[:, 1:]
    return out / (h * h)


def diff_x(u: np.ndarray, h: float) -> np.ndarray:
    """Central x-difference, antisymmetric: its transpose is −diff_x."""
    out = np.zeros_like(u)
    out[:, :-1] += u[:, 1:]
    out[:, 1:] -= u[:, :-1]
    return out / (2.0 * h)


def diff_y(u: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros_like(u)
    out[:-1, :] += u[1:, :]
    out[1:, :] -= u[:-1, :]
    return out / (2.0 * h)


def default_sigma_max(width: float, order: int, reflection: float = TARGET_REFLECTION) -> float:
    # c = 1 in the band
    return (order + 1) * np.log(1.0 / reflection) / (2.0 * width)


def pml_profile(
    grid: Grid2D,
    width: Optional[float] = None,
    sigma_max: Optional[float] = None,
    m: Optional[int] = None,
    detector_reach: Optional[float] = None,
) -> PmlProfile:
    """
    σ(d) = sigma_max·(d/width)^m 프로파일 생성

    Args:
        grid (Grid2D): grid whose outer band hosts the layer
        width (float): band width, defaults to the grid's band
        sigma_max (float): damping at the outer edge, defaults to
            (m+1)·ln(1/R)/(2·width) with R = 1e−3
        m (int): polynomial order
        detector_reach (float): largest |x| touched by a detector circle

    Raises:
        InvariantError: width differs from the grid band or overlaps a detector
    """
    width = grid.pml_width if width is None else float(width)
    m = getattr(settings, 'TAT_PML_ORDER', 2) if m is None else int(m)
    if width < 0 or width >= grid.half_width - 1.0:
        raise InvariantError(f"pml width {width} must lie in [0, L - 1) for L={grid.half_width}")
    if abs(width - grid.pml_width) > 1e-12:
        raise InvariantError(f"pml width {width} does not match the grid band {grid.pml_width}")
    if detector_reach is not None and grid.half_width - width < detector_reach - 1e-12:
        raise InvariantError(
            f"pml band starting at |x| = {grid.half_width - width} overlaps a detector circle reaching {detector_reach}"
        )
    if width == 0:
        return PmlProfile.closed(grid)
    if sigma_max is None:
        sigma_max = default_sigma_max(width, m)
    depth = np.clip(np.abs(grid.coords) - (grid.half_width - width), 0.0, None)
    sigma = sigma_max * (depth / width) ** m
    logger.debug(f"pml width={width} order={m} sigma_max={sigma_max:.3f}")
    return PmlProfile(width=width, sigma_max=float(sigma_max), order=m, sigma_x=sigma, sigma_y=sigma.copy())


def max_stable_dt(grid: Grid2D, speed: SpeedField) -> float:
    return grid.h / (np.sqrt(2.0) * speed.max_speed)


def cfl_time_step(grid: Grid2D, speed: SpeedField, safety: Optional[float] = None) -> float:
    """dt = cfl_safety·h/(√2·max c)"""
    safety = getattr(settings, 'TAT_CFL_SAFETY', 0.5) if safety is None else safety
    if not (0 < safety <= 1):
        raise CFLError(f"cfl_safety must lie in (0, 1], got {safety}")
    return safety * max_stable_dt(grid, speed)


def check_cfl(dt: float, speed: SpeedField, pml: Optional[PmlProfile] = None) -> None:
    limit = max_stable_dt(speed.grid, speed)
    if not (0 < dt <= limit * (1 + 1e-12)):
        raise CFLError(f"time step dt={dt:.6g} violates CFL bound h/(sqrt(2) max c) = {limit:.6g}")
    if pml is not None and pml.absorbing and dt * pml.sigma_max >= 1.0:
        raise CFLError(f"dt * sigma_max = {dt * pml.sigma_max:.3g} >= 1, pml damping unresolved")


def step_count(T: float, dt: float) -> int:
    """Number of steps covering [0, T]; the last sample sits at n·dt >= T."""
    if T <= 0:
        raise InvariantError(f"record length T must be > 0, got {T}")
    return int(np.ceil(T / dt - 1e-9))


class LeapfrogScheme:
    """
    (speed, pml, dt) 에 대한 한 스텝 갱신 연산자

    Forward map (σ_x, σ_y from the profile, s = σ_x+σ_y, p = σ_xσ_y)::

        u'   = K·(Δu + ∂x φ + ∂y ψ) + A·u − B·u_prev
        φ'   = (1 − dt σ_x)·φ + dt(σ_y − σ_x)·∂x u
        ψ'   = (1 − dt σ_y)·ψ + dt(σ_x − σ_y)·∂y u

    with K = dt²c²/a, A = (2 − dt²p)/a, B = (1 − dt s/2)/a, a = 1 + dt s/2,
    all multiplied by the interior mask.
    """

    def __init__(self, speed: SpeedField, pml: PmlProfile, dt: float):
        check_cfl(dt, speed, pml)
        grid = speed.grid
        self.grid = grid
        self.speed = speed
        self.pml = pml
        self.dt = float(dt)
        self.h = grid.h
        self.absorbing = pml.absorbing

        mask = np.zeros(grid.shape)
        mask[1:-1, 1:-1] = 1.0
        c2 = speed.c ** 2
        sx = np.broadcast_to(pml.sigma_x[None, :], grid.shape)
        sy = np.broadcast_to(pml.sigma_y[:, None], grid.shape)
        s = sx + sy
        a = 1.0 + 0.5 * dt * s

        self.k = dt * dt * c2 / a * mask
        self.cu = (2.0 - dt * dt * sx * sy) / a * mask
        self.cp = (1.0 - 0.5 * dt * s) / a * mask
        self.k0 = 0.5 * dt * dt * c2 * mask
        if self.absorbing:
            self.ex = 1.0 - dt * sx
            self.fx = dt * (sy - sx)
            self.ey = 1.0 - dt * sy
            self.fy = dt * (sx - sy)

    def initial_state(self, f: np.ndarray) -> WaveState:
        """u(0) = f, u_t(0) = 0 via u_prev = f + (dt²/2)c²Δ_h f."""
        f = np.asarray(f, dtype=np.float64)
        u_prev = f + self.k0 * laplacian(f, self.h)
        zeros = np.zeros(self.grid.shape)
        return WaveState(u_curr=f.copy(), u_prev=u_prev, phi=zeros, psi=zeros.copy(), t=0.0, dt=self.dt)

    def initial_state_transpose(self, adj: WaveState) -> np.ndarray:
        """Transpose of f ↦ initial_state(f)."""
        return adj.u_curr + adj.u_prev + laplacian(self.k0 * adj.u_prev, self.h)

    def step(self, state: WaveState, source: Optional[np.ndarray] = None) -> WaveState:
        h = self.h
        u = state.u_curr
        rhs = laplacian(u, h)
        if self.absorbing:
            rhs += diff_x(state.phi, h) + diff_y(state.psi, h)
        if source is not None:
            rhs += source
        u_next = self.k * rhs + self.cu * u - self.cp * state.u_prev
        if self.absorbing:
            phi = self.ex * state.phi + self.fx * diff_x(u, h)
            psi = self.ey * state.psi + self.fy * diff_y(u, h)
        else:
            phi, psi = state.phi, state.psi
        return WaveState(u_curr=u_next, u_prev=u, phi=phi, psi=psi, t=state.t + self.dt, dt=self.dt)

    def transpose_step(self, adj: WaveState) -> WaveState:
        """Exact transpose of ``step`` (without source) acting on multipliers."""
        h = self.h
        ku = self.k * adj.u_curr
        u = laplacian(ku, h) + self.cu * adj.u_curr + adj.u_prev
        u_prev = -self.cp * adj.u_curr
        if self.absorbing:
            u -= diff_x(self.fx * adj.phi, h) + diff_y(self.fy * adj.psi, h)
            phi = self.ex * adj.phi - diff_x(ku, h)
            psi = self.ey * adj.psi - diff_y(ku, h)
        else:
            phi, psi = adj.phi, adj.psi
        return WaveState(u_curr=u, u_prev=u_prev, phi=phi, psi=psi, t=adj.t - self.dt, dt=self.dt)

    def step_backward(self, state: WaveState) -> WaveState:
        """Inverse of ``step`` for the closed (non-absorbing) scheme."""
        if self.absorbing:
            raise InvariantError("backward stepping requires a closed domain (no PML)")
        u = state.u_prev
        u_prev = self.k * laplacian(u, self.h) + self.cu * u - state.u_curr
        return WaveState(u_curr=u, u_prev=u_prev, phi=state.phi, psi=state.psi,
                         t=state.t - self.dt, dt=self.dt)

    def energy(self, state: WaveState) -> float:
        """
        ½h²[Σ((u − u_prev)/dt)²/c² − Σ u·Δ_h u_prev]

        Exactly conserved by the closed scheme and equal to ½∫(u_t/c)² + |∇u|²
        up to O(dt² + h²).
        """
        h, dt = self.h, self.dt
        velocity = (state.u_curr - state.u_prev) / dt
        kinetic = np.sum(velocity ** 2 / self.speed.c ** 2)
        potential = -np.sum(state.u_curr * laplacian(state.u_prev, h))
        return float(0.5 * h * h * (kinetic + potential))


def _guard(state: WaveState, k: int, interval: int, scheme: LeapfrogScheme) -> None:
    if interval and k % interval == 0 and not state.is_finite():
        raise SolverDivergenceError(
            f"non-finite field at step {k} (t={state.t:.4f}); dt={scheme.dt:.4g}, h={scheme.h:.4g}, "
            f"max c={scheme.speed.max_speed:.4g}"
        )


def _progress(iterable, desc: str, progress: Optional[bool]):
    enabled = getattr(settings, 'TAT_PROGRESS', False) if progress is None else progress
    return tqdm(iterable, desc=desc, disable=not enabled, leave=False)


def init_state(f: Phantom, speed: SpeedField, dt: float, pml: Optional[PmlProfile] = None) -> WaveState:
    pml = PmlProfile.closed(speed.grid) if pml is None else pml
    return LeapfrogScheme(speed, pml, dt).initial_state(f.f)


def step(state: WaveState, speed: SpeedField, pml: PmlProfile) -> WaveState:
    """편의 함수: 한 스텝 전진 (매 호출마다 계수를 다시 만듭니다)"""
    new = LeapfrogScheme(speed, pml, state.dt).step(state)
    if not new.is_finite():
        raise SolverDivergenceError(f"non-finite field at t={new.t:.4f}")
    return new


def energy(state: WaveState, speed: SpeedField) -> float:
    return LeapfrogScheme(speed, PmlProfile.closed(speed.grid), state.dt).energy(state)


def solve_forward(
    f: Phantom,
    speed: SpeedField,
    T: float,
    pml: PmlProfile,
    probe: Optional[Probe] = None,
    dt: Optional[float] = None,
    progress: Optional[bool] = None,
) -> WaveState:
    """
    초기값 문제를 t = 0 부터 T 까지 풉니다

    Args:
        f (Phantom): initial pressure
        speed (SpeedField): wave speed on the same grid
        T (float): record length, the last step lands on ceil(T/dt)·dt
        pml (PmlProfile): absorbing layer (``PmlProfile.closed`` for none)
        probe (callable): called as probe(t, u) at every step, t = 0 included
        dt (float): time step, defaults to the CFL policy

    Returns:
        WaveState: the final state

    Raises:
        CFLError: dt above the stability bound
        SolverDivergenceError: non-finite values (checked every
            TAT_NAN_GUARD_INTERVAL steps)
    """
    if not f.grid.same_as(speed.grid):
        raise InvariantError("phantom and speed live on different grids")
    dt = cfl_time_step(speed.grid, speed) if dt is None else dt
    scheme = LeapfrogScheme(speed, pml, dt)
    n_steps = step_count(T, dt)
    interval = getattr(settings, 'TAT_NAN_GUARD_INTERVAL', 100)
    state = scheme.initial_state(f.f)
    if probe is not None:
        probe(state.t, state.u_curr)
    for k in _progress(range(1, n_steps + 1), 'forward', progress):
        state = scheme.step(state)
        _guard(state, k, interval, scheme)
        if probe is not None:
            probe(state.t, state.u_curr)
    if not state.is_finite():
        raise SolverDivergenceError(f"non-finite field at t={state.t:.4f}")
    logger.debug(f"forward solve: {n_steps} steps of dt={dt:.5g}")
    return state


def solve_with_sources(
    sources: np.ndarray,
    injector: sparse.spmatrix,
    speed: SpeedField,
    pml: PmlProfile,
    dt: float,
    probe: Optional[Probe] = None,
    progress: Optional[bool] = None,
) -> WaveState:
    """
    u_tt = c²Δu + s, zero initial data

    Args:
        sources (ndarray): (n_steps + 1, m) source amplitudes, one row per time sample
        injector (sparse matrix): (m, n²) map from grid values to the m source
            sites; amplitudes are spread with its transpose as point masses
            (divided by h² to give a density)

    Raises:
        InvariantError: shape mismatch between sources and injector
    """
    grid = speed.grid
    sources = np.asarray(sources, dtype=np.float64)
    if sources.ndim != 2 or sources.shape[1] != injector.shape[0] or injector.shape[1] != grid.n ** 2:
        raise InvariantError(
            f"source series of shape {sources.shape} does not fit injector {injector.shape} on grid {grid.shape}"
        )
    scheme = LeapfrogScheme(speed, pml, dt)
    interval = getattr(settings, 'TAT_NAN_GUARD_INTERVAL', 100)
    spread = injector.T.tocsr()
    state = WaveState.zeros(grid, dt)
    if probe is not None:
        probe(state.t, state.u_curr)
    for k in _progress(range(1, sources.shape[0]), 'sources', progress):
        density = (spread @ sources[k - 1]).reshape(grid.shape) / grid.h ** 2
        state = scheme.step(state, source=density)
        _guard(state, k, interval, scheme)
        if probe is not None:
            probe(state.t, state.u_curr)
    return state


def backpropagate(
    records: np.ndarray,
    measure: sparse.spmatrix,
    speed: SpeedField,
    pml: PmlProfile,
    dt: float,
    progress: Optional[bool] = None,
) -> np.ndarray:
    """
    측정 연산자의 정확한 전치: 시간 역순으로 잔차를 주입

    For data g_k = Q·u_k (k = 0..N) produced by ``solve_forward`` with
    ``measure`` = Q, returns the gradient of Σ_k ⟨g_k, records_k⟩ with
    respect to the initial pressure, as an n×n image.
    """
    grid = speed.grid
    records = np.asarray(records, dtype=np.float64)
    if records.ndim != 2 or records.shape[1] != measure.shape[0]:
        raise InvariantError(f"records of shape {records.shape} do not fit measurement {measure.shape}")
    scheme = LeapfrogScheme(speed, pml, dt)
    interval = getattr(settings, 'TAT_NAN_GUARD_INTERVAL', 100)
    spread = measure.T.tocsr()
    n_steps = records.shape[0] - 1
    adj = WaveState.zeros(grid, dt, t=n_steps * dt)
    for k in _progress(range(n_steps, -1, -1), 'adjoint', progress):
        injected = (spread @ records[k]).reshape(grid.shape)
        adj = WaveState(u_curr=adj.u_curr + injected, u_prev=adj.u_prev, phi=adj.phi, psi=adj.psi,
                        t=adj.t, dt=dt)
        if k > 0:
            adj = scheme.transpose_step(adj)
            _guard(adj, k, interval, scheme)
    return scheme.initial_state_transpose(adj)
