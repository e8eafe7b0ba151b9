"""
반복 재구성: M* (정확한 이산 전치), χ 가중치, Landweber / CG

Every solver works on the weighted least-squares problem

    min_f ½ Σ W·(Mf − s)² + λ·D(f)

with W(t, θ) = χ(t)·ψ(θ), D the discrete Dirichlet energy and f restricted
to the support disc |x| < 1 − margin.
"""
import logging
from typing import Optional, Tuple

import numpy as np
from django.conf import settings
from scipy import linalg
from scipy.spatial import cKDTree
from tqdm import tqdm

from config.exceptions import GeometryMismatchError, InvariantError, SolverDivergenceError
from tat_detector.domain import DetectorConfig, Sinogram
from tat_detector.services import RingRecorder, measurement_matrix, theta_grid
from tat_field.domain import Phantom, SpeedField
from tat_field.services import smooth_step
from tat_recon.domain import ReconResult, TimeCutoff
from tat_wave.domain import PmlProfile
from tat_wave.services import backpropagate, cfl_time_step, laplacian, solve_forward, step_count

logger = logging.getLogger(__name__)

MIN_POWER_ITERATIONS = 10
# consecutive misfit increases tolerated before Landweber aborts
DIVERGENCE_PATIENCE = 3
# ‖−Δ‖ bound for the unit-spacing 5-point Laplacian
SMOOTHING_NORM_BOUND = 8.0


def time_cutoff_chi(T: float, T1: float, nt: int, dt: float) -> TimeCutoff:
    """
    χ(t) = S((T1 − t)/(T1 − T)) 를 t_k = k·dt 에서 샘플링

    Raises:
        InvariantError: unless 0 < T < T1 <= nt·dt
    """
    if not (0 < T < T1):
        raise InvariantError(f"time cutoff needs 0 < T < T1, got T={T}, T1={T1}")
    if T1 > nt * dt + 1e-12:
        raise InvariantError(f"time cutoff end T1={T1} exceeds the record length {nt * dt:.6g}")
    t = dt * np.arange(nt)
    weights = smooth_step((T1 - t) / (T1 - T))
    return TimeCutoff(T=float(T), T1=float(T1), dt=float(dt), weights=weights)


def angular_taper(theta: np.ndarray, arc: Optional[Tuple[float, float]], fraction: float = 0.1) -> np.ndarray:
    """
    부분 구경 Γ = (a, b) 가장자리의 C^∞ 감쇠 ψ(θ)

    ψ rises from 0 at each end of the arc to 1 over ``fraction``·(b − a).
    The full circle, or ``fraction`` = 0, gives ψ ≡ 1.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if arc is None or fraction == 0:
        return np.ones_like(theta)
    if not (0 < fraction <= 0.5):
        raise InvariantError(f"taper fraction must lie in (0, 0.5], got {fraction}")
    a, b = arc
    width = fraction * (b - a)
    return smooth_step((theta - a) / width) * smooth_step((b - theta) / width)


def _progress(iterable, desc: str, progress: Optional[bool]):
    enabled = getattr(settings, 'TAT_PROGRESS', False) if progress is None else progress
    return tqdm(iterable, desc=desc, disable=not enabled, leave=False)


class ForwardModel:
    """
    재구성에 쓰는 이산 측정 연산자와 그 전치

    ``forward`` maps an image to the (nt, n_theta) record of ring averages;
    ``adjoint`` is its exact transpose. Images outside the support disc are
    projected to zero before every forward solve.
    """

    def __init__(
        self,
        speed: SpeedField,
        config: DetectorConfig,
        pml: PmlProfile,
        dt: Optional[float] = None,
        cutoff: Optional[TimeCutoff] = None,
        taper_fraction: float = 0.1,
        support_margin: float = 0.05,
        progress: Optional[bool] = None,
    ):
        self.speed = speed
        self.grid = speed.grid
        self.config = config
        self.pml = pml
        self.dt = cfl_time_step(self.grid, speed) if dt is None else float(dt)
        self.theta = theta_grid(config)
        self.matrix = measurement_matrix(self.grid, config, self.theta)
        self.nt = step_count(config.T, self.dt) + 1
        self.margin = float(support_margin)
        self.support = self.grid.radius < 1.0 - self.margin
        self.progress = progress

        if cutoff is not None and cutoff.nt != self.nt:
            raise GeometryMismatchError(f"time cutoff has {cutoff.nt} samples, the record has {self.nt}")
        chi = np.ones(self.nt) if cutoff is None else cutoff.weights
        self.weights = chi[:, None] * angular_taper(self.theta, config.arc, taper_fraction)[None, :]

    @classmethod
    def for_sinogram(cls, s: Sinogram, speed: SpeedField, pml: PmlProfile, **kwargs) -> 'ForwardModel':
        model = cls(speed, s.config, pml, dt=s.dt, **kwargs)
        model.check(s)
        return model

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.nt, self.theta.size)

    def check(self, s: Sinogram) -> None:
        """
        Raises:
            GeometryMismatchError: the sinogram was not produced by this model
        """
        if s.config != self.config:
            raise GeometryMismatchError(
                f"sinogram detector {s.config.describe()} differs from model detector {self.config.describe()}"
            )
        if s.data.shape != self.shape or abs(s.dt - self.dt) > 1e-12 * self.dt:
            raise GeometryMismatchError(
                f"sinogram {s.data.shape} at dt={s.dt:.6g} does not match model {self.shape} at dt={self.dt:.6g}"
            )

    def project(self, f: np.ndarray) -> np.ndarray:
        return np.where(self.support, f, 0.0)

    def forward(self, f: np.ndarray) -> np.ndarray:
        recorder = RingRecorder(self.matrix)
        phantom = Phantom(self.grid, self.project(f), self.margin)
        solve_forward(phantom, self.speed, self.config.T, self.pml, probe=recorder, dt=self.dt,
                      progress=self.progress)
        return recorder.stacked()

    def adjoint(self, data: np.ndarray) -> np.ndarray:
        return backpropagate(data, self.matrix, self.speed, self.pml, self.dt, progress=self.progress)

    def smoothing(self, f: np.ndarray) -> np.ndarray:
        """Gradient of the Dirichlet energy restricted to the support."""
        return self.project(-laplacian(self.project(f), 1.0))

    def normal(self, f: np.ndarray, tikhonov: float = 0.0) -> np.ndarray:
        """P M* W M P f (+ λ smoothing)"""
        out = self.project(self.adjoint(self.weights * self.forward(f)))
        if tikhonov:
            out += tikhonov * self.smoothing(f)
        return out

    def misfit(self, residual: np.ndarray) -> float:
        return float(np.sqrt(np.sum(self.weights * residual ** 2)))


def adjoint_operator(s: Sinogram, speed: SpeedField, pml: PmlProfile) -> np.ndarray:
    """
    M*s: 시간 역순 주입으로 계산한 forward_operator 의 정확한 전치

    The caller applies any χ weighting to ``s`` beforehand.

    Raises:
        GeometryMismatchError: the record length does not match the config
    """
    expected = step_count(s.config.T, s.dt) + 1
    if s.nt != expected:
        raise GeometryMismatchError(f"sinogram has {s.nt} time samples, config T={s.config.T} implies {expected}")
    matrix = measurement_matrix(speed.grid, s.config, s.theta)
    return backpropagate(s.data, matrix, speed, pml, s.dt)


def operator_norm_estimate(
    model: ForwardModel,
    iters: int = 30,
    rtol: float = 0.05,
    seed: Optional[int] = None,
    initial: Optional[np.ndarray] = None,
) -> float:
    """
    멱 반복으로 ‖W^{1/2} M‖² 추정

    Rayleigh quotients λ_k = ⟨x, M*WM x⟩ of the normalized iterate; returns
    once |λ_k − λ_{k−1}| <= rtol·λ_k after at least 10 applications, or
    after ``iters``.

    Raises:
        InvariantError: iters < 10
    """
    if iters < MIN_POWER_ITERATIONS:
        raise InvariantError(f"power iteration needs iters >= {MIN_POWER_ITERATIONS}, got {iters}")
    if initial is None:
        seed = getattr(settings, 'TAT_DEFAULT_SEED', 0) if seed is None else seed
        initial = np.random.default_rng(seed).standard_normal(model.grid.shape)
    x = model.project(np.asarray(initial, dtype=np.float64))
    x = x / np.linalg.norm(x)
    previous = None
    estimate = 0.0
    for k in _progress(range(1, iters + 1), 'power', model.progress):
        y = model.normal(x)
        estimate = float(np.vdot(x, y))
        if previous is not None and k >= MIN_POWER_ITERATIONS and abs(estimate - previous) <= rtol * abs(estimate):
            logger.info(f"operator norm estimate {estimate:.6g} after {k} iterations")
            return estimate
        previous = estimate
        norm = np.linalg.norm(y)
        if norm == 0:
            return 0.0
        x = y / norm
    logger.warning(f"power iteration did not settle to rtol={rtol} in {iters} iterations, estimate {estimate:.6g}")
    return estimate


def _zero_result(model: ForwardModel, method: str) -> ReconResult:
    estimate = Phantom(model.grid, np.zeros(model.grid.shape), model.margin)
    return ReconResult(estimate=estimate, residual_history=[0.0], iterations=0, method=method, converged=True)


def landweber(
    s: Sinogram,
    model: ForwardModel,
    iters: int = 50,
    step: Optional[float] = None,
    tol: float = 1e-6,
    tikhonov: float = 0.0,
    norm_estimate: Optional[float] = None,
    seed: Optional[int] = None,
) -> ReconResult:
    """
    Landweber 반복: f ← P(f − step·(M*W(Mf − s) + λ∇D(f))), f₀ = 0

    Args:
        s (Sinogram): measured data
        model (ForwardModel): operator built for ``s``
        iters (int): iteration budget
        step (float): fixed step in (0, 2/‖M‖²); by default 1/(‖M‖² + 8λ)
        tol (float): stop once the weighted misfit drops below tol·‖s‖_W
        tikhonov (float): weight λ of the Dirichlet energy term

    Raises:
        SolverDivergenceError: the misfit grew on 3 consecutive iterations
    """
    model.check(s)
    if tikhonov < 0:
        raise InvariantError(f"tikhonov weight must be >= 0, got {tikhonov}")
    data = s.data
    misfit0 = model.misfit(data)
    if misfit0 == 0:
        return _zero_result(model, 'landweber')

    if step is None:
        bound = operator_norm_estimate(model, seed=seed) if norm_estimate is None else norm_estimate
        step = 1.0 / (bound + SMOOTHING_NORM_BOUND * tikhonov)
    elif step <= 0 or (norm_estimate is not None and step >= 2.0 / norm_estimate):
        raise InvariantError(f"landweber step must lie in (0, 2/|M|^2), got {step}")

    f = np.zeros(model.grid.shape)
    residual = -data
    history = [misfit0]
    growth = 0
    converged = False
    k = 0
    for k in range(1, iters + 1):
        gradient = model.project(model.adjoint(model.weights * residual))
        if tikhonov:
            gradient += tikhonov * model.smoothing(f)
        f = model.project(f - step * gradient)
        residual = model.forward(f) - data
        misfit = model.misfit(residual)
        growth = growth + 1 if misfit > history[-1] else 0
        history.append(misfit)
        logger.debug(f"landweber {k}: misfit {misfit:.6g}")
        if growth >= DIVERGENCE_PATIENCE:
            raise SolverDivergenceError(
                f"landweber misfit grew {growth} times in a row (last {history[-4:]}); step {step:.4g} too large"
            )
        if misfit <= tol * misfit0:
            converged = True
            break

    logger.info(f"landweber: {k} iterations, misfit {history[0]:.4g} -> {history[-1]:.4g}")
    return ReconResult(
        estimate=Phantom(model.grid, f, model.margin),
        residual_history=history,
        step_size=step,
        iterations=k,
        method='landweber',
        converged=converged,
    )


def cg_normal(
    s: Sinogram,
    model: ForwardModel,
    iters: int = 15,
    tol: float = 1e-6,
    tikhonov: float = 0.0,
) -> ReconResult:
    """
    정규 방정식 (M*WM + λ∇²D) f = M*W s 에 대한 켤레 기울기법

    M f is updated along with f, so each iteration costs one forward and one
    adjoint solve.

    Raises:
        InvariantError: tol <= 0
        SolverDivergenceError: a search direction with pᵀAp <= 0
    """
    model.check(s)
    if tol <= 0:
        raise InvariantError(f"cg tolerance must be > 0, got {tol}")
    data = s.data
    misfit0 = model.misfit(data)
    if misfit0 == 0:
        return _zero_result(model, 'cg')

    f = np.zeros(model.grid.shape)
    Mf = np.zeros(model.shape)
    r = model.project(model.adjoint(model.weights * data))
    p = r.copy()
    rr = float(np.vdot(r, r))
    rr0 = rr
    history = [misfit0]
    converged = False
    k = 0
    for k in range(1, iters + 1):
        Mp = model.forward(p)
        Ap = model.project(model.adjoint(model.weights * Mp))
        if tikhonov:
            Ap += tikhonov * model.smoothing(p)
        curvature = float(np.vdot(p, Ap))
        if not curvature > 0:
            raise SolverDivergenceError(f"cg breakdown at iteration {k}: p^T A p = {curvature:.3g}")
        alpha = rr / curvature
        f += alpha * p
        Mf += alpha * Mp
        r -= alpha * Ap
        misfit = model.misfit(Mf - data)
        history.append(misfit)
        rr_next = float(np.vdot(r, r))
        logger.debug(f"cg {k}: misfit {misfit:.6g}, |r| {np.sqrt(rr_next):.4g}")
        if misfit <= tol * misfit0 or rr_next <= tol * tol * rr0:
            converged = True
            break
        p = r + (rr_next / rr) * p
        rr = rr_next

    logger.info(f"cg: {k} iterations, misfit {history[0]:.4g} -> {history[-1]:.4g}")
    return ReconResult(
        estimate=Phantom(model.grid, model.project(f), model.margin),
        residual_history=history,
        iterations=k,
        method='cg',
        converged=converged,
    )


def reconstruct(s: Sinogram, model: ForwardModel, method: str = 'cg', **kwargs) -> ReconResult:
    """편의 함수: method 이름으로 solver 선택"""
    solvers = {'landweber': landweber, 'cg': cg_normal}
    if method not in solvers:
        raise InvariantError(f"unknown reconstruction method {method!r}, expected one of {sorted(solvers)}")
    return solvers[method](s, model, **kwargs)


def relative_error(estimate, truth) -> float:
    """‖f̂ − f‖ / ‖f‖; 0 when both vanish."""
    estimate = getattr(estimate, 'f', estimate)
    truth = getattr(truth, 'f', truth)
    norm = np.linalg.norm(truth)
    difference = np.linalg.norm(np.asarray(estimate) - np.asarray(truth))
    if norm == 0:
        return 0.0 if difference == 0 else float('inf')
    return float(difference / norm)


def local_gradient_energy(f: Phantom, points: np.ndarray, radius: float) -> np.ndarray:
    """Σ|∇f|² over the nodes within ``radius`` of each point."""
    grid = f.grid
    gy, gx = np.gradient(f.f, grid.h)
    density = (gx ** 2 + gy ** 2).ravel()
    X, Y = grid.mesh
    tree = cKDTree(np.stack([X.ravel(), Y.ravel()], axis=1))
    neighbours = tree.query_ball_point(np.atleast_2d(points), r=radius)
    return np.array([density[idx].sum() for idx in neighbours])


def edge_recovery_ratio(estimate: Phantom, truth: Phantom, points: np.ndarray, radius: Optional[float] = None) -> np.ndarray:
    """
    edge 표본 주변 gradient 에너지의 회복 비율 (추정 / 참값)

    ``radius`` defaults to 2h. Points with no true gradient energy give nan.
    """
    radius = 2.0 * truth.grid.h if radius is None else radius
    recovered = local_gradient_energy(estimate, points, radius)
    reference = local_gradient_energy(truth, points, radius)
    with np.errstate(divide='ignore', invalid='ignore'):
        return np.where(reference > 0, recovered / np.where(reference > 0, reference, 1.0), np.nan)


def assemble_matrix(model: ForwardModel, radius: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    W^{1/2}M 의 조밀 행렬 (지지 원판 열만)

    Column j is the weighted record of the unit image at node
    ``columns[j]`` (flattened index); one forward solve per column.
    """
    radius = 1.0 - model.margin if radius is None else radius
    columns = np.flatnonzero((model.grid.radius < radius) & model.support)
    scale = np.sqrt(model.weights).ravel()
    A = np.empty((scale.size, columns.size))
    for j, node in enumerate(_progress(columns, 'assemble', model.progress)):
        e = np.zeros(model.grid.n * model.grid.n)
        e[node] = 1.0
        A[:, j] = scale * model.forward(e.reshape(model.grid.shape)).ravel()
    logger.info(f"assembled dense forward matrix {A.shape}")
    return A, columns


def stability_proxy(model: ForwardModel, radius: float = 0.9) -> dict:
    """
    조밀 행렬의 특이값으로 본 경험적 안정성 지표

    Returns:
        dict: largest / smallest singular value, condition number and the
        number of image columns (phantoms supported in B_radius(0))
    """
    A, columns = assemble_matrix(model, radius)
    values = linalg.svdvals(A)
    smallest = float(values[-1])
    largest = float(values[0])
    condition = largest / smallest if smallest > 0 else float('inf')
    logger.info(f"stability proxy: sigma_max={largest:.4g}, sigma_min={smallest:.4g}, cond={condition:.4g}")
    return {
        'largest': largest,
        'smallest': smallest,
        'condition': condition,
        'columns': int(columns.size),
    }
