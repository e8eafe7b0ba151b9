"""
수치 자가 점검

Each check builds its own small problem, measures one quantity and compares
it with a threshold. ``selftest`` and the test suite share these functions.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from config.exceptions import InvariantError
from tat_detector.domain import DetectorConfig
from tat_detector.services import (
    cylinder_residual_large,
    cylinder_residual_small,
    rms,
    sweep_large_radius,
    sweep_small_radius,
)
from tat_field.domain import Covector
from tat_field.serializers.spec_serializers import (
    ConstantSpeedSpec,
    GaussianComponent,
    PaperDefaultSpeedSpec,
    PhantomSpec,
    SmoothedDiscComponent,
)
from tat_field.services import make_grid, make_phantom, sample_speed
from tat_rays.services import SpeedInterpolant, canonical_image, trace_geodesic, trace_statistics
from tat_recon.services import ForwardModel
from tat_wave.domain import PmlProfile
from tat_wave.services import LeapfrogScheme, cfl_time_step, pml_profile, solve_forward

logger = logging.getLogger(__name__)

QUICK = 'quick'
FULL = 'full'
LEVELS = (QUICK, FULL)

ADJOINT_TOL = 1e-10
CONVERGENCE_RATIO = (3.2, 4.8)
CROSS_RATIO_MAX = 2.0
STRAIGHT_LINE_TOL = 1e-8
HAMILTONIAN_TOL = 1e-6
CENTER_PASSAGE_TOL = 1e-6
LAMBDA_TOL = 1e-6
PML_REFLECTION_TOL = 1e-3
ENERGY_DRIFT_TOL = 1e-3
FINITE_SPEED_TOL = 1e-8


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: str
    detail: str = ''

    def line(self) -> str:
        """selftest 출력 한 줄 (기계 판독용)"""
        status = 'PASS' if self.passed else 'FAIL'
        text = f"CHECK {self.name} {status} value={self.value:.6g} threshold={self.threshold}"
        return f"{text} {self.detail}" if self.detail else text


def _check_level(level: str):
    if level not in LEVELS:
        raise InvariantError(f"selftest level must be one of {LEVELS}, got {level!r}")


def check_adjoint(level: str = QUICK, break_adjoint: bool = False, seed: int = 0) -> CheckResult:
    """
    ⟨Mf, g⟩ = ⟨f, M*g⟩ 검사 (64² 격자, 두 검출기 기하)

    ``break_adjoint`` feeds the adjoint a time-reversed record, which must
    make the check fail.
    """
    _check_level(level)
    grid = make_grid(3.5, 65, 0.5)
    speed = sample_speed(PaperDefaultSpeedSpec(), grid)
    pml = pml_profile(grid)
    pairs = 5 if level == QUICK else 10
    rng = np.random.default_rng(seed)
    worst = 0.0
    for config in (DetectorConfig(mode='large', r=2.0, n_theta=24, T=3.0),
                   DetectorConfig(mode='small', R=2.0, r=0.8, n_theta=24, T=3.0)):
        model = ForwardModel(speed, config, pml)
        for _ in range(pairs):
            f = model.project(rng.standard_normal(grid.shape))
            g = rng.standard_normal(model.shape)
            Mf = model.forward(f)
            back = model.adjoint(g[::-1] if break_adjoint else g)
            gap = abs(np.vdot(Mf, g) - np.vdot(f, back)) / (np.linalg.norm(Mf) * np.linalg.norm(g))
            worst = max(worst, float(gap))
    detail = 'broken adjoint' if break_adjoint else f"pairs={pairs}"
    return CheckResult('adjoint_identity', worst <= ADJOINT_TOL, worst, f"<={ADJOINT_TOL:g}", detail)


def _sweep_family(mode: str, n: int, n_theta: int, T: float, center=(0.0, 0.0)):
    grid = make_grid(4.0, n, 0.5)
    h = grid.h
    speed = sample_speed(PaperDefaultSpeedSpec(), grid)
    disc = SmoothedDiscComponent(center=center, radius=0.05, taper=0.85 - float(np.hypot(*center)))
    f = make_phantom(PhantomSpec(components=[disc]), grid)
    pml = pml_profile(grid)
    dt = h / 4.0
    stride = 32
    if mode == 'small':
        config = DetectorConfig(mode='small', R=2.25, r=0.8, n_theta=n_theta, T=T)
        radii = 2.25 + 8.0 * h * np.array([-1.0, 0.0, 1.0])
        return sweep_small_radius(f, speed, pml, config, radii, record_stride=stride, dt=dt)
    config = DetectorConfig(mode='large', r=2.2, n_theta=n_theta, T=T)
    radii = 2.2 + 8.0 * h * np.array([-1.0, 0.0, 1.0])
    return sweep_large_radius(f, speed, pml, config, radii, record_stride=stride, dt=dt)


def _ratios(values: Sequence[float]) -> List[float]:
    return [values[k] / values[k + 1] for k in range(len(values) - 1)]


def check_residual_convergence(level: str = QUICK) -> List[CheckResult]:
    """
    원통 PDE 잔차의 2차 수렴

    h, dt, Δθ and the radius step halve together (Δt = ΔR = 8h, n_theta
    doubles). The small-radius residual of small-radius data and the
    large-radius residual of large-radius data must drop by a factor in
    [3.2, 4.8] per level; the small-radius stencil applied to large-radius
    data must not.
    """
    _check_level(level)
    sizes = [(257, 64), (513, 128)] + ([(1025, 256)] if level == FULL else [])
    T = 2.5 if level == QUICK else 4.0
    small, large, cross = [], [], []
    for n, n_theta in sizes:
        small.append(rms(cylinder_residual_small(_sweep_family('small', n, n_theta, T), even_extension=True)))
        large.append(rms(cylinder_residual_large(_sweep_family('large', n, n_theta, T), even_extension=True)))
        off_center = _sweep_family('large', n, n_theta, T, center=(0.3, 0.1))
        cross.append(rms(cylinder_residual_small(off_center, even_extension=True)))
    low, high = CONVERGENCE_RATIO
    results = []
    for name, values in (('residual_small', small), ('residual_large', large)):
        ratios = _ratios(values)
        passed = all(low <= r <= high for r in ratios)
        results.append(CheckResult(name, passed, min(ratios), f"[{low}, {high}]",
                                   'ratios=' + ','.join(f"{r:.3f}" for r in ratios)))
    cross_ratios = _ratios(cross)
    results.append(CheckResult('residual_cross_geometry', max(cross_ratios) < CROSS_RATIO_MAX, max(cross_ratios),
                               f"<{CROSS_RATIO_MAX}", 'ratios=' + ','.join(f"{r:.3f}" for r in cross_ratios)))
    return results


def _generic_covectors(count: int, seed: int) -> List[Covector]:
    rng = np.random.default_rng(seed)
    rho = 0.9 * np.sqrt(rng.uniform(size=count))
    phi, psi = rng.uniform(0, 2 * np.pi, size=(2, count))
    return [Covector((r * np.cos(a), r * np.sin(a)), (np.cos(b), np.sin(b))) for r, a, b in zip(rho, phi, psi)]


def check_ray_invariants(level: str = QUICK, seed: int = 0) -> List[CheckResult]:
    """직선 경로, Hamiltonian 보존, 사건 개수, 중심 통과, λ 값"""
    _check_level(level)
    count = 20 if level == QUICK else 100
    results = []

    path = trace_geodesic(Covector((0.0, 0.0), (1.0, 0.0)), 1, 4.0)
    deviation = max(float(np.hypot(*(path.position_at(t) - np.array([t, 0.0])))) for t in np.linspace(0, 4, 81))
    results.append(CheckResult('ray_straight_line', deviation <= STRAIGHT_LINE_TOL, deviation,
                               f"<={STRAIGHT_LINE_TOL:g}"))

    grid = make_grid(2.0, 257, 0.5)
    interp = SpeedInterpolant(sample_speed(PaperDefaultSpeedSpec(), grid))
    stats = trace_statistics(_generic_covectors(count, seed), interp)
    results.append(CheckResult('ray_hamiltonian', stats['hamiltonian_drift'] <= HAMILTONIAN_TOL,
                               stats['hamiltonian_drift'], f"<={HAMILTONIAN_TOL:g}",
                               f"escaped={stats['escaped']}/{stats['total']}"))

    small = DetectorConfig(mode='small', R=2.0, r=0.8)
    large = DetectorConfig(mode='large', r=2.0)
    bad_counts, passage, lam_error = 0, 0.0, 0.0
    for cv in _generic_covectors(count, seed + 1):
        small_events = canonical_image(cv, small)
        bad_counts += int(len(small_events) != 4) + int(len(canonical_image(cv, large)) != 2)
        for e in small_events:
            # straight continuation through the centre Rθ
            shift = small.r if e.branch == 1 else -small.r
            center = np.asarray(e.center)
            passage = max(passage, float(np.hypot(*(np.asarray(e.point) + shift * np.asarray(e.direction) - center))))
            passage = max(passage, abs(float(np.hypot(*center)) - small.R))
            lam_error = max(lam_error, abs(abs(e.lam) - cv.norm / (2 * small.r)))
    results.append(CheckResult('ray_event_counts', bad_counts == 0, bad_counts, '==0', f"covectors={count}"))
    results.append(CheckResult('ray_center_passage', passage <= CENTER_PASSAGE_TOL, passage,
                               f"<={CENTER_PASSAGE_TOL:g}"))
    results.append(CheckResult('ray_lambda', lam_error <= LAMBDA_TOL, lam_error, f"<={LAMBDA_TOL:g}"))
    return results


def check_pml_reflection(level: str = QUICK) -> CheckResult:
    """T = 5 뒤 격자에 남은 에너지 / 초기 에너지"""
    _check_level(level)
    n = 161 if level == QUICK else 241
    grid = make_grid(2.5, n, 0.5)
    speed = sample_speed(PaperDefaultSpeedSpec(), grid)
    f = make_phantom(PhantomSpec(components=[GaussianComponent(sigma=0.1)]), grid)
    dt = cfl_time_step(grid, speed)
    meter = LeapfrogScheme(speed, PmlProfile.closed(grid), dt)
    e0 = meter.energy(meter.initial_state(f.f))
    state = solve_forward(f, speed, 5.0, pml_profile(grid), dt=dt)
    ratio = meter.energy(state) / e0
    return CheckResult('pml_reflection', ratio <= PML_REFLECTION_TOL, ratio, f"<={PML_REFLECTION_TOL:g}")


def check_energy_drift(level: str = QUICK) -> CheckResult:
    """닫힌 영역 1000 스텝 동안의 이산 에너지 변화"""
    _check_level(level)
    n = 129 if level == QUICK else 257
    grid = make_grid(2.0, n, 0.0)
    speed = sample_speed(ConstantSpeedSpec(), grid)
    f = make_phantom(PhantomSpec(components=[GaussianComponent(sigma=0.1)]), grid)
    scheme = LeapfrogScheme(speed, PmlProfile.closed(grid), cfl_time_step(grid, speed, 0.5))
    state = scheme.initial_state(f.f)
    e0 = scheme.energy(state)
    for _ in range(1000):
        state = scheme.step(state)
    drift = abs(scheme.energy(state) - e0) / e0
    return CheckResult('energy_drift', drift <= ENERGY_DRIFT_TOL, drift, f"<={ENERGY_DRIFT_TOL:g}")


def check_finite_speed(level: str = QUICK) -> CheckResult:
    """B_{1 + T·max c + 3h} 밖의 질량 비율"""
    _check_level(level)
    grid = make_grid(3.0, 193, 0.5)
    speed = sample_speed(PaperDefaultSpeedSpec(), grid)
    disc = SmoothedDiscComponent(center=(0.1, 0.2), radius=0.2, taper=0.2)
    f = make_phantom(PhantomSpec(components=[disc]), grid)
    T = 0.6
    state = solve_forward(f, speed, T, pml_profile(grid))
    outside = grid.radius > 1.0 + T * speed.max_speed + 3 * grid.h
    fraction = float(np.sum(state.u_curr[outside] ** 2) / np.sum(state.u_curr ** 2))
    return CheckResult('finite_speed', fraction <= FINITE_SPEED_TOL, fraction, f"<={FINITE_SPEED_TOL:g}")


def _as_list(result) -> List[CheckResult]:
    return result if isinstance(result, list) else [result]


CHECKS: Dict[str, Callable] = {
    'adjoint': check_adjoint,
    'residual': check_residual_convergence,
    'rays': check_ray_invariants,
    'pml': check_pml_reflection,
    'energy': check_energy_drift,
    'finite_speed': check_finite_speed,
}


def run_checks(level: str = QUICK, only: Optional[Sequence[str]] = None, break_adjoint: bool = False,
               seed: int = 0, report: Optional[Callable[[CheckResult], None]] = None) -> List[CheckResult]:
    """
    선택한 점검을 차례로 실행

    Args:
        only: subset of CHECKS keys, all by default
        report: called with each result as soon as it is available
    """
    _check_level(level)
    names = list(CHECKS) if not only else list(only)
    unknown = sorted(set(names) - set(CHECKS))
    if unknown:
        raise InvariantError(f"unknown checks {unknown}, expected a subset of {sorted(CHECKS)}")
    results = []
    for name in names:
        logger.info(f"selftest {level}: {name}")
        if name == 'adjoint':
            produced = check_adjoint(level, break_adjoint=break_adjoint, seed=seed)
        elif name == 'rays':
            produced = check_ray_invariants(level, seed=seed)
        else:
            produced = CHECKS[name](level)
        for result in _as_list(produced):
            if report is not None:
                report(result)
            results.append(result)
    return results
