"""
측지선 추적과 가시성 판정

Rays of the metric c⁻²dx² follow the Hamiltonian system ẋ = c²p,
ṗ = −c∇c|p|² with c|p| = 1. Inside B₁(0) the system is integrated with a
vectorized RK4 on a spline of the sampled speed; outside the unit disc c ≡ 1
and every ray is a straight line, so detector crossings are roots of a
quadratic.
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from django.conf import settings
from joblib import Parallel, delayed
from scipy.interpolate import RectBivariateSpline
from scipy.spatial import cKDTree

from config.exceptions import InvariantError
from tat_detector.domain import LARGE, SMALL, DetectorConfig
from tat_field.domain import Covector, Grid2D, SpeedField
from tat_rays.domain import (
    MASKED,
    OUT_OF_APERTURE,
    VISIBLE,
    Aperture,
    DetectionEvent,
    RayPath,
    VisibilityEntry,
    VisibilityReport,
)

logger = logging.getLogger(__name__)

DEFAULT_RAY_STEP = 0.0025
DEFAULT_T_MAX = 10.0
HAMILTONIAN_STEP_TOL = 1e-10
MAX_STEP_REFINEMENT = 3
PERPENDICULAR_TOL = 1e-6
MIRROR_TOL = 1e-9
DIRECTION_TOL_DEG = 5.0
CHUNK_SIZE = 256


class SpeedInterpolant:
    """
    c 와 ∇c 의 매끄러운 보간

    A RectBivariateSpline over (y, x) of the sampled speed, evaluated at every
    point of the sampled box [−L, L]². The samples are 1 outside B₁(0), so the
    spline is 1 there up to interpolation error and c stays continuous across
    the unit circle. Points outside the box get c = 1 and ∇c = 0 exactly. A
    constant field skips the spline altogether.
    """

    def __init__(self, speed: Optional[SpeedField] = None, order: int = 5):
        if order not in (1, 3, 5):
            raise InvariantError(f"spline order must be 1, 3 or 5, got {order}")
        self.order = order
        self.min_speed = 1.0
        self.spline = None
        self.half_width = np.inf
        if speed is not None and np.ptp(speed.c) > 0:
            coords = speed.grid.coords
            self.spline = RectBivariateSpline(coords, coords, speed.c, kx=order, ky=order)
            self.half_width = float(coords[-1])
            self.min_speed = speed.min_speed
        elif speed is not None:
            self.min_speed = speed.min_speed

    @property
    def constant(self) -> bool:
        return self.spline is None

    def evaluate(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Args:
            x: points, shape (m, 2)

        Returns:
            tuple: c of shape (m,), ∇c of shape (m, 2)
        """
        x = np.atleast_2d(x)
        c = np.ones(x.shape[0])
        grad = np.zeros_like(x)
        if self.spline is None:
            return c, grad
        inside = np.all(np.abs(x) <= self.half_width, axis=1)
        if inside.any():
            px, py = x[inside, 0], x[inside, 1]
            c[inside] = self.spline.ev(py, px)
            grad[inside, 0] = self.spline.ev(py, px, dy=1)
            grad[inside, 1] = self.spline.ev(py, px, dx=1)
        return c, grad

    def speed_at(self, point) -> float:
        return float(self.values(np.asarray(point, dtype=np.float64))[0])

    def values(self, x: np.ndarray) -> np.ndarray:
        """c only, without the gradient."""
        x = np.atleast_2d(x)
        c = np.ones(x.shape[0])
        if self.spline is None:
            return c
        inside = np.all(np.abs(x) <= self.half_width, axis=1)
        if inside.any():
            c[inside] = self.spline.ev(x[inside, 1], x[inside, 0])
        return c

    def hamiltonian(self, x: np.ndarray, p: np.ndarray) -> np.ndarray:
        """c(x)|p|, which stays 1 along exact rays."""
        c = self.values(x)
        return c * np.hypot(p[:, 0], p[:, 1])


def _rhs(x: np.ndarray, p: np.ndarray, speed: SpeedInterpolant):
    c, grad = speed.evaluate(x)
    pp = np.sum(p * p, axis=1)
    return (c**2)[:, None] * p, -(c * pp)[:, None] * grad


def _rk4_step(x, p, h, speed):
    h = h[:, None]
    k1x, k1p = _rhs(x, p, speed)
    k2x, k2p = _rhs(x + 0.5 * h * k1x, p + 0.5 * h * k1p, speed)
    k3x, k3p = _rhs(x + 0.5 * h * k2x, p + 0.5 * h * k2p, speed)
    k4x, k4p = _rhs(x + h * k3x, p + h * k3p, speed)
    x_new = x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
    p_new = p + h / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
    return x_new, p_new


def _controlled_step(x, p, h, speed, drift_tol):
    """
    한 스텝을 진행하고, 해밀토니안이 drift_tol 보다 많이 변한 광선은 잘게 나눠 다시 계산

    A ray whose |Δ(c|p|)| over the step exceeds ``drift_tol`` redoes the step
    as 4, 16, then 64 equal substeps from the same starting state. The state
    is never rescaled; a ray still over tolerance after the last refinement
    keeps its finest result.
    """
    x_new, p_new = _rk4_step(x, p, h, speed)
    if drift_tol is None or speed.constant:
        return x_new, p_new
    h0 = speed.hamiltonian(x, p)
    redo = np.flatnonzero(np.abs(speed.hamiltonian(x_new, p_new) - h0) > drift_tol)
    for level in range(1, MAX_STEP_REFINEMENT + 1):
        if redo.size == 0:
            break
        n_sub = 4**level
        xs, ps, hs = x[redo], p[redo], h[redo] / n_sub
        for _ in range(n_sub):
            xs, ps = _rk4_step(xs, ps, hs, speed)
        x_new[redo], p_new[redo] = xs, ps
        redo = redo[np.abs(speed.hamiltonian(xs, ps) - h0[redo]) > drift_tol]
    if redo.size:
        logger.debug(f"{redo.size} rays above drift tolerance {drift_tol:g} after {4**MAX_STEP_REFINEMENT} substeps")
    return x_new, p_new


def _step_plan(durations: np.ndarray, h_ray: float):
    counts = np.maximum(1, np.ceil(durations / h_ray - 1e-9).astype(int))
    return counts, durations / counts


def integrate(
        x0: np.ndarray,
        p0: np.ndarray,
        durations: np.ndarray,
        speed: SpeedInterpolant,
        h_ray: float = DEFAULT_RAY_STEP,
        stop_on_escape: bool = False,
        record: bool = False,
        drift_tol: Optional[float] = HAMILTONIAN_STEP_TOL,
):
    """
    여러 광선을 한꺼번에 RK4 로 적분

    Ray i takes ``ceil(durations[i] / h_ray)`` equal steps, so it lands
    exactly on its duration. With ``stop_on_escape`` a ray freezes at the
    first state with |x| >= 1. Steps whose Hamiltonian change exceeds
    ``drift_tol`` are recomputed with substeps; ``drift_tol=None`` gives plain
    fixed-step RK4.

    Returns:
        dict: ``x``, ``p`` final states; ``elapsed`` time per ray; ``escaped``
        flags; with ``record`` also ``history_x``/``history_p`` of shape
        (steps + 1, m, 2) and ``steps`` taken per ray
    """
    x = np.array(x0, dtype=np.float64).reshape(-1, 2)
    p = np.array(p0, dtype=np.float64).reshape(-1, 2)
    durations = np.broadcast_to(np.asarray(durations, dtype=np.float64), (x.shape[0],)).copy()
    if np.any(durations <= 0) or h_ray <= 0:
        raise InvariantError("ray durations and h_ray must be positive")
    if drift_tol is not None and drift_tol <= 0:
        raise InvariantError(f"drift_tol must be positive, got {drift_tol}")
    counts, h = _step_plan(durations, h_ray)
    steps = np.zeros(x.shape[0], dtype=int)
    escaped = np.zeros(x.shape[0], dtype=bool)
    history_x, history_p = [x.copy()], [p.copy()]
    for k in range(int(counts.max())):
        active = (k < counts) & ~escaped
        if not active.any():
            break
        x_new, p_new = _controlled_step(x[active], p[active], h[active], speed, drift_tol)
        x[active], p[active] = x_new, p_new
        steps[active] += 1
        if stop_on_escape:
            escaped |= active & (np.hypot(x[:, 0], x[:, 1]) >= 1.0)
        if record:
            history_x.append(x.copy())
            history_p.append(p.copy())
    result = {'x': x, 'p': p, 'elapsed': steps * h, 'escaped': escaped, 'steps': steps}
    if record:
        result['history_x'] = np.stack(history_x)
        result['history_p'] = np.stack(history_p)
    return result


def initial_momentum(covectors: Sequence[Covector], sigma: int, speed: SpeedInterpolant) -> np.ndarray:
    """p = σ ξ̂ / c(y), so that c|p| = 1 and the ray leaves y along σξ̂."""
    y = np.array([cv.y for cv in covectors])
    direction = np.array([cv.direction for cv in covectors])
    c, _ = speed.evaluate(y)
    return sigma * direction / c[:, None]


def _check_sigma(sigma: int):
    if sigma not in (1, -1):
        raise InvariantError(f"sigma must be +1 or -1, got {sigma}")


def trace_geodesic(
        start: Covector,
        sigma: int,
        t_max: float,
        speed: Optional[SpeedInterpolant] = None,
        h_ray: float = DEFAULT_RAY_STEP,
) -> RayPath:
    """
    (y, σξ̂) 에서 출발한 단위 속력 측지선

    Args:
        start: covector with |y| < 1
        sigma: +1 traces along ξ̂, −1 against it
        t_max: largest elapsed time

    Returns:
        RayPath: ``escaped`` is False for a ray still inside B₁(0) at t_max
    """
    _check_sigma(sigma)
    if t_max <= 0:
        raise InvariantError(f"t_max must be positive, got {t_max}")
    speed = speed or SpeedInterpolant()
    p0 = initial_momentum([start], sigma, speed)
    run = integrate(np.array([start.y]), p0, t_max, speed, h_ray, stop_on_escape=True, record=True)
    n = int(run['steps'][0])
    h = t_max / _step_plan(np.array([t_max]), h_ray)[0][0]
    xs = run['history_x'][:n + 1, 0]
    ps = run['history_p'][:n + 1, 0]
    t = h * np.arange(n + 1)
    if not run['escaped'][0]:
        logger.warning(f"ray from {start.y} (sigma={sigma}) still inside B1(0) at t = {t_max}")
        return RayPath(start, sigma, t, xs, ps, escaped=False)
    return RayPath(
        start, sigma, t, xs, ps, escaped=True,
        exit_time=float(t[-1]),
        exit_point=xs[-1].copy(),
        exit_direction=ps[-1] / np.hypot(*ps[-1]),
    )


def _ring_roots(x: np.ndarray, v: np.ndarray, radius: float):
    """
    |x + s v| = radius 의 근 (|v| = 1)

    Uses q = −(b + sign(b)√disc) so that neither root loses digits to
    cancellation.
    """
    b = float(np.dot(x, v))
    c = float(np.dot(x, x)) - radius**2
    disc = b * b - c
    if disc < 0:
        return None
    q = -(b + np.copysign(np.sqrt(disc), b))
    if q == 0:
        return 0.0, 0.0
    s1, s2 = q, c / q
    return (s1, s2) if s1 <= s2 else (s2, s1)


def _make_event(sigma, branch, s, center, line, config, c_y, xi_norm, near_side):
    x_e, v, t_e = line
    point = x_e + s * v
    normal = (point - center) / config.r
    if abs(np.dot(normal, v)) < 1.0 - PERPENDICULAR_TOL:
        logger.debug(f"tangential crossing discarded (|v.n| = {abs(np.dot(normal, v)):.3g})")
        return None
    theta_hat = center / np.hypot(*center)
    sign = 1.0 if branch == 1 else -1.0
    scale = c_y * xi_norm
    omega = -sigma * (config.R / config.r) * scale * (point - np.dot(point, theta_hat) * theta_hat)
    return DetectionEvent(
        sigma=sigma,
        branch=branch,
        t_det=float(t_e + s),
        theta=float(np.arctan2(center[1], center[0])),
        lam=float(sigma * sign * scale / (2.0 * config.r)),
        tau=float(-sigma * scale),
        omega=(float(omega[0]), float(omega[1])),
        point=(float(point[0]), float(point[1])),
        direction=(float(v[0]), float(v[1])),
        center=(float(center[0]), float(center[1])),
        near_side=near_side,
    )


def _line_events(line, sigma, config, c_y, xi_norm, near_side):
    x_e, v, _ = line
    events = []
    if config.mode == SMALL:
        roots = _ring_roots(x_e, v, config.R)
        if roots is None or roots[1] < 0:
            return events
        s_c = roots[1]
        center = x_e + s_c * v
        for branch, s in ((1, s_c - config.r), (2, s_c + config.r)):
            events.append(_make_event(sigma, branch, s, center, line, config, c_y, xi_norm, False))
    else:
        roots = _ring_roots(x_e, v, 1.0)
        if roots is None:
            return events
        s_a, s_b = roots
        events.append(_make_event(sigma, 1, s_b + config.r, x_e + s_b * v, line, config, c_y, xi_norm, False))
        if near_side:
            events.append(_make_event(sigma, 2, s_a + config.r, x_e + s_a * v, line, config, c_y, xi_norm, True))
    return [event for event in events if event is not None]


def detect_events(path: RayPath, config: DetectorConfig, near_side: bool = False,
                  speed: Optional[SpeedInterpolant] = None) -> List[DetectionEvent]:
    """
    직선 연장 위에서 검출기 원과의 수직 교차

    Small radius: the line passes Rθ at s_c, crossings at s_c ∓ r.
    Large radius: the line meets |z| = 1 at s_a <= s_b; the exit-point circle
    is crossed at s_b + r, the near-side circle (on request) at s_a + r.

    Returns:
        list[DetectionEvent]: empty when the path has not escaped or the line
        misses the centre ring
    """
    if not path.escaped:
        logger.warning(f"ray from {path.start.y} has not escaped B1(0); no events")
        return []
    speed = speed or SpeedInterpolant()
    c_y = speed.speed_at(path.start.y)
    line = (path.exit_point, path.exit_direction, path.exit_time)
    events = _line_events(line, path.sigma, config, c_y, path.start.norm, near_side)
    if not events:
        logger.warning(f"exterior line of ray from {path.start.y} misses the centre ring")
    return events


def _trace_events(covectors: Sequence[Covector], config: DetectorConfig, speed: SpeedInterpolant,
                  h_ray: float, t_max: float, near_side: bool) -> List[List[DetectionEvent]]:
    """σ = ± 두 방향을 벡터화하여 추적한 뒤 공변벡터별 사건 목록"""
    y = np.array([cv.y for cv in covectors])
    c_y, _ = speed.evaluate(y)
    images = [[] for _ in covectors]
    for sigma in (1, -1):
        p0 = initial_momentum(covectors, sigma, speed)
        run = integrate(y, p0, t_max, speed, h_ray, stop_on_escape=True)
        for i, cv in enumerate(covectors):
            if not run['escaped'][i]:
                continue
            p_e = run['p'][i]
            line = (run['x'][i], p_e / np.hypot(*p_e), float(run['elapsed'][i]))
            images[i].extend(_line_events(line, sigma, config, c_y[i], cv.norm, near_side))
    return images


def canonical_image(
        cv: Covector,
        config: DetectorConfig,
        speed: Optional[SpeedInterpolant] = None,
        near_side: bool = False,
        h_ray: float = DEFAULT_RAY_STEP,
        t_max: float = DEFAULT_T_MAX,
) -> List[DetectionEvent]:
    """
    (y, ξ) 가 데이터에 남기는 특이점 (t, θ, τ, ω)

    Small radius gives four events (two branches for each time sign), large
    radius two, plus two near-side events with ``near_side``.
    """
    speed = speed or SpeedInterpolant()
    events = _trace_events([cv], config, speed, h_ray, t_max, near_side)[0]
    expected = 4 if config.mode == SMALL else (4 if near_side else 2)
    if len(events) < expected:
        logger.warning(f"covector {cv.y}, {cv.xi}: {len(events)} of {expected} events "
                       f"(non-escaping, tangential or missed geometry)")
    return events


def _image_features(events: Sequence[DetectionEvent]) -> np.ndarray:
    return np.array([
        [e.t_det, np.cos(e.theta), np.sin(e.theta), e.tau, e.omega[0], e.omega[1]] for e in events
    ]).reshape(-1, 6)


def duplicate_images(images: Sequence[Sequence[DetectionEvent]], tol: float = 1e-6) -> List[Tuple[int, int]]:
    """
    같은 (t, θ, τ, ω) 로 가는 서로 다른 공변벡터 쌍

    The canonical relations need not be globally one to one; coinciding
    images are reported, not resolved.

    Returns:
        list[tuple]: sorted index pairs (i, j), i < j
    """
    owners = np.array([i for i, events in enumerate(images) for _ in events], dtype=int)
    features = _image_features([e for events in images for e in events])
    if owners.size < 2:
        return []
    pairs = set()
    for a, b in cKDTree(features).query_pairs(tol):
        i, j = sorted((int(owners[a]), int(owners[b])))
        if i != j:
            pairs.add((i, j))
    if pairs:
        logger.info(f"{len(pairs)} covector pairs share a canonical image")
    return sorted(pairs)


def mirror_point(x, theta: float, config: DetectorConfig) -> np.ndarray:
    """
    검출기 원 위의 거울점

    Small radius: the antipode 2Rθ − x. Large radius: the reflection of x
    across the diameter of C(θ, r) orthogonal to θ.

    Raises:
        InvariantError: x is not on C(θ, r)
    """
    x = np.asarray(x, dtype=np.float64)
    theta_hat = np.array([np.cos(theta), np.sin(theta)])
    center = config.R * theta_hat
    if abs(np.hypot(*(x - center)) - config.r) > MIRROR_TOL:
        raise InvariantError(f"mirror point needs |x - R theta| = r, got {np.hypot(*(x - center))}")
    if config.mode == SMALL:
        return 2.0 * center - x
    return x - 2.0 * np.dot(x - center, theta_hat) * theta_hat


def second_conormal_circle(x_tilde, theta0, r1: float) -> Tuple[np.ndarray, float]:
    """
    x̃ 에서 같은 conormal 을 갖는 두 번째 원

    Reflects the ring centre θ₀ across the line through the origin
    orthogonal to x̃ − θ₀.

    Returns:
        tuple: (θ₁ on the unit ring, radius r₂ = |x̃ − θ₁|)
    """
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    theta0 = np.asarray(theta0, dtype=np.float64)
    d = x_tilde - theta0
    theta1 = theta0 - 2.0 * np.dot(theta0, d) / r1**2 * d
    return theta1, float(np.hypot(*(x_tilde - theta1)))


def _partner_starts(events: Sequence[DetectionEvent], config: DetectorConfig):
    """거울점 x̃ 와 그 점에서의 수직 방향 ṽ (원점에서 멀어지는 쪽)"""
    starts, velocities = [], []
    for e in events:
        x_tilde = mirror_point(e.point, e.theta, config)
        n = (x_tilde - np.asarray(e.center)) / config.r
        sign = np.sign(np.dot(n, x_tilde)) or 1.0
        starts.append(x_tilde)
        velocities.append(sign * n)
    return np.array(starts).reshape(-1, 2), np.array(velocities).reshape(-1, 2)


def trace_partners(events: Sequence[DetectionEvent], config: DetectorConfig, speed: SpeedInterpolant,
                   h_ray: float = DEFAULT_RAY_STEP):
    """
    거울점에서 시간을 거슬러 추적한 짝 공변벡터

    The partner ray reaches x̃ at the same elapsed time t_det crossing
    C(θ, r) perpendicularly. Tracing back from x̃ along −ṽ for t_det gives
    its base point y' and forward direction.

    Returns:
        tuple: (positions (m, 2), directions (m, 2))
    """
    if not events:
        return np.zeros((0, 2)), np.zeros((0, 2))
    x_tilde, v_tilde = _partner_starts(events, config)
    durations = np.array([e.t_det for e in events])
    run = integrate(x_tilde, -v_tilde, durations, speed, h_ray)
    p = run['p']
    return run['x'], -p / np.hypot(p[:, 0], p[:, 1])[:, None]


class PartnerMatcher:
    """WF 표본에 대한 위치/방향 일치 검사 (cKDTree)"""

    def __init__(self, wf: Sequence[Covector], position_tol: float, direction_tol_deg: float = DIRECTION_TOL_DEG):
        self.positions = np.array([cv.y for cv in wf]).reshape(-1, 2)
        self.directions = np.array([cv.direction for cv in wf]).reshape(-1, 2)
        self.position_tol = position_tol
        self.cos_tol = np.cos(np.deg2rad(direction_tol_deg))
        self.tree = cKDTree(self.positions)

    def matches(self, position: np.ndarray, direction: np.ndarray) -> bool:
        if np.hypot(*position) >= 1.0:
            return False
        for j in self.tree.query_ball_point(position, self.position_tol):
            if abs(np.dot(self.directions[j], direction)) >= self.cos_tol:
                return True
        return False


def _classify_chunk(covectors, aperture, config, speed, matcher, h_ray, t_max, near_side):
    images = _trace_events(covectors, config, speed, h_ray, t_max, near_side)
    entries = []
    for cv, events in zip(covectors, images):
        if not events:
            entries.append(VisibilityEntry(cv, OUT_OF_APERTURE, diagnostic='non-escaping or no detector crossing'))
            continue
        seen = sorted((e for e in events if aperture.contains(e)), key=lambda e: e.t_det)
        if not seen:
            entries.append(VisibilityEntry(cv, OUT_OF_APERTURE, diagnostic='no event in aperture'))
            continue
        positions, directions = trace_partners(seen, config, speed, h_ray)
        witness, status = None, 'matched'
        for event, position, direction in zip(seen, positions, directions):
            if np.hypot(*position) >= 1.0:
                witness, status = event, 'outside'
                break
            if not matcher.matches(position, direction):
                witness, status = event, 'unmatched'
                break
        if witness is not None:
            entries.append(VisibilityEntry(cv, VISIBLE, witness, status))
        else:
            entries.append(VisibilityEntry(cv, MASKED, seen[0], status, diagnostic='every aperture event has a WF partner'))
    return entries


def visibility(
        wf: Sequence[Covector],
        aperture: Aperture,
        config: DetectorConfig,
        speed: Optional[SpeedInterpolant] = None,
        position_tol: float = 0.02,
        direction_tol_deg: float = DIRECTION_TOL_DEG,
        near_side: Optional[bool] = None,
        h_ray: float = DEFAULT_RAY_STEP,
        t_max: float = DEFAULT_T_MAX,
        n_jobs: Optional[int] = None,
) -> VisibilityReport:
    """
    WF 표본의 가시성 판정

    A covector is visible when one of its events lands in U × Γ and the
    mirror partner of that event is not in the WF sample; masked when every
    such partner is; out_of_aperture when no event lands in U × Γ.
    Chunks of covectors run through joblib; the report keeps input order.

    Args:
        position_tol: partner matching radius, usually 2h
        near_side: include near-side events; defaults to True for large radius
        n_jobs: defaults to settings.TAT_THREADS
    """
    if not wf:
        raise InvariantError("visibility needs a nonempty WF sample")
    speed = speed or SpeedInterpolant()
    near_side = (config.mode == LARGE) if near_side is None else near_side
    n_jobs = getattr(settings, 'TAT_THREADS', 1) if n_jobs is None else n_jobs
    matcher = PartnerMatcher(wf, position_tol, direction_tol_deg)
    chunks = [list(wf[i:i + CHUNK_SIZE]) for i in range(0, len(wf), CHUNK_SIZE)]
    logger.info(f"visibility of {len(wf)} covectors in {len(chunks)} chunks (n_jobs={n_jobs})")
    results = Parallel(n_jobs=n_jobs)(
        delayed(_classify_chunk)(chunk, aperture, config, speed, matcher, h_ray, t_max, near_side)
        for chunk in chunks
    )
    report = VisibilityReport([entry for chunk in results for entry in chunk])
    logger.info(f"visibility verdicts: {report.counts()}")
    return report


def coverage_time(grid: Grid2D, config: DetectorConfig, speed: Optional[SpeedField] = None) -> float:
    """
    T_cover = sup_{x∈Ω} inf_θ dist(x, C(θ, r)) / min c

    For a node x the distance |x − Rθ| sweeps [|R − |x||, R + |x|] as θ
    turns, so the inner infimum is the gap between r and that interval.
    """
    rho = grid.radius[grid.radius < 1.0]
    low, high = np.abs(config.R - rho), config.R + rho
    gap = np.maximum(0.0, np.maximum(low - config.r, config.r - high))
    c_min = speed.min_speed if speed is not None else 1.0
    return float(gap.max() / c_min)


def trace_statistics(covectors: Sequence[Covector], speed: SpeedInterpolant,
                     h_ray: float = DEFAULT_RAY_STEP, t_max: float = DEFAULT_T_MAX) -> Dict[str, float]:
    """탈출 시간과 Hamiltonian 편차 요약 (σ = +1)"""
    y = np.array([cv.y for cv in covectors])
    run = integrate(y, initial_momentum(covectors, 1, speed), t_max, speed, h_ray,
                    stop_on_escape=True, record=True)
    drift = 0.0
    for k in range(run['history_x'].shape[0]):
        drift = max(drift, float(np.max(np.abs(speed.hamiltonian(run['history_x'][k], run['history_p'][k]) - 1.0))))
    escaped = run['escaped']
    return {
        'escaped': int(escaped.sum()),
        'total': len(covectors),
        'max_exit_time': float(run['elapsed'][escaped].max()) if escaped.any() else float('nan'),
        'hamiltonian_drift': drift,
    }
