from collections import Counter
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from config.exceptions import InvariantError
from tat_field.domain import Covector

VISIBLE = 'visible'
MASKED = 'masked'
OUT_OF_APERTURE = 'out_of_aperture'


@dataclass(frozen=True)
class RayState:
    x: Tuple[float, float]
    p: Tuple[float, float]
    t: float


@dataclass(frozen=True, eq=False)
class RayPath:
    """
    (y, σξ̂) 에서 출발한 측지선 표본

    ``t`` is elapsed time (>= 0) along the trace direction. Once the ray
    leaves B₁(0) at ``exit_time`` it continues along the straight line
    ``exit_point + s·exit_direction``.
    """
    start: Covector
    sigma: int
    t: np.ndarray
    x: np.ndarray
    p: np.ndarray
    escaped: bool
    exit_time: Optional[float] = None
    exit_point: Optional[np.ndarray] = None
    exit_direction: Optional[np.ndarray] = None

    def state(self, index: int) -> RayState:
        return RayState(tuple(self.x[index]), tuple(self.p[index]), float(self.t[index]))

    def position_at(self, t: float) -> np.ndarray:
        if self.escaped and t >= self.exit_time:
            return self.exit_point + (t - self.exit_time) * self.exit_direction
        return np.array([np.interp(t, self.t, self.x[:, 0]), np.interp(t, self.t, self.x[:, 1])])


@dataclass(frozen=True)
class DetectionEvent:
    """
    검출기 원을 수직으로 지나는 순간

    ``t_det`` is the elapsed time |t|; the signed data time is σ·t_det.
    ``branch`` 1 is the crossing before the centre passage (small radius) or
    after the exit-point centre (large radius); 2 is the second crossing
    (small) or the near-side crossing (large).
    """
    sigma: int
    branch: int
    t_det: float
    theta: float
    lam: float
    tau: float
    omega: Tuple[float, float]
    point: Tuple[float, float]
    direction: Tuple[float, float]
    center: Tuple[float, float]
    near_side: bool = False

    @property
    def time(self) -> float:
        return self.sigma * self.t_det


@dataclass(frozen=True)
class Aperture:
    """
    측정 구경 U × Γ

    ``window`` = (t0, t1) accepts t0 < t <= t1; ``arc`` = (a, b) accepts
    angles strictly between a and b modulo 2π, None is the full circle.
    """
    window: Tuple[float, float]
    arc: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        t0, t1 = self.window
        if not t0 < t1:
            raise InvariantError(f"aperture time window must satisfy t0 < t1, got {self.window}")
        if self.arc is not None and not (self.arc[0] < self.arc[1] <= self.arc[0] + 2 * np.pi):
            raise InvariantError(f"aperture arc must satisfy a < b <= a + 2pi, got {self.arc}")

    def contains_time(self, t: float) -> bool:
        return self.window[0] < t <= self.window[1]

    def contains_angle(self, theta: float) -> bool:
        if self.arc is None:
            return True
        a, b = self.arc
        offset = np.mod(theta - a, 2 * np.pi)
        return 0 < offset < b - a

    def contains(self, event: DetectionEvent) -> bool:
        return self.contains_time(event.t_det) and self.contains_angle(event.theta)


@dataclass(frozen=True)
class VisibilityEntry:
    covector: Covector
    verdict: str
    witness: Optional[DetectionEvent] = None
    partner: str = 'none'
    diagnostic: str = ''


@dataclass
class VisibilityReport:
    entries: List[VisibilityEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def verdicts(self) -> List[str]:
        return [entry.verdict for entry in self.entries]

    def counts(self) -> dict:
        counts = Counter(self.verdicts())
        return {key: counts.get(key, 0) for key in (VISIBLE, MASKED, OUT_OF_APERTURE)}

    def to_rows(self) -> List[dict]:
        """CSV 행: 공변벡터, 판정, 증거 사건"""
        rows = []
        for entry in self.entries:
            witness = entry.witness
            rows.append({
                'y1': entry.covector.y[0],
                'y2': entry.covector.y[1],
                'xi1': entry.covector.xi[0],
                'xi2': entry.covector.xi[1],
                'verdict': entry.verdict,
                't': witness.t_det if witness else '',
                'theta': witness.theta if witness else '',
                'sigma': witness.sigma if witness else '',
                'branch': witness.branch if witness else '',
                'partner': entry.partner,
            })
        return rows
