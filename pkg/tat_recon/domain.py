from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from tat_field.domain import Phantom


@dataclass(frozen=True, eq=False)
class TimeCutoff:
    """
    시간 cutoff χ 의 표본

    χ = 1 on [0, T], 0 for t >= T1, C^∞ monotone in between.
    """
    T: float
    T1: float
    dt: float
    weights: np.ndarray

    @property
    def nt(self) -> int:
        return self.weights.size


@dataclass
class ReconResult:
    """반복 재구성 결과"""
    estimate: Phantom
    residual_history: List[float] = field(default_factory=list)
    step_size: Optional[float] = None
    iterations: int = 0
    method: str = 'landweber'
    converged: bool = False

    @property
    def final_misfit(self) -> float:
        return self.residual_history[-1] if self.residual_history else 0.0
