from typing import Literal, Optional, Tuple

from django.conf import settings
from pydantic import BaseModel, ConfigDict, Field, model_validator

from tat_detector.domain import DetectorConfig
from tat_field.domain import Grid2D
from tat_field.serializers.spec_serializers import PaperDefaultSpeedSpec, PhantomSpec, SpeedSpec
from tat_field.services import make_grid
from tat_rays.domain import Aperture


class Section(BaseModel):
    model_config = ConfigDict(extra='forbid')


class GridSection(Section):
    L: float = Field(4.0, gt=1.0)
    n: int = Field(129, ge=16)
    pml_width: float = Field(default_factory=lambda: getattr(settings, 'TAT_PML_WIDTH', 0.5), ge=0)


class DetectorSection(Section):
    mode: Literal['small', 'large'] = 'large'
    R: float = 1.0
    r: float = Field(2.0, gt=0)
    n_theta: int = Field(180, ge=1)
    n_alpha: int = Field(256, ge=64)


class PmlSection(Section):
    sigma_max: Optional[float] = Field(None, gt=0)
    order: Optional[int] = Field(None, ge=0)


class ApertureSection(Section):
    """Γ = (arc_start, arc_end), U = (t_start, t_end]; no arc means the full circle."""
    arc_start: Optional[float] = None
    arc_end: Optional[float] = None
    t_start: float = Field(0.0, ge=0)
    t_end: Optional[float] = None
    taper: float = Field(0.1, ge=0, lt=0.5)

    @model_validator(mode='after')
    def arc_is_complete(self):
        if (self.arc_start is None) != (self.arc_end is None):
            raise ValueError("aperture needs both arc_start and arc_end, or neither")
        return self

    @property
    def arc(self) -> Optional[Tuple[float, float]]:
        if self.arc_start is None:
            return None
        return (self.arc_start, self.arc_end)


class TimeSection(Section):
    T: float = Field(5.0, gt=0)
    dt: Optional[float] = Field(None, gt=0)
    cfl_safety: Optional[float] = Field(None, gt=0, le=1)
    chi_start: Optional[float] = Field(None, gt=0)
    chi_end: Optional[float] = Field(None, gt=0)


class ReconSection(Section):
    method: Literal['cg', 'landweber'] = 'cg'
    iters: int = Field(15, ge=1)
    step: Optional[float] = Field(None, gt=0)
    tol: float = Field(1e-6, gt=0)
    tikhonov: float = Field(0.0, ge=0)
    support_margin: float = Field(0.05, gt=0, lt=1)
    power_iters: int = Field(30, ge=10)


class NoiseSection(Section):
    level: float = Field(0.0, ge=0)


class SeedsSection(Section):
    noise: Optional[int] = None
    power: Optional[int] = None


class RaysSection(Section):
    edge_threshold: float = Field(0.5, gt=0, lt=1)
    h_ray: float = Field(0.0025, gt=0)
    t_max: float = Field(10.0, gt=0)
    spline_order: Literal[1, 3, 5] = 5
    position_tol: Optional[float] = Field(None, gt=0)
    direction_tol_deg: float = Field(5.0, gt=0, lt=90)
    near_side: Optional[bool] = None


class SweepSection(Section):
    """R (small) 또는 r (large) 격자: start, start + step, ..."""
    start: Optional[float] = None
    step: Optional[float] = Field(None, gt=0)
    count: int = Field(5, ge=3)
    record_stride: int = Field(1, ge=1)


class OutputSection(Section):
    directory: Optional[str] = None
    prefix: str = 'tat'


class ExperimentConfig(Section):
    """
    실험 설정 전체

    Each section maps to one YAML block of flat keys. The cross-section
    validator rebuilds the grid and the detector geometry so that every
    module invariant is checked at load time.
    """
    grid: GridSection = Field(default_factory=GridSection)
    speed: SpeedSpec = Field(default_factory=PaperDefaultSpeedSpec)
    phantom: PhantomSpec = Field(default_factory=PhantomSpec)
    detector: DetectorSection = Field(default_factory=DetectorSection)
    pml: PmlSection = Field(default_factory=PmlSection)
    aperture: ApertureSection = Field(default_factory=ApertureSection)
    time: TimeSection = Field(default_factory=TimeSection)
    recon: ReconSection = Field(default_factory=ReconSection)
    noise: NoiseSection = Field(default_factory=NoiseSection)
    seeds: SeedsSection = Field(default_factory=SeedsSection)
    rays: RaysSection = Field(default_factory=RaysSection)
    sweep: SweepSection = Field(default_factory=SweepSection)
    output: OutputSection = Field(default_factory=OutputSection)

    @model_validator(mode='after')
    def check_invariants(self):
        grid = self.build_grid()
        config = self.detector_config()
        if config.reach > grid.interior_half_width - grid.h:
            raise ValueError(
                f"detector circles reach |x| = {config.reach} but the grid interior ends at "
                f"{grid.interior_half_width} (L={grid.half_width}, pml_width={grid.pml_width})"
            )
        chi_start, chi_end = self.cutoff_times()
        if chi_start is not None and not (0 < chi_start < chi_end <= self.time.T):
            raise ValueError(f"time cutoff needs 0 < chi_start < chi_end <= T, got ({chi_start}, {chi_end}, T={self.time.T})")
        self.visibility_aperture()
        return self

    def build_grid(self) -> Grid2D:
        return make_grid(self.grid.L, self.grid.n, self.grid.pml_width)

    def detector_config(self) -> DetectorConfig:
        d = self.detector
        return DetectorConfig(mode=d.mode, r=d.r, R=d.R, n_theta=d.n_theta, n_alpha=d.n_alpha,
                              T=self.time.T, arc=self.aperture.arc)

    def cutoff_times(self) -> Tuple[Optional[float], Optional[float]]:
        if self.time.chi_start is None:
            return None, None
        return self.time.chi_start, self.time.chi_end or self.time.T

    def visibility_aperture(self) -> Aperture:
        t_end = self.time.T if self.aperture.t_end is None else self.aperture.t_end
        return Aperture(window=(self.aperture.t_start, t_end), arc=self.aperture.arc)
