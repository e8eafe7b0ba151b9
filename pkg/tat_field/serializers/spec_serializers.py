from typing import Annotated, List, Literal, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field


# Pydantic 모델로 speed / phantom 입력 구조 강제
class ConstantSpeedSpec(BaseModel):
    """c₀ on the plateau of η, blended to 1 outside the unit disc."""
    model_config = ConfigDict(extra='forbid')

    kind: Literal['constant'] = 'constant'
    c0: float = Field(1.0, gt=0)


class PaperDefaultSpeedSpec(BaseModel):
    """c = 1 + amplitude·sin(kx·x)·cos(ky·y)·η(x, y)"""
    model_config = ConfigDict(extra='forbid')

    kind: Literal['paper_default'] = 'paper_default'
    amplitude: float = 0.3
    kx: float = 8.0
    ky: float = 5.0
    radius: float = Field(1.0, gt=0, le=1.0)
    taper: float = Field(0.2, gt=0)


class RadialBumpSpeedSpec(BaseModel):
    """c = 1 + a·exp(−|x|²/σ²)·η(x, y)"""
    model_config = ConfigDict(extra='forbid')

    kind: Literal['radial_bump'] = 'radial_bump'
    a: float
    sigma: float = Field(gt=0)
    radius: float = Field(1.0, gt=0, le=1.0)
    taper: float = Field(0.2, gt=0)


SpeedSpec = Annotated[
    Union[ConstantSpeedSpec, PaperDefaultSpeedSpec, RadialBumpSpeedSpec],
    Field(discriminator='kind'),
]


class GaussianComponent(BaseModel):
    model_config = ConfigDict(extra='forbid')

    kind: Literal['gaussian'] = 'gaussian'
    center: Tuple[float, float] = (0.0, 0.0)
    sigma: float = Field(gt=0)
    amp: float = 1.0

    @property
    def support_radius(self) -> float:
        # exp(−r²/2σ²) is cut smoothly between 4σ and 5σ
        return 5.0 * self.sigma


class SmoothedDiscComponent(BaseModel):
    model_config = ConfigDict(extra='forbid')

    kind: Literal['smoothed_disc'] = 'smoothed_disc'
    center: Tuple[float, float] = (0.0, 0.0)
    radius: float = Field(gt=0)
    taper: float = Field(0.1, gt=0)
    amp: float = 1.0

    @property
    def support_radius(self) -> float:
        return self.radius + self.taper


PhantomComponent = Annotated[
    Union[GaussianComponent, SmoothedDiscComponent],
    Field(discriminator='kind'),
]


class PhantomSpec(BaseModel):
    """
    초기 압력 f 의 구성 요소 목록

    빈 components 는 f ≡ 0 을 의미합니다.
    """
    model_config = ConfigDict(extra='forbid')

    margin: float = Field(0.05, gt=0, lt=1)
    components: List[PhantomComponent] = Field(default_factory=list)
