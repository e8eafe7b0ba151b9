from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field


class GridMeta(BaseModel):
    model_config = ConfigDict(extra='forbid')

    L: float
    n: int
    pml_width: float


class DetectorMeta(BaseModel):
    """DetectorConfig.describe() 와 같은 구조"""
    model_config = ConfigDict(extra='forbid')

    mode: Literal['small', 'large']
    R: float
    r: float
    n_theta: int
    n_alpha: int
    T: float
    arc: Optional[Tuple[float, float]] = None


class ArraySidecar(BaseModel):
    """
    ArrayFile 옆에 저장되는 JSON 메타데이터

    ``dims`` must repeat the binary header; the rest is semantic metadata.
    """
    model_config = ConfigDict(extra='forbid')

    format: Literal['TATARR1'] = 'TATARR1'
    version: int = 1
    dims: List[int]
    kind: Literal['sinogram', 'estimate', 'phantom', 'radius_family', 'array'] = 'array'
    dt: Optional[float] = Field(None, gt=0)
    grid: Optional[GridMeta] = None
    detector: Optional[DetectorMeta] = None
    radii: Optional[List[float]] = None
    seed: Optional[int] = None
    notes: Optional[str] = None


class PgmSidecar(BaseModel):
    """16-bit PGM 의 min–max 스케일; value = low + (high − low)·pixel/65535"""
    model_config = ConfigDict(extra='forbid')

    low: float
    high: float
    shape: Tuple[int, int]
    flipped_rows: bool = True
