import logging
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
from PIL import Image

from tat_experiments.serializers.array_serializers import PgmSidecar

logger = logging.getLogger(__name__)

MAX_LEVEL = 65535


def quantize(values: np.ndarray):
    """min–max 스케일로 uint16 변환; 상수 배열은 0"""
    values = np.asarray(values, dtype=np.float64)
    low, high = float(values.min()), float(values.max())
    if high > low:
        pixels = np.rint((values - low) / (high - low) * MAX_LEVEL)
    else:
        pixels = np.zeros(values.shape)
    return pixels.astype(np.uint16), low, high


def dequantize(pixels: np.ndarray, sidecar: PgmSidecar) -> np.ndarray:
    values = sidecar.low + (sidecar.high - sidecar.low) * np.asarray(pixels, dtype=np.float64) / MAX_LEVEL
    return np.flipud(values) if sidecar.flipped_rows else values


def write_pgm(path: Union[str, Path], values: np.ndarray, flip_rows: bool = True) -> Path:
    """
    16-bit PGM 저장

    Grid arrays have y increasing with the row index, so rows are flipped to
    put +y at the top of the image. The scale goes to ``<path>.json``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got shape {values.shape}")
    view = np.flipud(values) if flip_rows else values
    pixels, low, high = quantize(view)
    Image.fromarray(pixels).save(path, format='PPM')
    sidecar = PgmSidecar(low=low, high=high, shape=values.shape, flipped_rows=flip_rows)
    path.with_name(path.name + '.json').write_text(sidecar.model_dump_json(indent=2), encoding='utf-8')
    logger.debug(f"wrote {path} scale [{low:.4g}, {high:.4g}]")
    return path


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    path = Path(path)
    sidecar = PgmSidecar.model_validate_json(path.with_name(path.name + '.json').read_text(encoding='utf-8'))
    with Image.open(path) as image:
        pixels = np.asarray(image, dtype=np.float64)
    return dequantize(pixels, sidecar)


def overlay(background: np.ndarray, marks: Dict[float, np.ndarray], weight: Optional[float] = 0.5) -> np.ndarray:
    """
    배경 이미지 위에 표시 마스크 덧그리기

    The background is rescaled into [0, weight]; every mask in ``marks``
    paints its level (in [0, 1]) on top, later masks winning.
    """
    background = np.asarray(background, dtype=np.float64)
    span = np.ptp(background)
    image = weight * (background - background.min()) / span if span > 0 else np.zeros(background.shape)
    for level, mask in marks.items():
        image[mask] = level
    return image
