"""
설정 하나로 실험 전체를 조립

``Experiment`` builds the grid, speed, phantom, detectors and PML of an
ExperimentConfig once and runs the forward, reconstruction, visibility and
radius-sweep pipelines on them. ``run_*`` functions add persistence and are
what the management commands call.
"""
import csv
import logging
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
from django.conf import settings

from config.exceptions import GeometryMismatchError
from tat_detector.domain import SMALL, DetectorConfig, RadiusFamily, Sinogram
from tat_detector.services import (
    add_noise,
    cylinder_residual_large,
    cylinder_residual_small,
    forward_operator,
    rms,
    sweep_large_radius,
    sweep_small_radius,
    theta_grid,
)
from tat_experiments.serializers.array_serializers import ArraySidecar, DetectorMeta, GridMeta
from tat_experiments.serializers.config_serializers import ExperimentConfig
from tat_experiments.utils.array_io import read_array, write_array
from tat_experiments.utils.pgm import overlay, write_pgm
from tat_field.domain import Phantom
from tat_field.services import make_phantom, phantom_edges, sample_speed
from tat_rays.domain import MASKED, OUT_OF_APERTURE, VISIBLE, VisibilityReport
from tat_rays.services import SpeedInterpolant, coverage_time, visibility
from tat_recon.domain import ReconResult
from tat_recon.services import (
    ForwardModel,
    edge_recovery_ratio,
    operator_norm_estimate,
    reconstruct,
    relative_error,
    time_cutoff_chi,
)
from tat_wave.services import cfl_time_step, check_cfl, pml_profile

logger = logging.getLogger(__name__)

VERDICT_LEVELS = {OUT_OF_APERTURE: 0.6, MASKED: 0.8, VISIBLE: 1.0}


class Experiment:
    """ExperimentConfig 의 지연 조립된 구성 요소"""

    def __init__(self, config: ExperimentConfig, seed: Optional[int] = None,
                 threads: Optional[int] = None, progress: Optional[bool] = None):
        self.config = config
        self.seed = getattr(settings, 'TAT_DEFAULT_SEED', 0) if seed is None else seed
        self.threads = threads
        self.progress = progress
        self.grid = config.build_grid()
        self.detector = config.detector_config()

    @cached_property
    def speed(self):
        return sample_speed(self.config.speed, self.grid)

    @cached_property
    def phantom(self) -> Phantom:
        return make_phantom(self.config.phantom, self.grid)

    @cached_property
    def pml(self):
        return pml_profile(self.grid, sigma_max=self.config.pml.sigma_max, m=self.config.pml.order,
                           detector_reach=self.detector.reach)

    @cached_property
    def dt(self) -> float:
        t = self.config.time
        dt = cfl_time_step(self.grid, self.speed, t.cfl_safety) if t.dt is None else t.dt
        check_cfl(dt, self.speed, self.pml)
        return dt

    def _seed(self, value: Optional[int]) -> int:
        return self.seed if value is None else value

    def simulate(self) -> Sinogram:
        sinogram = forward_operator(self.phantom, self.speed, self.detector, self.pml, dt=self.dt,
                                    progress=self.progress)
        return add_noise(sinogram, self.config.noise.level, self._seed(self.config.seeds.noise))

    def model(self, sinogram: Sinogram) -> ForwardModel:
        chi_start, chi_end = self.config.cutoff_times()
        cutoff = None
        if chi_start is not None:
            cutoff = time_cutoff_chi(chi_start, chi_end, sinogram.nt, sinogram.dt)
        return ForwardModel.for_sinogram(
            sinogram, self.speed, self.pml,
            cutoff=cutoff,
            taper_fraction=self.config.aperture.taper,
            support_margin=self.config.recon.support_margin,
            progress=self.progress,
        )

    def reconstruct(self, sinogram: Sinogram) -> ReconResult:
        recon = self.config.recon
        model = self.model(sinogram)
        kwargs = {'iters': recon.iters, 'tol': recon.tol, 'tikhonov': recon.tikhonov}
        if recon.method == 'landweber':
            seed = self._seed(self.config.seeds.power)
            kwargs['norm_estimate'] = operator_norm_estimate(model, iters=recon.power_iters, seed=seed)
            kwargs['step'] = recon.step
        return reconstruct(sinogram, model, method=recon.method, **kwargs)

    def wavefront(self):
        return phantom_edges(self.phantom, self.config.rays.edge_threshold)

    @cached_property
    def interpolant(self) -> SpeedInterpolant:
        return SpeedInterpolant(self.speed, order=self.config.rays.spline_order)

    def visibility(self, wf=None) -> VisibilityReport:
        wf = self.wavefront() if wf is None else wf
        if not wf:
            logger.warning("phantom has no edges above the threshold; empty visibility report")
            return VisibilityReport()
        rays = self.config.rays
        return visibility(
            wf, self.config.visibility_aperture(), self.detector, self.interpolant,
            position_tol=rays.position_tol or 2.0 * self.grid.h,
            direction_tol_deg=rays.direction_tol_deg,
            near_side=rays.near_side,
            h_ray=rays.h_ray,
            t_max=rays.t_max,
            n_jobs=self.threads,
        )

    def coverage_time(self) -> float:
        return coverage_time(self.grid, self.detector, self.speed)

    def sweep_radii(self) -> np.ndarray:
        sweep = self.config.sweep
        start = sweep.start
        if start is None:
            start = self.detector.R if self.detector.mode == SMALL else self.detector.r
        step = sweep.step or 8.0 * self.grid.h
        return start + step * np.arange(sweep.count)

    def sweep(self) -> RadiusFamily:
        radii = self.sweep_radii()
        runner = sweep_small_radius if self.detector.mode == SMALL else sweep_large_radius
        return runner(self.phantom, self.speed, self.pml, self.detector, radii,
                      record_stride=self.config.sweep.record_stride, dt=self.dt, progress=self.progress)

    def sinogram_sidecar(self, sinogram: Sinogram) -> ArraySidecar:
        return ArraySidecar(
            dims=list(sinogram.data.shape),
            kind='sinogram',
            dt=sinogram.dt,
            grid=self.grid_meta(),
            detector=DetectorMeta(**sinogram.config.describe()),
            seed=self._seed(self.config.seeds.noise) if self.config.noise.level > 0 else None,
        )

    def grid_meta(self) -> GridMeta:
        return GridMeta(L=self.grid.half_width, n=self.grid.n, pml_width=self.grid.pml_width)


def residual_report(family: RadiusFamily) -> Dict[str, float]:
    """반지름 스윕의 두 원통 PDE 잔차 RMS (자기 기하와 다른 기하)"""
    own, other = ((cylinder_residual_small, cylinder_residual_large) if family.mode == SMALL
                  else (cylinder_residual_large, cylinder_residual_small))
    return {
        'residual_rms': rms(own(family, even_extension=True)),
        'cross_residual_rms': rms(other(family, even_extension=True)),
        'data_rms': rms(family.data),
    }


def node_verdicts(report: VisibilityReport) -> Dict[tuple, str]:
    """
    노드별 판정: ±ξ 중 하나라도 visible 이면 visible, 그다음 masked
    """
    rank = {OUT_OF_APERTURE: 0, MASKED: 1, VISIBLE: 2}
    verdicts = {}
    for entry in report.entries:
        key = entry.covector.y
        if key not in verdicts or rank[entry.verdict] > rank[verdicts[key]]:
            verdicts[key] = entry.verdict
    return verdicts


def edge_recovery_by_verdict(estimate: Phantom, truth: Phantom, report: VisibilityReport,
                             radius: Optional[float] = None) -> Dict[str, float]:
    """판정별 평균 edge 회복 비율 (nan 은 제외)"""
    verdicts = node_verdicts(report)
    result = {}
    for verdict in (VISIBLE, MASKED, OUT_OF_APERTURE):
        points = np.array([y for y, v in verdicts.items() if v == verdict]).reshape(-1, 2)
        ratios = edge_recovery_ratio(estimate, truth, points, radius) if points.size else np.array([])
        ratios = ratios[np.isfinite(ratios)]
        result[verdict] = float(ratios.mean()) if ratios.size else float('nan')
    return result


def _output_dir(config: ExperimentConfig, out: Optional[Union[str, Path]]) -> Path:
    if out is not None:
        path = Path(out)
    elif config.output.directory:
        path = Path(config.output.directory)
    else:
        path = Path(settings.TAT_OUTPUT_DIR)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_csv(path: Path, rows: List[dict], fieldnames: List[str]) -> Path:
    with open(path, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.DictWriter(handle, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    logger.info(f"wrote {path} ({len(rows)} rows)")
    return path


def run_forward(config: ExperimentConfig, out=None, seed=None, threads=None) -> Dict[str, Path]:
    """
    forward 파이프라인: sinogram ArrayFile, sidecar, quicklook PGM
    """
    experiment = Experiment(config, seed=seed, threads=threads)
    sinogram = experiment.simulate()
    out_dir = _output_dir(config, out)
    prefix = config.output.prefix
    array_path = write_array(out_dir / f"{prefix}_sinogram.tat", sinogram.data, experiment.sinogram_sidecar(sinogram))
    pgm_path = write_pgm(out_dir / f"{prefix}_sinogram.pgm", sinogram.data, flip_rows=False)
    return {'sinogram': array_path, 'quicklook': pgm_path}


def load_sinogram(path: Union[str, Path], experiment: Experiment) -> Sinogram:
    """
    sinogram 파일을 읽고 설정의 검출기/격자와 대조

    Raises:
        GeometryMismatchError: sidecar geometry differs from the config,
            both descriptions are in the message
    """
    data, sidecar = read_array(path)
    if sidecar.kind != 'sinogram' or sidecar.detector is None or sidecar.dt is None:
        raise GeometryMismatchError(f"{path} is not a sinogram file (kind={sidecar.kind})")
    meta = sidecar.detector.model_dump()
    stored = DetectorConfig(**meta)
    if stored != experiment.detector:
        raise GeometryMismatchError(
            f"sinogram detector {stored.describe()} differs from config detector {experiment.detector.describe()}"
        )
    if sidecar.grid is not None and sidecar.grid != experiment.grid_meta():
        raise GeometryMismatchError(
            f"sinogram grid {sidecar.grid.model_dump()} differs from config grid {experiment.grid_meta().model_dump()}"
        )
    return Sinogram(data=data, dt=sidecar.dt, theta=theta_grid(stored), config=stored)


def run_reconstruct(config: ExperimentConfig, sinogram_path, out=None, seed=None, threads=None,
                    edge_report: bool = False) -> Dict[str, object]:
    """
    reconstruct 파이프라인: 추정값, 잔차 이력 CSV, 오차 보고, PGM
    """
    experiment = Experiment(config, seed=seed, threads=threads)
    sinogram = load_sinogram(sinogram_path, experiment)
    result = experiment.reconstruct(sinogram)
    out_dir = _output_dir(config, out)
    prefix = config.output.prefix
    estimate_path = write_array(out_dir / f"{prefix}_estimate.tat", result.estimate.f,
                                kind='estimate', grid=experiment.grid_meta())
    history_path = _write_csv(
        out_dir / f"{prefix}_residuals.csv",
        [{'iteration': k, 'misfit': value} for k, value in enumerate(result.residual_history)],
        ['iteration', 'misfit'],
    )
    pgm_path = write_pgm(out_dir / f"{prefix}_estimate.pgm", result.estimate.f)
    summary = {
        'estimate': estimate_path,
        'residuals': history_path,
        'image': pgm_path,
        'method': result.method,
        'iterations': result.iterations,
        'final_misfit': result.final_misfit,
    }
    if config.phantom.components:
        summary['relative_error'] = relative_error(result.estimate, experiment.phantom)
        if edge_report:
            recovery = edge_recovery_by_verdict(result.estimate, experiment.phantom, experiment.visibility())
            summary.update({f"edge_recovery_{k}": v for k, v in recovery.items()})
    rows = [{'key': k, 'value': v} for k, v in summary.items()]
    summary['report'] = _write_csv(out_dir / f"{prefix}_report.csv", rows, ['key', 'value'])
    return summary


def run_visibility(config: ExperimentConfig, out=None, seed=None, threads=None) -> Dict[str, object]:
    """visibility 파이프라인: 판정 CSV 와 phantom 위 overlay PGM"""
    experiment = Experiment(config, seed=seed, threads=threads)
    report = experiment.visibility()
    out_dir = _output_dir(config, out)
    prefix = config.output.prefix
    fields = ['y1', 'y2', 'xi1', 'xi2', 'verdict', 't', 'theta', 'sigma', 'branch', 'partner']
    csv_path = _write_csv(out_dir / f"{prefix}_visibility.csv", report.to_rows(), fields)

    grid = experiment.grid
    marks = {}
    for y, verdict in node_verdicts(report).items():
        ix = int(round((y[0] + grid.half_width) / grid.h))
        iy = int(round((y[1] + grid.half_width) / grid.h))
        marks.setdefault(VERDICT_LEVELS[verdict], np.zeros(grid.shape, dtype=bool))[iy, ix] = True
    image = overlay(experiment.phantom.f, dict(sorted(marks.items())))
    pgm_path = write_pgm(out_dir / f"{prefix}_visibility.pgm", image)
    return {'report': csv_path, 'overlay': pgm_path, 'counts': report.counts(),
            'coverage_time': experiment.coverage_time()}


def run_sweep(config: ExperimentConfig, out=None, seed=None, threads=None) -> Dict[str, object]:
    """sweep 파이프라인: P(t, θ, ρ) ArrayFile 과 원통 PDE 잔차"""
    experiment = Experiment(config, seed=seed, threads=threads)
    family = experiment.sweep()
    out_dir = _output_dir(config, out)
    prefix = config.output.prefix
    family_path = write_array(
        out_dir / f"{prefix}_sweep.tat", family.data,
        kind='radius_family', dt=family.dt, grid=experiment.grid_meta(),
        detector=DetectorMeta(**family.config.describe()), radii=[float(r) for r in family.radii],
    )
    report = residual_report(family)
    rows = [{'key': k, 'value': v} for k, v in report.items()]
    report_path = _write_csv(out_dir / f"{prefix}_sweep_residual.csv", rows, ['key', 'value'])
    return {'family': family_path, 'report': report_path, **report}