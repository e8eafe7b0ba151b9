import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
import yaml
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, override_settings, tag

from config.exceptions import ArrayFormatError, ConfigError
from tat_experiments.checks import (
    check_adjoint,
    check_energy_drift,
    check_finite_speed,
    check_residual_convergence,
    check_ray_invariants,
    run_checks,
)
from tat_experiments.serializers.array_serializers import ArraySidecar
from tat_experiments.services import Experiment, edge_recovery_by_verdict
from tat_experiments.utils.array_io import decode_array, encode_array, read_array, sidecar_path, write_array
from tat_experiments.utils.config_loader import ConfigLoader, available_configs, load_experiment_config
from tat_experiments.utils.pgm import read_pgm, write_pgm
from tat_rays.domain import MASKED, OUT_OF_APERTURE, VISIBLE


class TempDirMixin:
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()


class ArrayFileTests(TempDirMixin, SimpleTestCase):
    def test_round_trip_is_bit_exact(self):
        array = np.random.default_rng(3).standard_normal((3, 4, 5))
        path = write_array(self.tmp / 'a.tat', array, kind='array')
        restored, sidecar = read_array(path)
        self.assertEqual(restored.tobytes(), array.tobytes())
        self.assertEqual(sidecar.dims, [3, 4, 5])

    def test_header_layout(self):
        blob = encode_array(np.zeros((2, 3)))
        self.assertEqual(blob[:7], b'TATARR1')
        self.assertEqual(list(blob[7:10]), [1, 1, 2])
        self.assertEqual(len(blob), 10 + 2 * 8 + 6 * 8)

    def test_truncated_payload_names_lengths(self):
        blob = encode_array(np.ones((2, 3)))[:-8]
        with self.assertRaisesMessage(ArrayFormatError, 'payload length 40 bytes, expected 48'):
            decode_array(blob)

    def test_bad_magic(self):
        blob = b'XXXXXXX' + encode_array(np.ones(2))[7:]
        with self.assertRaisesMessage(ArrayFormatError, 'bad magic'):
            decode_array(blob)

    def test_unknown_version(self):
        blob = bytearray(encode_array(np.ones(2)))
        blob[7] = 2
        with self.assertRaisesMessage(ArrayFormatError, 'unsupported version'):
            decode_array(bytes(blob))

    def test_sidecar_dims_mismatch(self):
        path = write_array(self.tmp / 'b.tat', np.zeros((2, 2)))
        sidecar_path(path).write_text(ArraySidecar(dims=[4]).model_dump_json(), encoding='utf-8')
        with self.assertRaises(ArrayFormatError):
            read_array(path)

    def test_write_rejects_inconsistent_sidecar(self):
        with self.assertRaises(ArrayFormatError):
            write_array(self.tmp / 'c.tat', np.zeros((2, 2)), ArraySidecar(dims=[2, 3]))

    def test_missing_sidecar(self):
        path = self.tmp / 'd.tat'
        path.write_bytes(encode_array(np.zeros(3)))
        with self.assertRaisesMessage(ArrayFormatError, 'sidecar not found'):
            read_array(path)


class PgmTests(TempDirMixin, SimpleTestCase):
    def test_round_trip_within_quantization(self):
        values = np.linspace(-2.0, 3.0, 12 * 7).reshape(12, 7)
        path = write_pgm(self.tmp / 'v.pgm', values)
        restored = read_pgm(path)
        self.assertEqual(restored.shape, values.shape)
        self.assertLessEqual(np.abs(restored - values).max(), 5.0 / 65535)

    def test_constant_image(self):
        path = write_pgm(self.tmp / 'z.pgm', np.zeros((4, 4)))
        np.testing.assert_array_equal(read_pgm(path), 0.0)

    def test_rejects_vectors(self):
        with self.assertRaises(ValueError):
            write_pgm(self.tmp / 'w.pgm', np.zeros(5))


class ConfigLoaderTests(TempDirMixin, SimpleTestCase):
    def write_config(self, data, name='exp.yaml'):
        path = self.tmp / name
        path.write_text(yaml.safe_dump(data), encoding='utf-8')
        return path

    def test_bundled_configs_load(self):
        names = available_configs()
        for name in ('paper_full_data', 'paper_partial_data', 'zero_phantom', 'sweep_small', 'sweep_large'):
            self.assertIn(name, names)
            load_experiment_config(name)

    def test_missing_config(self):
        with self.assertRaisesMessage(ConfigError, 'config not found'):
            load_experiment_config('no_such_experiment')

    def test_unknown_key_rejected(self):
        path = self.write_config({'grid': {'L': 4.0, 'n': 65, 'spacing': 0.1}})
        with self.assertRaisesMessage(ConfigError, 'grid.spacing'):
            ConfigLoader(self.tmp).load(path)

    def test_detector_invariant_rejected(self):
        path = self.write_config({'detector': {'mode': 'small', 'R': 1.5, 'r': 0.8}})
        with self.assertRaisesMessage(ConfigError, 'R - r >= 1'):
            ConfigLoader(self.tmp).load(path)

    def test_detector_outside_grid_rejected(self):
        path = self.write_config({'grid': {'L': 3.0, 'n': 65}, 'detector': {'mode': 'large', 'r': 2.0}})
        with self.assertRaisesMessage(ConfigError, 'grid interior'):
            ConfigLoader(self.tmp).load(path)

    def test_half_open_arc_rejected(self):
        path = self.write_config({'detector': {'mode': 'large', 'r': 2.0}, 'aperture': {'arc_start': 0.0}})
        with self.assertRaises(ConfigError):
            ConfigLoader(self.tmp).load(path)

    def test_yaml_syntax_error(self):
        path = self.tmp / 'broken.yaml'
        path.write_text('grid: [1, 2\n', encoding='utf-8')
        with self.assertRaisesMessage(ConfigError, 'YAML syntax error'):
            ConfigLoader(self.tmp).load(path)

    def test_lookup_by_name_in_directory(self):
        self.write_config({'detector': {'mode': 'large', 'r': 2.0}}, name='mine.yaml')
        loader = ConfigLoader(self.tmp)
        self.assertEqual(loader.available(), ['mine'])
        self.assertEqual(loader.load('mine').detector.r, 2.0)

    def test_pml_width_defaults_to_setting(self):
        path = self.write_config({})
        with override_settings(TAT_PML_WIDTH=0.7):
            config = ConfigLoader(self.tmp).load(path)
        self.assertEqual(config.grid.pml_width, 0.7)
        self.assertEqual(config.build_grid().pml_width, 0.7)
        explicit = ConfigLoader(self.tmp).load(self.write_config({'grid': {'pml_width': 0.4}}, name='own.yaml'))
        self.assertEqual(explicit.grid.pml_width, 0.4)

    def test_defaults_are_consistent(self):
        config = load_experiment_config(self.write_config({}))
        self.assertEqual(config.detector_config().mode, 'large')
        self.assertEqual(config.visibility_aperture().window, (0.0, config.time.T))


class CommandTests(TempDirMixin, SimpleTestCase):
    def call(self, *args, **kwargs):
        out = StringIO()
        call_command(*args, stdout=out, **kwargs)
        return out.getvalue()

    def test_zero_phantom_pipeline(self):
        output = self.call('forward', config='zero_phantom', out=str(self.tmp))
        self.assertIn('sinogram:', output)
        data, sidecar = read_array(self.tmp / 'zero_sinogram.tat')
        self.assertFalse(data.any())
        self.assertEqual(sidecar.kind, 'sinogram')
        self.assertEqual(data.shape[1], 16)

        self.call('reconstruct', config='zero_phantom', sinogram=str(self.tmp / 'zero_sinogram.tat'),
                  out=str(self.tmp))
        estimate, _ = read_array(self.tmp / 'zero_estimate.tat')
        self.assertFalse(estimate.any())
        self.assertTrue((self.tmp / 'zero_residuals.csv').exists())
        self.assertTrue((self.tmp / 'zero_estimate.pgm').exists())

    def test_zero_phantom_visibility_is_empty(self):
        output = self.call('visibility', config='zero_phantom', out=str(self.tmp))
        self.assertIn('coverage_time:', output)
        rows = (self.tmp / 'zero_visibility.csv').read_text(encoding='utf-8').splitlines()
        self.assertEqual(len(rows), 1)

    def test_missing_config_exits_with_usage_code(self):
        with self.assertRaises(CommandError) as ctx:
            self.call('forward', config='no_such_experiment', out=str(self.tmp))
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn('config not found', str(ctx.exception))

    def test_mismatched_detector_is_rejected(self):
        self.call('forward', config='zero_phantom', out=str(self.tmp))
        other = yaml.safe_load(Path(ConfigLoader().resolve('zero_phantom')).read_text(encoding='utf-8'))
        other['detector']['r'] = 0.7
        path = self.tmp / 'other.yaml'
        path.write_text(yaml.safe_dump(other), encoding='utf-8')
        with self.assertRaises(CommandError) as ctx:
            self.call('reconstruct', config=str(path), sinogram=str(self.tmp / 'zero_sinogram.tat'),
                      out=str(self.tmp))
        self.assertNotEqual(ctx.exception.returncode, 0)
        self.assertIn("'r': 0.8", str(ctx.exception))
        self.assertIn("'r': 0.7", str(ctx.exception))

    def test_truncated_sinogram_is_rejected(self):
        self.call('forward', config='zero_phantom', out=str(self.tmp))
        path = self.tmp / 'zero_sinogram.tat'
        path.write_bytes(path.read_bytes()[:-8])
        with self.assertRaises(CommandError) as ctx:
            self.call('reconstruct', config='zero_phantom', sinogram=str(path), out=str(self.tmp))
        self.assertEqual(ctx.exception.returncode, 2)

    def test_broken_adjoint_fails_selftest(self):
        out = StringIO()
        with self.assertRaises(CommandError) as ctx:
            call_command('selftest', checks=['adjoint'], break_adjoint=True, stdout=out)
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertIn('CHECK adjoint_identity FAIL', out.getvalue())

    def test_selftest_prints_check_lines(self):
        output = self.call('selftest', checks=['energy', 'finite_speed'])
        self.assertIn('CHECK energy_drift PASS', output)
        self.assertIn('CHECK finite_speed PASS', output)
        self.assertIn('2/2 checks passed', output)

    def test_forward_is_deterministic(self):
        first, second = self.tmp / 'one', self.tmp / 'two'
        self.call('forward', config='zero_phantom', out=str(first), seed=5)
        self.call('forward', config='zero_phantom', out=str(second), seed=5)
        self.assertEqual((first / 'zero_sinogram.tat').read_bytes(), (second / 'zero_sinogram.tat').read_bytes())


class CheckTests(SimpleTestCase):
    def test_adjoint_identity(self):
        result = check_adjoint()
        self.assertTrue(result.passed, result.line())

    def test_broken_adjoint_is_detected(self):
        self.assertFalse(check_adjoint(break_adjoint=True).passed)

    def test_ray_invariants(self):
        for result in check_ray_invariants():
            self.assertTrue(result.passed, result.line())

    def test_energy_and_finite_speed(self):
        for result in (check_energy_drift(), check_finite_speed()):
            self.assertTrue(result.passed, result.line())

    def test_unknown_check_rejected(self):
        with self.assertRaises(ValueError):
            run_checks(only=['warp_drive'])

    def test_unknown_level_rejected(self):
        with self.assertRaises(ValueError):
            check_energy_drift('medium')


@tag('slow')
class ResidualConvergenceTests(SimpleTestCase):
    def test_second_order_decay_and_geometry_discrimination(self):
        for result in check_residual_convergence():
            self.assertTrue(result.passed, result.line())


@tag('slow')
class PartialDataTests(SimpleTestCase):
    def test_visible_edges_are_recovered_better(self):
        experiment = Experiment(load_experiment_config('paper_partial_data'))
        estimate = experiment.reconstruct(experiment.simulate()).estimate
        report = experiment.visibility()
        self.assertIn(VISIBLE, report.counts())
        recovery = edge_recovery_by_verdict(estimate, experiment.phantom, report)
        invisible = [recovery[v] for v in (MASKED, OUT_OF_APERTURE) if np.isfinite(recovery[v])]
        self.assertTrue(invisible)
        self.assertGreaterEqual(recovery[VISIBLE], 2.0 * max(invisible))
