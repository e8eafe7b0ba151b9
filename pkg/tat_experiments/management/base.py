import logging

from django.core.management.base import BaseCommand, CommandError

from config.exceptions import ArrayFormatError, ConfigError, InvariantError, SolverDivergenceError, TatError
from tat_experiments.utils.config_loader import load_experiment_config

logger = logging.getLogger(__name__)

EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2


class ExperimentCommand(BaseCommand):
    """
    설정 파일 하나를 받아 파이프라인을 실행하는 명령의 공통 부분

    Subclasses implement ``run(config, **options)`` and return a dict that is
    printed as ``key: value`` lines. Library errors become CommandError with
    exit code 2 (bad input) or 1 (numerical failure).
    """
    requires_system_checks = []

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True, help='config name under tat_experiments/configs or a path')
        parser.add_argument('--out', default=None, help='output directory (default: config output.directory, then TAT_OUTPUT_DIR)')
        parser.add_argument('--seed', type=int, default=None, help='seed for noise and power iteration')
        parser.add_argument('--threads', type=int, default=None, help='ray tracing workers (default: TAT_THREADS)')

    def run(self, config, **options) -> dict:
        raise NotImplementedError

    def handle(self, *args, **options):
        try:
            config = load_experiment_config(options['config'])
            options.pop('config')
            summary = self.run(config, **options)
        except (ConfigError, InvariantError, ArrayFormatError) as e:
            logger.error(f"{self.__module__.rsplit('.', 1)[-1]} failed: {e}")
            raise CommandError(str(e), returncode=EXIT_USAGE) from e
        except SolverDivergenceError as e:
            raise CommandError(f"solver diverged: {e}", returncode=EXIT_CHECK_FAILED) from e
        except TatError as e:
            raise CommandError(str(e), returncode=EXIT_CHECK_FAILED) from e
        self.report(summary)

    def report(self, summary: dict):
        for key, value in summary.items():
            if isinstance(value, dict):
                value = ', '.join(f"{k}={v}" for k, v in value.items())
            elif isinstance(value, float):
                value = f"{value:.6g}"
            self.stdout.write(f"{key}: {value}")
