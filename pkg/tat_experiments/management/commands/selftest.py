import logging

from django.core.management.base import BaseCommand, CommandError

from config.exceptions import InvariantError
from tat_experiments.checks import CHECKS, LEVELS, QUICK, run_checks
from tat_experiments.management.base import EXIT_CHECK_FAILED, EXIT_USAGE

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Run the numerical self-checks and print one CHECK line per result.'
    requires_system_checks = []

    def add_arguments(self, parser):
        parser.add_argument('--level', choices=LEVELS, default=QUICK)
        parser.add_argument('--checks', nargs='+', choices=sorted(CHECKS), default=None,
                            help='run only these checks')
        parser.add_argument('--break-adjoint', action='store_true',
                            help='feed the adjoint a time-reversed record; the adjoint check must fail')
        parser.add_argument('--seed', type=int, default=0)

    def handle(self, *args, **options):
        try:
            results = run_checks(
                level=options['level'],
                only=options['checks'],
                break_adjoint=options['break_adjoint'],
                seed=options['seed'],
                report=lambda result: self.stdout.write(result.line()),
            )
        except InvariantError as e:
            raise CommandError(str(e), returncode=EXIT_USAGE) from e
        failed = [r.name for r in results if not r.passed]
        self.stdout.write(f"{len(results) - len(failed)}/{len(results)} checks passed")
        if failed:
            logger.error(f"selftest failed: {', '.join(failed)}")
            raise CommandError(f"failed checks: {', '.join(failed)}", returncode=EXIT_CHECK_FAILED)
