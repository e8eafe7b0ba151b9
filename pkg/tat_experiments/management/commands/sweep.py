from tat_experiments.management.base import ExperimentCommand
from tat_experiments.services import run_sweep


class Command(ExperimentCommand):
    help = 'Record ring averages over a family of detector radii and report the cylinder PDE residual.'

    def run(self, config, **options):
        return run_sweep(config, out=options['out'], seed=options['seed'], threads=options['threads'])
