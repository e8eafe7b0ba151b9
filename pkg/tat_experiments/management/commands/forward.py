from tat_experiments.management.base import ExperimentCommand
from tat_experiments.services import run_forward


class Command(ExperimentCommand):
    help = 'Simulate the sinogram of the configured phantom and write it as an array file.'

    def run(self, config, **options):
        return run_forward(config, out=options['out'], seed=options['seed'], threads=options['threads'])
