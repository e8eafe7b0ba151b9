from tat_experiments.management.base import ExperimentCommand
from tat_experiments.services import run_visibility


class Command(ExperimentCommand):
    help = 'Classify the phantom edge covectors as visible, masked or out of aperture.'

    def run(self, config, **options):
        return run_visibility(config, out=options['out'], seed=options['seed'], threads=options['threads'])
