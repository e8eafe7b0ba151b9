from tat_experiments.management.base import ExperimentCommand
from tat_experiments.services import run_reconstruct


class Command(ExperimentCommand):
    help = 'Reconstruct an image from a sinogram file written by the forward command.'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--sinogram', required=True, help='sinogram array file (its .json sidecar must sit next to it)')
        parser.add_argument('--edge-report', action='store_true',
                            help='add edge recovery per visibility verdict to the report')

    def run(self, config, **options):
        return run_reconstruct(config, options['sinogram'], out=options['out'], seed=options['seed'],
                               threads=options['threads'], edge_report=options['edge_report'])
