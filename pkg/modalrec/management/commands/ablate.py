from modalrec.management.base import ModalRecCommand


class Command(ModalRecCommand):
    help = 'Run the event-count and event-order ablations.'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--skip-count', action='store_true', help='Skip the event-count ablation.')
        parser.add_argument('--skip-order', action='store_true', help='Skip the event-order ablation.')
        parser.add_argument('--retrain', action='store_true',
                            help='Retrain per event count (reserved, rejected).')

    def handle(self, *args, **options):
        experiment = self.experiment(options)
        experiment.ablate(count=not options['skip_count'], order=not options['skip_order'],
                          retrain=options['retrain'])
        self.stdout.write('Ablation reports written to {}.'.format(experiment.output_dir))
        experiment.finalize()
