from modalrec.management.base import ModalRecCommand


class Command(ModalRecCommand):
    help = 'Export per-event input representations and per-user outputs of a trained model.'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('model', help='Model kind, e.g. latent_feature.')
        parser.add_argument('--seed', type=int)

    def handle(self, *args, **options):
        experiment = self.experiment(options)
        for path in experiment.export_latents(options['model'], options['seed']):
            self.stdout.write(path)
        experiment.finalize()
