from modalrec.management.base import ModalRecCommand


class Command(ModalRecCommand):
    help = 'Grid-search batch size, units and dropout per model on the validation split.'

    def handle(self, *args, **options):
        experiment = self.experiment(options)
        best, _ = experiment.gridsearch()
        for kind, hyper in best.items():
            self.stdout.write('{}: batch_size={} units={} dropout={}'.format(
                kind, hyper.batch_size, hyper.units, hyper.dropout))
        experiment.finalize()
