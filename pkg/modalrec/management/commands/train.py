from modalrec.management.base import ModalRecCommand


class Command(ModalRecCommand):
    help = 'Train every configured model kind for every seed and save the bundles.'

    def handle(self, *args, **options):
        experiment = self.experiment(options)
        results = experiment.train()
        count = sum(len(paths) for _, paths, _ in results)
        self.stdout.write('Saved {} bundle(s) to {}.'.format(count, experiment.bundle_dir))
        experiment.finalize()
