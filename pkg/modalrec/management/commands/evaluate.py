from modalrec.evaluation import MAP
from modalrec.management.base import ModalRecCommand


class Command(ModalRecCommand):
    help = 'Evaluate the trained bundles on the test split and write the reports.'

    def handle(self, *args, **options):
        experiment = self.experiment(options)
        reports = experiment.evaluate()
        for report in reports:
            k = report.k_list[-1]
            cell = report.cell(MAP, k)
            text = 'n/a' if cell is None else '{:.4f}'.format(cell.mean)
            self.stdout.write('{}: MAP@{} {}'.format(report.kind, k, text))
        experiment.finalize()
