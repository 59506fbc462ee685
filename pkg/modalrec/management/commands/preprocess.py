import os
import time
from dataclasses import asdict

from modalrec.data import Thresholds, dump_dataset, load_dataset, preprocess
from modalrec.experiment import RunManifest
from modalrec.management.base import ModalRecCommand


class Command(ModalRecCommand):
    help = 'Apply the filtering pipeline to a dataset file.'
    experiment_flags = False

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('input')
        parser.add_argument('output')

    def handle(self, *args, **options):
        started = time.perf_counter()
        source = load_dataset(options['input'])
        thresholds = Thresholds.from_settings()
        dataset, report = preprocess(source, thresholds)
        config = {
            'input': os.path.abspath(options['input']),
            'input_fingerprint': source.fingerprint(),
            'thresholds': asdict(thresholds),
        }
        manifest = RunManifest.for_stage(os.path.dirname(os.path.abspath(options['output'])), 'preprocess',
                                         config, dataset.fingerprint())
        dump_dataset(dataset, options['output'])
        manifest.add_artifact('dataset', options['output'])
        manifest.add_timing('preprocess', time.perf_counter() - started)
        manifest.finalize()
        self.stdout.write('Kept {} users after {} pass(es); dropped {}, pruned {} item(s).'.format(
            len(dataset), report.passes, report.dropped_users, len(set(report.pruned_items))))
