import os

from modalrec import conf
from modalrec.data import chronological_split, dump_dataset, load_dataset
from modalrec.experiment import RunManifest
from modalrec.management.base import ModalRecCommand


class Command(ModalRecCommand):
    help = 'Split a dataset chronologically into train, validation and test files.'
    experiment_flags = False

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('input')
        parser.add_argument('--output-dir', default='.')

    def handle(self, *args, **options):
        dataset = load_dataset(options['input'])
        config = {
            'input': os.path.abspath(options['input']),
            'test_fraction': conf.get('TEST_FRACTION'),
            'valid_fraction': conf.get('VALID_FRACTION'),
        }
        parts = chronological_split(dataset.records, config['test_fraction'], config['valid_fraction'])
        manifest = RunManifest.for_stage(options['output_dir'], 'split', config, dataset.fingerprint())
        stem = os.path.splitext(os.path.basename(options['input']))[0]
        for name, records in zip(('train', 'valid', 'test'), parts):
            path = os.path.join(options['output_dir'], '{}.{}.jsonl'.format(stem, name))
            dump_dataset(dataset.replace_records(records), path)
            manifest.add_artifact(name, path)
            self.stdout.write('{}: {} users -> {}'.format(name, len(records), path))
        manifest.finalize()
