import os
import time
from dataclasses import asdict, replace

from modalrec.data import dataset_statistics, dump_dataset
from modalrec.experiment import RunManifest
from modalrec.management.base import ModalRecCommand
from modalrec.synthetic import GeneratorConfig, generate_synthetic, synthetic_tag_map


class Command(ModalRecCommand):
    help = 'Generate a synthetic dataset and its tag map.'
    experiment_flags = False

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('output', help='Dataset file to write.')
        parser.add_argument('--config', help='INI file with a [generator] section.')
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--users', type=int, help='Override the number of users.')

    def handle(self, *args, **options):
        if options['config']:
            config = GeneratorConfig.from_file(options['config'])
        else:
            config = GeneratorConfig()
        if options['users']:
            config = replace(config, n_users=options['users'])
        started = time.perf_counter()
        dataset = generate_synthetic(config, options['seed'])
        manifest = RunManifest.for_stage(os.path.dirname(os.path.abspath(options['output'])), 'generate',
                                         {'generator': asdict(config), 'seed': options['seed']},
                                         dataset.fingerprint())
        dump_dataset(dataset, options['output'])
        manifest.add_artifact('dataset', options['output'])
        tag_map_path = os.path.splitext(options['output'])[0] + '.tagmap'
        synthetic_tag_map(config).dump(tag_map_path)
        manifest.add_artifact('tag_map', tag_map_path)
        manifest.add_timing('generate', time.perf_counter() - started)
        manifest.finalize()
        stats = dataset_statistics(dataset)
        self.stdout.write('Wrote {} users ({} conversations, {} web sessions) to {}.'.format(
            stats['users'], stats['conversations'], stats['web_sessions'], options['output']))
        self.stdout.write('Dataset fingerprint {}.'.format(dataset.fingerprint()))
