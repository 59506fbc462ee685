import json
import os
import tempfile
from io import StringIO
from unittest import mock

import pandas as pd
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, override_settings

from modalrec.data import load_dataset
from modalrec.exceptions import (ArtifactIOError, ConfigurationError,
                                 DatasetParseError, MissingBundleError,
                                 NumericError, UsageError)
from modalrec.evaluation import evaluate
from modalrec.experiment import (Experiment, ExperimentConfig, RunManifest,
                                 fit_model, with_overrides)
from modalrec.management.base import EXIT_CONFIG, EXIT_DATA, EXIT_IO, EXIT_TRAINING, return_code
from modalrec.recommenders import Hyperparameters

SMALL = (16, 8, 0.2)

FAST_SETTINGS = {
    'MAX_EPOCHS': 2,
    'PATIENCE': 1,
    'ANCHOR_COUNT': 6,
    'ANCHOR_UNITS': 4,
    'SEEDS': (0,),
    'HYPERPARAMETERS': {kind: SMALL for kind in (
        'conversation', 'web_session', 'knowledge_distillation', 'generative_imputation',
        'neutral_imputation', 'keyword', 'latent_feature', 'relative_representation')},
}

INI = """\
[dataset]
seed = 3

[generator]
n_users = 250
n_base_products = 3
coverages_per_base = 1
embedding_width = 6

[experiment]
models = popular, conversation, keyword
seeds = 0
k = 1, 3
output_dir = {output_dir}
shuffles = 1
"""


def write(path, text):
    with open(path, 'w', encoding='utf-8') as fh:
        fh.write(text)
    return path


class TestExperimentConfig(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def ini(self, text):
        return write(os.path.join(self.tmp.name, 'experiment.ini'), text)

    def test_defaults_come_from_settings(self):
        config = ExperimentConfig()
        self.assertEqual(config.seeds, (0, 1))
        self.assertEqual(config.k_list, (1, 2, 3, 4, 5))
        self.assertEqual(len(config.models), 10)
        self.assertEqual(config.grid['batch_size'], (64, 128, 256, 512))
        self.assertIsNone(config.dataset_path)

    def test_from_file(self):
        path = self.ini(
            '[dataset]\npath = users.jsonl   ; real data\ntag_map = users.tagmap\npreprocess = no\n\n'
            '[experiment]\nmodels = popular, latent_feature\nseeds = 3, 4\nk = 1, 3\nshuffles = 2\n\n'
            '[grid]\nunits = 8, 16\n\n'
            '[hyperparameters:latent_feature]\nunits = 64\n')
        config = ExperimentConfig.from_file(path)
        self.assertEqual(config.dataset_path, 'users.jsonl')
        self.assertEqual(config.tag_map_path, 'users.tagmap')
        self.assertFalse(config.preprocess)
        self.assertEqual(config.models, ('popular', 'latent_feature'))
        self.assertEqual((config.seeds, config.k_list, config.shuffles), ((3, 4), (1, 3), 2))
        self.assertEqual(config.grid['units'], (8, 16))
        self.assertEqual(config.grid['dropout'], (0.2, 0.3, 0.4))
        self.assertEqual(config.hyper('latent_feature'), Hyperparameters(32, 64, 0.2))
        self.assertEqual(config.hyper('keyword'), Hyperparameters(32, 16, 0.2))

    def test_generator_section(self):
        config = ExperimentConfig.from_file(self.ini('[generator]\nn_users = 42\n'))
        self.assertEqual(config.generator.n_users, 42)

    def test_overrides(self):
        path = self.ini('[experiment]\nseeds = 3, 4\n')
        config = ExperimentConfig.from_file(path, seeds=(7,), k_list=None)
        self.assertEqual(config.seeds, (7,))
        self.assertEqual(with_overrides(config, models=('popular',), seeds=None).seeds, (7,))

    def test_invalid(self):
        cases = [
            '[experiment]\nmodels = popular, transformer\n',
            '[experiment]\nseeds = 1, 1\n',
            '[experiment]\nseeds = one\n',
            '[experiment]\nk = 0\n',
            '[grid]\nlayers = 2\n',
            '[dataset]\npreprocess = maybe\n',
            '[generator]\nshare_both = 0.9\n',
        ]
        for text in cases:
            with self.assertRaises(ConfigurationError, msg=text):
                ExperimentConfig.from_file(self.ini(text))

    def test_missing_file(self):
        with self.assertRaises(ArtifactIOError):
            ExperimentConfig.from_file(os.path.join(self.tmp.name, 'nope.ini'))

    def test_resolved_lists_effective_hyperparameters(self):
        config = ExperimentConfig(models=('popular', 'conversation'))
        resolved = config.resolved()
        self.assertEqual(resolved['hyperparameters'], {'conversation': {'batch_size': 32, 'units': 16, 'dropout': 0.2}})
        json.dumps(resolved, default=str)


class TestRunManifest(SimpleTestCase):
    def test_finalize(self):
        with tempfile.TemporaryDirectory() as tmp:
            manifest = RunManifest(os.path.join(tmp, 'manifest.json'), ExperimentConfig(), 'abc')
            manifest.add_artifact('results', os.path.join(tmp, 'results.csv'))
            manifest.add_timing('train', 1.23456)
            manifest.finalize()
            with open(manifest.path) as fh:
                data = json.load(fh)
            self.assertEqual(data['status'], 'final')
            self.assertEqual(data['artifacts'], {'results': 'results.csv'})
            self.assertEqual(data['timings'], {'train': 1.235})
            self.assertEqual(data['dataset_fingerprint'], 'abc')
            with self.assertRaises(UsageError):
                manifest.add_artifact('late', os.path.join(tmp, 'late.csv'))


class TestReturnCodes(SimpleTestCase):
    def test_mapping(self):
        self.assertEqual(return_code(ConfigurationError('x')), EXIT_CONFIG)
        self.assertEqual(return_code(UsageError('x')), EXIT_CONFIG)
        self.assertEqual(return_code(DatasetParseError('x', 3)), EXIT_DATA)
        self.assertEqual(return_code(NumericError('x')), EXIT_TRAINING)
        self.assertEqual(return_code(MissingBundleError('popular', 0)), EXIT_IO)
        self.assertEqual(return_code(ArtifactIOError('x')), EXIT_IO)
        self.assertEqual(return_code(ValueError('x')), 1)

    def test_command_error_carries_the_code(self):
        self.assertEqual(CommandError('x', returncode=EXIT_DATA).returncode, EXIT_DATA)


class TestDataCommands(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, 'users.jsonl')

    def tearDown(self):
        self.tmp.cleanup()

    def run_command(self, *args, **options):
        out = StringIO()
        call_command(*args, stdout=out, **options)
        return out.getvalue()

    def test_generate_preprocess_split(self):
        output = self.run_command('generate', self.path, users=120, seed=2)
        self.assertIn('Wrote 120 users', output)
        self.assertTrue(os.path.exists(os.path.join(self.tmp.name, 'users.tagmap')))
        clean = os.path.join(self.tmp.name, 'clean.jsonl')
        self.run_command('preprocess', self.path, clean)
        kept = len(load_dataset(clean))
        self.assertLessEqual(kept, 120)
        parts = os.path.join(self.tmp.name, 'parts')
        self.run_command('split', clean, output_dir=parts)
        sizes = [len(load_dataset(os.path.join(parts, 'clean.{}.jsonl'.format(name))))
                 for name in ('train', 'valid', 'test')]
        self.assertEqual(sum(sizes), kept)
        self.assertEqual(sizes[2], round(kept * 0.1))

    def manifest(self, directory, stage):
        with open(os.path.join(directory, 'manifest.{}.json'.format(stage))) as fh:
            return json.load(fh)

    def test_data_commands_write_manifests(self):
        self.run_command('generate', self.path, users=120, seed=2)
        generated = self.manifest(self.tmp.name, 'generate')
        self.assertEqual((generated['stage'], generated['status']), ('generate', 'final'))
        self.assertEqual(generated['artifacts'], {'dataset': 'users.jsonl', 'tag_map': 'users.tagmap'})
        self.assertEqual(generated['config']['seed'], 2)
        self.assertEqual(generated['config']['generator']['n_users'], 120)
        self.assertEqual(generated['dataset_fingerprint'], load_dataset(self.path).fingerprint())

        clean = os.path.join(self.tmp.name, 'clean.jsonl')
        self.run_command('preprocess', self.path, clean)
        preprocessed = self.manifest(self.tmp.name, 'preprocess')
        self.assertEqual(preprocessed['status'], 'final')
        self.assertEqual(preprocessed['artifacts'], {'dataset': 'clean.jsonl'})
        self.assertEqual(preprocessed['config']['input_fingerprint'], generated['dataset_fingerprint'])
        self.assertEqual(preprocessed['config']['thresholds']['max_events'], 10)
        self.assertEqual(preprocessed['dataset_fingerprint'], load_dataset(clean).fingerprint())

        parts = os.path.join(self.tmp.name, 'parts')
        self.run_command('split', clean, output_dir=parts)
        split = self.manifest(parts, 'split')
        self.assertEqual(split['status'], 'final')
        self.assertEqual(split['artifacts'], {'train': 'clean.train.jsonl', 'valid': 'clean.valid.jsonl',
                                              'test': 'clean.test.jsonl'})
        self.assertEqual(split['dataset_fingerprint'], preprocessed['dataset_fingerprint'])

    def test_generate_is_reproducible(self):
        self.run_command('generate', self.path, users=30, seed=5)
        first = load_dataset(self.path).fingerprint()
        self.run_command('generate', self.path, users=30, seed=5)
        self.assertEqual(load_dataset(self.path).fingerprint(), first)

    def test_missing_input(self):
        with self.assertRaises(CommandError) as cm:
            self.run_command('preprocess', os.path.join(self.tmp.name, 'nope.jsonl'), self.path)
        self.assertEqual(cm.exception.returncode, EXIT_IO)

    def test_malformed_input(self):
        write(self.path, '{"format": "something else"}\n')
        with self.assertRaises(CommandError) as cm:
            self.run_command('preprocess', self.path, os.path.join(self.tmp.name, 'out.jsonl'))
        self.assertEqual(cm.exception.returncode, EXIT_DATA)

    def test_split_too_small(self):
        self.run_command('generate', self.path, users=3)
        with self.assertRaises(CommandError) as cm:
            self.run_command('split', self.path, output_dir=self.tmp.name)
        self.assertEqual(cm.exception.returncode, EXIT_CONFIG)


@override_settings(MODALREC=FAST_SETTINGS)
class TestExperimentCommands(SimpleTestCase):
    """Train once, then evaluate, ablate and export from the saved bundles."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        cls.output_dir = os.path.join(cls.tmp.name, 'run')
        cls.ini = write(os.path.join(cls.tmp.name, 'experiment.ini'), INI.format(output_dir=cls.output_dir))
        call_command('train', config=cls.ini, stdout=StringIO())

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def output(self, name):
        return os.path.join(self.output_dir, name)

    def manifest(self, stage):
        with open(self.output('manifest.{}.json'.format(stage))) as fh:
            return json.load(fh)

    def test_train_saves_bundles(self):
        for kind in ('popular', 'conversation', 'keyword'):
            self.assertTrue(os.path.exists(self.output('bundles/{}-seed0.npz'.format(kind))))
        manifest = self.manifest('train')
        self.assertEqual(manifest['status'], 'final')
        self.assertIn('bundle:keyword:0', manifest['artifacts'])
        self.assertIn('train:conversation:0', manifest['timings'])

    def test_evaluate(self):
        out = StringIO()
        call_command('evaluate', config=self.ini, stdout=out)
        self.assertIn('popular: MAP@3', out.getvalue())
        results = pd.read_csv(self.output('results.csv'), index_col=0)
        self.assertEqual(list(results.index), ['popular', 'conversation', 'keyword'])
        curves = pd.read_csv(self.output('curves.csv'))
        self.assertEqual(set(curves.k), {1, 3})
        self.assertEqual(self.manifest('evaluate')['status'], 'final')

    def test_same_seed_same_reports(self):
        contents = []
        for name in ('first', 'second'):
            output_dir = os.path.join(self.tmp.name, name)
            call_command('train', config=self.ini, output_dir=output_dir, stdout=StringIO())
            call_command('evaluate', config=self.ini, output_dir=output_dir, stdout=StringIO())
            files = []
            for report in ('results.csv', 'curves.csv'):
                with open(os.path.join(output_dir, report), 'rb') as fh:
                    files.append(fh.read())
            contents.append(files)
        self.assertEqual(contents[0], contents[1])
        self.assertTrue(all(contents[0]))

    def test_evaluate_without_bundles(self):
        with self.assertRaises(CommandError) as cm:
            call_command('evaluate', config=self.ini, seeds=(9,), stdout=StringIO())
        self.assertEqual(cm.exception.returncode, EXIT_IO)
        self.assertIn('seed 9', str(cm.exception))

    def test_event_count_ablation(self):
        call_command('ablate', config=self.ini, skip_order=True, stdout=StringIO())
        frame = pd.read_csv(self.output('ablation_count.csv'))
        self.assertEqual(set(frame.model), {'popular', 'conversation', 'keyword'})
        self.assertEqual(len(frame), 3 * 10 * 4)

    def test_event_order_ablation(self):
        call_command('ablate', config=self.ini, models=('popular',), skip_count=True, stdout=StringIO())
        frame = pd.read_csv(self.output('ablation_order.csv'))
        self.assertEqual(set(frame.model), {'popular'})
        self.assertEqual(set(frame.metric), {'HR@3', 'MAP@3'})

    def test_event_order_ablation_scores_the_saved_bundles(self):
        experiment = Experiment(ExperimentConfig.from_file(self.ini), stage='ablate-order')
        with mock.patch('modalrec.experiment.fit_model', wraps=fit_model) as fit:
            _, ablations = experiment.ablate(kinds=('keyword',), count=False)
        # one shuffle of one seed; the original order is not retrained
        self.assertEqual(fit.call_count, 1)
        dataset, splits, _ = experiment.prepare()
        expected = evaluate(experiment.load_models('keyword'), splits[2], dataset.catalog, (3,), 'keyword')
        self.assertEqual(ablations[0].original.runs[0].ap.tolist(), expected.runs[0].ap.tolist())

    def test_retrain_is_rejected(self):
        with self.assertRaises(CommandError) as cm:
            call_command('ablate', config=self.ini, retrain=True, skip_order=True, stdout=StringIO())
        self.assertEqual(cm.exception.returncode, EXIT_CONFIG)

    def test_export_latents(self):
        out = StringIO()
        call_command('export_latents', 'keyword', config=self.ini, stdout=out)
        directory = self.output('latents-keyword-seed0')
        self.assertEqual(sorted(os.listdir(directory)), ['events.tsv', 'users.tsv'])

    def test_export_latents_of_a_flat_model(self):
        with self.assertRaises(CommandError) as cm:
            call_command('export_latents', 'popular', config=self.ini, stdout=StringIO())
        self.assertEqual(cm.exception.returncode, EXIT_CONFIG)

    def test_gridsearch(self):
        output_dir = os.path.join(self.tmp.name, 'grid')
        config = with_overrides(ExperimentConfig.from_file(self.ini), output_dir=output_dir,
                                grid={'batch_size': (64,), 'units': (4,), 'dropout': (0.2, 0.3)})
        experiment = Experiment(config, stage='gridsearch')
        best, frame = experiment.gridsearch(kinds=('conversation',))
        experiment.finalize()
        self.assertEqual(len(frame), 2)
        self.assertEqual(best['conversation'].units, 4)
        self.assertTrue(os.path.exists(os.path.join(output_dir, 'grid.csv')))

        with open(os.path.join(output_dir, 'manifest.gridsearch.json')) as fh:
            manifest = json.load(fh)
        self.assertEqual(manifest['artifacts']['hyperparameters'], 'hyperparameters.ini')
        self.assertEqual(manifest['selected_hyperparameters']['conversation'],
                         {'batch_size': 64, 'units': 4, 'dropout': best['conversation'].dropout})

        # training in the same directory picks the winner up
        trainer = Experiment(ExperimentConfig.from_file(self.ini, output_dir=output_dir), stage='train')
        self.assertEqual(trainer.config.hyper('conversation'), best['conversation'])
        trainer.train(kinds=('conversation',))
        self.assertEqual(trainer.load_models('conversation')[0].hyper, best['conversation'])

        # an explicit section in the experiment config still wins
        ini = write(os.path.join(self.tmp.name, 'explicit.ini'),
                    INI.format(output_dir=output_dir) + '\n[hyperparameters:conversation]\nunits = 5\n')
        self.assertEqual(Experiment(ExperimentConfig.from_file(ini)).config.hyper('conversation').units, 5)

    def test_workers_must_be_positive(self):
        with self.assertRaises(CommandError) as cm:
            call_command('evaluate', config=self.ini, workers=0, stdout=StringIO())
        self.assertEqual(cm.exception.returncode, EXIT_CONFIG)
