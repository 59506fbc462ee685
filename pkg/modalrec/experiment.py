"""Reproducible experiment runs: data, grid search, training, reports.

An experiment is described by an INI file::

    [dataset]
    path = data/users.jsonl        ; omit to generate a synthetic dataset
    tag_map = data/users.tagmap
    preprocess = yes
    seed = 0                       ; synthetic generator seed

    [generator]
    n_users = 10000

    [experiment]
    models = popular, latent_feature
    seeds = 0, 1, 2, 3, 4
    k = 1, 2, 3, 4, 5
    output_dir = runs/reference
    shuffles = 5

    [grid]
    batch_size = 64, 128, 256, 512

    [hyperparameters:latent_feature]
    batch_size = 512
    units = 256
    dropout = 0.3

Every key is optional.
"""
import configparser
import json
import logging
import os
import time
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from itertools import product
from typing import Optional, Tuple

import pandas as pd

import modalrec
from modalrec import conf
from modalrec.data import (chronological_split, dataset_statistics,
                           load_dataset, preprocess)
from modalrec.encoders import FeatureSpace, TagMap
from modalrec.evaluation import (ablate_event_count, ablate_event_order,
                                 curves_table, evaluate, export_latents,
                                 order_table, results_table, write_table)
from modalrec.exceptions import (ArtifactIOError, ConfigurationError,
                                 MissingBundleError, UsageError)
from modalrec.recommenders import (RECOMMENDERS, Hyperparameters,
                                   LateFusionRecommender, build_recommender,
                                   load_recommender)
from modalrec.synthetic import (GeneratorConfig, generate_synthetic,
                                synthetic_tag_map)

__all__ = ['ExperimentConfig', 'RunManifest', 'Experiment']

logger = logging.getLogger(__name__)

TEACHER_KINDS = ('conversation', 'web_session')

# grid-search winners, read back by later stages in the same output directory
SELECTED_HYPERPARAMETERS = 'hyperparameters.ini'


def _split_list(raw, cast):
    try:
        return tuple(cast(v.strip()) for v in raw.split(',') if v.strip())
    except ValueError:
        raise ConfigurationError('Cannot read "{}" as a list of {}.'.format(raw, cast.__name__))


def _read_hyperparameters(parser):
    hypers = {}
    for name in parser.sections():
        if not name.startswith('hyperparameters:'):
            continue
        kind = name.split(':', 1)[1].strip()
        section = parser[name]
        default = Hyperparameters.for_kind(kind)
        hypers[kind] = Hyperparameters(section.getint('batch_size', default.batch_size),
                                       section.getint('units', default.units),
                                       section.getfloat('dropout', default.dropout))
    return hypers


def load_selected_hyperparameters(path):
    """Hyperparameters per kind from a grid-search file; empty when there is none."""
    if not os.path.exists(path):
        return {}
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding='utf-8') as fh:
            parser.read_file(fh)
        return _read_hyperparameters(parser)
    except OSError as exc:
        raise ArtifactIOError('Cannot read "{}": {}'.format(path, exc))
    except (configparser.Error, ValueError) as exc:
        raise ConfigurationError('Invalid hyperparameter file "{}": {}'.format(path, exc))


def dump_selected_hyperparameters(path, selected):
    parser = configparser.ConfigParser()
    for kind, hyper in sorted(selected.items()):
        parser['hyperparameters:{}'.format(kind)] = {
            'batch_size': str(hyper.batch_size),
            'units': str(hyper.units),
            'dropout': repr(hyper.dropout),
        }
    try:
        with open(path, 'w', encoding='utf-8') as fh:
            parser.write(fh)
    except OSError as exc:
        raise ArtifactIOError('Cannot write "{}": {}'.format(path, exc))
    return path


@dataclass(frozen=True)
class ExperimentConfig:
    dataset_path: Optional[str] = None
    tag_map_path: Optional[str] = None
    preprocess: bool = True
    dataset_seed: int = 0
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    models: Tuple[str, ...] = conf.MODEL_KINDS
    seeds: Tuple[int, ...] = ()
    k_list: Tuple[int, ...] = ()
    output_dir: str = 'runs'
    shuffles: int = 5
    grid: dict = field(default_factory=dict)
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.seeds:
            object.__setattr__(self, 'seeds', tuple(conf.get('SEEDS')))
        if not self.k_list:
            object.__setattr__(self, 'k_list', tuple(conf.get('K_LIST')))
        if not self.grid:
            object.__setattr__(self, 'grid', {k: tuple(v) for k, v in conf.get('GRID').items()})
        if not self.models:
            raise ConfigurationError('An experiment needs at least one model kind.')
        unknown = [m for m in self.models if m not in conf.MODEL_KINDS]
        if unknown:
            raise ConfigurationError('Unknown model kind(s): {}.'.format(', '.join(unknown)))
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError('Seeds must be distinct, got {}.'.format(list(self.seeds)))
        if any(k < 1 for k in self.k_list):
            raise ConfigurationError('Every k must be at least 1.')
        if self.shuffles < 1:
            raise ConfigurationError('shuffles must be at least 1.')

    @classmethod
    def from_file(cls, path, **overrides):
        parser = configparser.ConfigParser(inline_comment_prefixes=(';',))
        try:
            with open(path, encoding='utf-8') as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ArtifactIOError('Cannot read experiment config "{}": {}'.format(path, exc))
        return cls.from_parser(parser, **overrides)

    @classmethod
    def from_parser(cls, parser, **overrides):
        values = {}
        try:
            if parser.has_section('dataset'):
                section = parser['dataset']
                values['dataset_path'] = section.get('path')
                values['tag_map_path'] = section.get('tag_map')
                values['preprocess'] = section.getboolean('preprocess', True)
                values['dataset_seed'] = section.getint('seed', 0)
            if parser.has_section('generator'):
                values['generator'] = GeneratorConfig.from_mapping(parser['generator'])
            if parser.has_section('experiment'):
                section = parser['experiment']
                if 'models' in section:
                    values['models'] = _split_list(section['models'], str)
                if 'seeds' in section:
                    values['seeds'] = _split_list(section['seeds'], int)
                if 'k' in section:
                    values['k_list'] = _split_list(section['k'], int)
                values['output_dir'] = section.get('output_dir', 'runs')
                values['shuffles'] = section.getint('shuffles', 5)
            if parser.has_section('grid'):
                grid = {k: tuple(v) for k, v in conf.get('GRID').items()}
                casts = {'batch_size': int, 'units': int, 'dropout': float}
                for key, raw in parser['grid'].items():
                    if key not in casts:
                        raise ConfigurationError('Unknown grid dimension "{}".'.format(key))
                    grid[key] = _split_list(raw, casts[key])
                values['grid'] = grid
            values['hyperparameters'] = _read_hyperparameters(parser)
        except ValueError as exc:
            raise ConfigurationError('Invalid experiment config: {}'.format(exc))
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def hyper(self, kind):
        if kind in self.hyperparameters:
            return self.hyperparameters[kind]
        return Hyperparameters.for_kind(kind)

    def resolved(self):
        data = asdict(self)
        data['hyperparameters'] = {k: self.hyper(k).__dict__ for k in self.models
                                   if k not in ('popular', 'late_fusion')}
        return data


class RunManifest:
    """Provenance of everything an experiment writes.

    It is written when the run starts and again when it is finalized;
    a finalized manifest no longer accepts artifacts. ``config`` is an
    ``ExperimentConfig`` or a plain mapping of the options a stage ran with.
    """

    def __init__(self, path, config, fingerprint, stage=None):
        self.path = path
        resolved = config.resolved() if hasattr(config, 'resolved') else dict(config)
        self.data = OrderedDict([
            ('version', modalrec.__version__),
            ('stage', stage),
            ('config', resolved),
            ('dataset_fingerprint', fingerprint),
            ('artifacts', OrderedDict()),
            ('timings', OrderedDict()),
            ('status', 'running'),
        ])

    @classmethod
    def for_stage(cls, directory, stage, config, fingerprint):
        """``manifest.<stage>.json`` in ``directory``, written on creation."""
        try:
            os.makedirs(directory, exist_ok=True)
        except OSError as exc:
            raise ArtifactIOError('Cannot create "{}": {}'.format(directory, exc))
        manifest = cls(os.path.join(directory, 'manifest.{}.json'.format(stage)), config, fingerprint, stage)
        manifest.write()
        return manifest

    @property
    def finalized(self):
        return self.data['status'] == 'final'

    def add_artifact(self, name, path):
        if self.finalized:
            raise UsageError('Manifest "{}" is finalized.'.format(self.path))
        self.data['artifacts'][name] = os.path.relpath(path, os.path.dirname(self.path))

    def add_timing(self, name, seconds):
        if self.finalized:
            raise UsageError('Manifest "{}" is finalized.'.format(self.path))
        self.data['timings'][name] = round(seconds, 3)

    def write(self):
        try:
            with open(self.path, 'w', encoding='utf-8') as fh:
                json.dump(self.data, fh, indent=2, default=str)
        except OSError as exc:
            raise ArtifactIOError('Cannot write manifest "{}": {}'.format(self.path, exc))
        logger.info('Wrote manifest %s.', self.path)

    def finalize(self):
        self.data['status'] = 'final'
        self.write()


def _settings_snapshot():
    return {name: conf.get(name) for name in conf.DEFAULTS}


def _init_worker(snapshot):
    from django.conf import settings
    if not settings.configured:
        import django
        settings.configure(MODALREC=snapshot, INSTALLED_APPS=['modalrec'])
        django.setup()


def fit_model(kind, splits, catalog, features, seed, hyper=None, teachers=None, train_config=None):
    train_records, valid_records, _ = splits
    kwargs = {}
    if teachers and issubclass(RECOMMENDERS[kind], LateFusionRecommender):
        kwargs = {'conversation': teachers.get('conversation'), 'session': teachers.get('web_session')}
    recommender = build_recommender(kind, catalog, features, hyper, seed, train_config, **kwargs)
    return recommender.fit(train_records, valid_records)


def _train_seed(kinds, splits, catalog, features, seed, hypers, bundle_dir):
    """Train every kind for one seed; single-modality models double as fusion teachers."""
    trained, timings = OrderedDict(), OrderedDict()
    needs_teachers = any(issubclass(RECOMMENDERS[k], LateFusionRecommender) for k in kinds)
    order = list(kinds)
    if needs_teachers:
        order = [k for k in TEACHER_KINDS if k not in order] + order
        order = sorted(order, key=lambda k: k not in TEACHER_KINDS)
    for kind in order:
        started = time.perf_counter()
        trained[kind] = fit_model(kind, splits, catalog, features, seed, hypers.get(kind), trained)
        timings[kind] = time.perf_counter() - started
    paths = OrderedDict()
    for kind in kinds:
        paths[kind] = bundle_path(bundle_dir, kind, seed)
        trained[kind].to_bundle().save(paths[kind])
        logger.info('Trained %s with seed %d in %.1fs.', kind, seed, timings[kind])
    return seed, paths, timings


def bundle_path(bundle_dir, kind, seed):
    return os.path.join(bundle_dir, '{}-seed{}.npz'.format(kind, seed))


class Experiment:
    """One configured run over one dataset.

    Hyperparameters picked by an earlier grid search in the same output
    directory are used for every kind the config does not set explicitly.
    """

    def __init__(self, config, workers=None, stage='run'):
        selected = load_selected_hyperparameters(os.path.join(config.output_dir, SELECTED_HYPERPARAMETERS))
        if selected:
            config = replace(config, hyperparameters=dict(selected, **config.hyperparameters))
        self.config = config
        self.stage = stage
        self.workers = workers or conf.worker_count()
        self.output_dir = config.output_dir
        self.bundle_dir = os.path.join(self.output_dir, 'bundles')
        self._prepared = None
        self._manifest = None

    # data
    def load(self):
        config = self.config
        if config.dataset_path:
            dataset = load_dataset(config.dataset_path)
            tag_map = TagMap.load(config.tag_map_path) if config.tag_map_path else TagMap()
        else:
            dataset = generate_synthetic(config.generator, config.dataset_seed)
            tag_map = synthetic_tag_map(config.generator)
        if config.preprocess:
            dataset, _ = preprocess(dataset)
        return dataset, tag_map

    def prepare(self):
        if self._prepared is None:
            dataset, tag_map = self.load()
            splits = chronological_split(dataset.records, conf.get('TEST_FRACTION'),
                                         conf.get('VALID_FRACTION'))
            features = FeatureSpace.fit(splits[0], tag_map, dataset.embedding_width)
            self._prepared = (dataset, splits, features)
        return self._prepared

    @property
    def manifest(self):
        if self._manifest is None:
            dataset, _, _ = self.prepare()
            self._makedirs()
            self._manifest = RunManifest.for_stage(self.output_dir, self.stage, self.config,
                                                   dataset.fingerprint())
        return self._manifest

    def _makedirs(self):
        try:
            os.makedirs(self.bundle_dir, exist_ok=True)
        except OSError as exc:
            raise ArtifactIOError('Cannot create "{}": {}'.format(self.bundle_dir, exc))

    def _output(self, name):
        return os.path.join(self.output_dir, name)

    # grid search
    def gridsearch(self, kinds=None, seed=None):
        """Exhaustive grid per trainable kind; picks the lowest validation loss."""
        dataset, splits, features = self.prepare()
        manifest = self.manifest
        seed = self.config.seeds[0] if seed is None else seed
        grid = self.config.grid
        cells = list(product(grid['batch_size'], grid['units'], grid['dropout']))
        rows, best = [], OrderedDict()
        for kind in kinds or self.config.models:
            if kind in ('popular', 'late_fusion'):
                continue
            teachers = {}
            if kind == 'knowledge_distillation':
                teachers = {k: fit_model(k, splits, dataset.catalog, features, seed, self.config.hyper(k))
                            for k in TEACHER_KINDS}
            for batch_size, units, dropout in cells:
                hyper = Hyperparameters(batch_size, units, dropout)
                recommender = fit_model(kind, splits, dataset.catalog, features, seed, hyper, teachers)
                history = recommender.history.get('student') or recommender.history['network']
                rows.append({'model': kind, 'batch_size': batch_size, 'units': units,
                             'dropout': dropout, 'valid_loss': history['best_valid_loss'],
                             'best_epoch': history['best_epoch']})
                logger.info('Grid %s %s: valid loss %.6f.', kind, hyper, history['best_valid_loss'])
                if kind not in best or history['best_valid_loss'] < best[kind][1]:
                    best[kind] = (hyper, history['best_valid_loss'])
        frame = pd.DataFrame(rows, columns=['model', 'batch_size', 'units', 'dropout', 'valid_loss', 'best_epoch'])
        manifest.add_artifact('grid', write_table(frame, self._output('grid.csv'), index=False))
        chosen = OrderedDict((kind, hyper) for kind, (hyper, _) in best.items())
        path = self._output(SELECTED_HYPERPARAMETERS)
        selected = dict(load_selected_hyperparameters(path), **chosen)
        manifest.add_artifact('hyperparameters', dump_selected_hyperparameters(path, selected))
        manifest.data['selected_hyperparameters'] = {kind: asdict(hyper) for kind, hyper in chosen.items()}
        manifest.write()
        return chosen, frame

    # training
    def train(self, kinds=None, seeds=None):
        dataset, splits, features = self.prepare()
        manifest = self.manifest
        kinds = tuple(kinds or self.config.models)
        seeds = tuple(seeds or self.config.seeds)
        hypers = {k: self.config.hyper(k) for k in set(kinds) | set(TEACHER_KINDS)
                  if k not in ('popular', 'late_fusion')}
        args = [(kinds, splits, dataset.catalog, features, seed, hypers, self.bundle_dir) for seed in seeds]
        if self.workers > 1 and len(seeds) > 1:
            with ProcessPoolExecutor(max_workers=min(self.workers, len(seeds)), initializer=_init_worker,
                                     initargs=(_settings_snapshot(),)) as pool:
                results = list(pool.map(_train_seed, *zip(*args)))
        else:
            results = [_train_seed(*a) for a in args]
        for seed, paths, timings in sorted(results, key=lambda r: r[0]):
            for kind, path in paths.items():
                manifest.add_artifact('bundle:{}:{}'.format(kind, seed), path)
                manifest.add_timing('train:{}:{}'.format(kind, seed), timings[kind])
        manifest.write()
        return results

    def load_models(self, kind, seeds=None):
        dataset, _, features = self.prepare()
        models = OrderedDict()
        for seed in seeds or self.config.seeds:
            path = bundle_path(self.bundle_dir, kind, seed)
            if not os.path.exists(path):
                raise MissingBundleError(kind, seed)
            models[seed] = load_recommender(path, dataset.catalog, features)
        return models

    # reports
    def evaluate(self, kinds=None, seeds=None, k_list=None):
        dataset, splits, _ = self.prepare()
        manifest = self.manifest
        k_list = tuple(k_list or self.config.k_list)
        reports = []
        for kind in kinds or self.config.models:
            started = time.perf_counter()
            reports.append(evaluate(self.load_models(kind, seeds), splits[2], dataset.catalog, k_list, kind))
            manifest.add_timing('evaluate:{}'.format(kind), time.perf_counter() - started)
        k = 3 if 3 in k_list else k_list[-1]
        manifest.add_artifact('results', write_table(results_table(reports, k=k), self._output('results.csv')))
        manifest.add_artifact('curves', write_table(curves_table(reports), self._output('curves.csv'), index=False))
        manifest.write()
        return reports

    def ablate(self, kinds=None, seeds=None, count=True, order=True, retrain=False, k=3):
        dataset, splits, features = self.prepare()
        manifest = self.manifest
        seeds = tuple(seeds or self.config.seeds)
        frames, ablations = [], []
        for kind in kinds or self.config.models:
            models = self.load_models(kind, seeds)
            if count:
                frame = ablate_event_count(models, splits[2], dataset.catalog, k=k, retrain=retrain)
                frame.insert(0, 'model', kind)
                frames.append(frame)
            if order:
                # the original order is scored with the trained bundles
                original = evaluate(models, splits[2], dataset.catalog, (k,), kind)
                hyper = self.config.hyper(kind) if kind not in ('popular', 'late_fusion') else None

                def fit(train_records, valid_records, seed, kind=kind, hyper=hyper):
                    return fit_model(kind, (train_records, valid_records, ()), dataset.catalog,
                                     features, seed, hyper)
                ablations.append(ablate_event_order(fit, splits, dataset.catalog, seeds,
                                                    self.config.shuffles, k, original))
        if frames:
            manifest.add_artifact('ablation_count', write_table(pd.concat(frames, ignore_index=True),
                                                                self._output('ablation_count.csv'), index=False))
        if ablations:
            manifest.add_artifact('ablation_order', write_table(order_table(ablations, k),
                                                                self._output('ablation_order.csv'), index=False))
        manifest.write()
        return frames, ablations

    def export_latents(self, kind, seed=None):
        dataset, splits, _ = self.prepare()
        seed = self.config.seeds[0] if seed is None else seed
        recommender = self.load_models(kind, (seed,))[seed]
        directory = self._output('latents-{}-seed{}'.format(kind, seed))
        try:
            os.makedirs(directory, exist_ok=True)
        except OSError as exc:
            raise ArtifactIOError('Cannot create "{}": {}'.format(directory, exc))
        paths = export_latents(recommender, list(splits[2]), directory)
        for path in paths:
            self.manifest.add_artifact('latents:{}'.format(os.path.basename(path)), path)
        self.manifest.write()
        return paths

    def statistics(self):
        dataset, _, _ = self.prepare()
        return dataset_statistics(dataset)

    def finalize(self):
        self.manifest.finalize()


def with_overrides(config, **overrides):
    return replace(config, **{k: v for k, v in overrides.items() if v is not None})
