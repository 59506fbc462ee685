import logging

from django.core.management.base import BaseCommand, CommandError

from modalrec.exceptions import (ArtifactIOError, ConfigurationError,
                                 DatasetError, EncoderError, ModalRecError,
                                 ModelBundleError, NumericError, TrainingError,
                                 UsageError)
from modalrec.experiment import Experiment, ExperimentConfig, with_overrides

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRAINING = 4
EXIT_IO = 5

RETURN_CODES = (
    (ConfigurationError, EXIT_CONFIG),
    (UsageError, EXIT_CONFIG),
    (DatasetError, EXIT_DATA),
    (EncoderError, EXIT_DATA),
    (TrainingError, EXIT_TRAINING),
    (NumericError, EXIT_TRAINING),
    (ModelBundleError, EXIT_IO),
    (ArtifactIOError, EXIT_IO),
)


def return_code(exc):
    for cls, code in RETURN_CODES:
        if isinstance(exc, cls):
            return code
    return 1


def int_list(raw):
    return tuple(int(v) for v in raw.split(',') if v.strip())


class ModalRecCommand(BaseCommand):
    """Shared flags and error translation for the modalrec commands."""
    experiment_flags = True

    def add_arguments(self, parser):
        if self.experiment_flags:
            parser.add_argument('--config', help='Experiment INI file.')
            parser.add_argument('--seeds', type=int_list, help='Comma-separated seeds.')
            parser.add_argument('--k', type=int_list, dest='k_list', help='Comma-separated cutoffs.')
            parser.add_argument('--output-dir', help='Directory for bundles, reports and the manifest.')
            parser.add_argument('--models', type=lambda raw: tuple(v.strip() for v in raw.split(',') if v.strip()),
                                help='Comma-separated model kinds.')
        parser.add_argument('--workers', type=int, help='Parallel training processes.')

    def execute(self, *args, **options):
        if options.get('verbosity', 1) >= 2:
            logging.getLogger('modalrec').setLevel(logging.DEBUG)
        try:
            return super().execute(*args, **options)
        except ModalRecError as exc:
            raise CommandError(str(exc), returncode=return_code(exc))

    def experiment(self, options):
        overrides = {
            'seeds': options.get('seeds'),
            'k_list': options.get('k_list'),
            'output_dir': options.get('output_dir'),
            'models': options.get('models'),
        }
        if options.get('config'):
            config = ExperimentConfig.from_file(options['config'], **overrides)
        else:
            config = with_overrides(ExperimentConfig(), **overrides)
        if options.get('workers') is not None and options['workers'] < 1:
            raise ConfigurationError('--workers must be positive.')
        stage = self.__module__.rsplit('.', 1)[-1]
        return Experiment(config, workers=options.get('workers'), stage=stage)
