"""App settings.

Everything is read from the ``MODALREC`` dict in the Django settings and
falls back to the values below, so a project without any ``MODALREC``
setting reproduces the reference experiment.
"""
import os

from django.conf import settings

from modalrec.exceptions import ConfigurationError

__all__ = ['DEFAULTS', 'MODEL_KINDS', 'get', 'hyperparameters', 'worker_count']


MODEL_KINDS = (
    'popular',
    'conversation',
    'web_session',
    'late_fusion',
    'knowledge_distillation',
    'generative_imputation',
    'neutral_imputation',
    'keyword',
    'latent_feature',
    'relative_representation',
)

DEFAULTS = {
    # preprocessing
    'MIN_ITEM_FREQUENCY': 0.01,
    'MIN_SENTENCES': 4,
    'MIN_ACTIONS': 3,
    'MAX_SENTENCES': 541,
    'MAX_ACTIONS': 40,
    'INACTIVITY_DAYS': 14,
    'MAX_EVENTS': 10,
    'MIN_TOKEN_FREQUENCY': 0.001,
    # splits
    'TEST_FRACTION': 0.1,
    'VALID_FRACTION': 0.1,
    # training
    'LEARNING_RATE': 0.001,
    'BETA_1': 0.9,
    'BETA_2': 0.999,
    'EPSILON': 1e-7,
    'MAX_EPOCHS': 200,
    'PATIENCE': 5,
    'DTYPE': 'float32',
    # (batch size, units, dropout)
    'HYPERPARAMETERS': {
        'conversation': (512, 64, 0.2),
        'web_session': (256, 256, 0.3),
        'knowledge_distillation': (256, 128, 0.4),
        'generative_imputation': (128, 256, 0.2),
        'neutral_imputation': (128, 128, 0.2),
        'keyword': (512, 256, 0.2),
        'latent_feature': (512, 256, 0.3),
        'relative_representation': (256, 256, 0.3),
    },
    'KD_ALPHA': 0.32,
    'KD_BETA': 0.87,
    'ANCHOR_COUNT': 125,
    'ANCHOR_UNITS': 64,
    'MIN_IMPUTER_USERS': 100,
    # experiment
    'SEEDS': (0, 1, 2, 3, 4),
    'K_LIST': (1, 2, 3, 4, 5),
    'GRID': {
        'batch_size': (64, 128, 256, 512),
        'units': (64, 128, 256),
        'dropout': (0.2, 0.3, 0.4),
    },
    'SIGNIFICANCE_LEVEL': 0.05,
    'REFERENCE_MODEL': 'latent_feature',
    'WORKERS': 1,
}


def _user_settings():
    user = getattr(settings, 'MODALREC', {}) if settings.configured else {}
    unknown = set(user) - set(DEFAULTS)
    if unknown:
        msg = 'Unknown MODALREC setting(s): {}.'
        raise ConfigurationError(msg.format(', '.join(sorted(unknown))))
    return user


def get(name):
    if name not in DEFAULTS:
        raise ConfigurationError('Unknown MODALREC setting "{}".'.format(name))
    return _user_settings().get(name, DEFAULTS[name])


def hyperparameters(kind):
    table = dict(DEFAULTS['HYPERPARAMETERS'])
    table.update(get('HYPERPARAMETERS'))
    try:
        return table[kind]
    except KeyError:
        msg = 'Model "{}" has no hyperparameters.'
        raise ConfigurationError(msg.format(kind))


def worker_count():
    value = os.environ.get('MODALREC_WORKERS')
    if value is None:
        return int(get('WORKERS'))
    try:
        workers = int(value)
    except ValueError:
        raise ConfigurationError('MODALREC_WORKERS must be an integer, it is "{}".'.format(value))
    if workers < 1:
        raise ConfigurationError('MODALREC_WORKERS must be positive.')
    return workers
