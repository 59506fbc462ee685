from django.core.exceptions import ImproperlyConfigured


__all__ = [
    'ModalRecError', 'ConfigurationError', 'DatasetError', 'DatasetParseError',
    'SchemaError', 'EncoderError', 'AnchorError', 'TrainingError',
    'NumericError', 'UsageError', 'ModelBundleError', 'MissingBundleError',
    'ArtifactIOError',
]


class ModalRecError(Exception):
    pass


class ConfigurationError(ModalRecError, ImproperlyConfigured):
    pass


class DatasetError(ModalRecError):
    pass


class DatasetParseError(DatasetError):
    def __init__(self, message, line=None):
        if line is not None:
            message = 'line {}: {}'.format(line, message)
        super().__init__(message)
        self.line = line


class SchemaError(DatasetError):
    pass


class EncoderError(ModalRecError):
    pass


class AnchorError(EncoderError):
    pass


class TrainingError(ModalRecError):
    def __init__(self, message, epoch=None, batch=None):
        if epoch is not None:
            message = '{} (epoch {}, batch {})'.format(message, epoch, batch)
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class NumericError(ModalRecError):
    pass


class UsageError(ModalRecError):
    pass


class ModelBundleError(ModalRecError):
    pass


class MissingBundleError(ModelBundleError):
    def __init__(self, kind, seed):
        super().__init__('No trained bundle for model "{}" with seed {}.'.format(kind, seed))
        self.kind = kind
        self.seed = seed


class ArtifactIOError(ModalRecError):
    pass
