from django.apps import AppConfig


class ModalRecConfig(AppConfig):
    name = 'modalrec'
    verbose_name = 'Multi-modal recommendation'
