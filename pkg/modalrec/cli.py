"""``modalrec`` console script.

Runs the management commands without a Django project: when no
``DJANGO_SETTINGS_MODULE`` is set, settings are configured with the app
defaults and console logging.
"""
import os
import sys

import django
from django.conf import settings
from django.core.management import execute_from_command_line

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {'format': '%(asctime)s %(levelname)s %(name)s: %(message)s'},
    },
    'handlers': {
        'console': {'class': 'logging.StreamHandler', 'formatter': 'plain'},
    },
    'loggers': {
        'modalrec': {'handlers': ['console'], 'level': 'INFO'},
    },
}


def configure():
    if settings.configured or os.environ.get('DJANGO_SETTINGS_MODULE'):
        return
    settings.configure(
        INSTALLED_APPS=['modalrec'],
        LOGGING=LOGGING,
        MODALREC={},
    )


def main(argv=None):
    configure()
    django.setup()
    argv = list(sys.argv if argv is None else argv)
    execute_from_command_line(['modalrec'] + argv[1:])


if __name__ == '__main__':
    main()
