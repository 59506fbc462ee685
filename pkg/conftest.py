# Test wiring for pytest: mirrors tests/runtests.py (tests/ on sys.path,
# tests.settings as the Django settings module, django.setup()).
import os
import sys

import django

_tests_dir = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'tests')
if _tests_dir not in sys.path:
    sys.path.insert(0, _tests_dir)

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'tests.settings')
django.setup()
