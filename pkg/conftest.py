import os

import django

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "grm_lab.settings")
django.setup()
