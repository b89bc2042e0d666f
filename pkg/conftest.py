import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'cilbench.settings')
django.setup()
