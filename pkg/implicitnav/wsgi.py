"""WSGI config for the implicitnav project (serves the run admin)."""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'implicitnav.settings')

application = get_wsgi_application()
