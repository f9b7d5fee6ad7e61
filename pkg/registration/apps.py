from django.apps import AppConfig
from django.utils.translation import gettext_lazy as _


class RegistrationAppConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'registration'
    verbose_name = _('Registration')
