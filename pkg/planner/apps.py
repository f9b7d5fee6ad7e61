from django.apps import AppConfig
from django.utils.translation import gettext_lazy as _


class PlannerAppConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'planner'
    verbose_name = _('Planner')
