"""URL configuration for the implicitnav project: the admin lists mapping runs and benchmarks."""

from django.contrib import admin
from django.urls import path

from . import admin as custom_admin  # noqa: F401 - restricts admin to superusers

urlpatterns = [
    path('admin/', admin.site.urls),
]
