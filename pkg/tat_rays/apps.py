from django.apps import AppConfig


class TatRaysConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'tat_rays'
