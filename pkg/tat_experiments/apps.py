from django.apps import AppConfig


class TatExperimentsConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'tat_experiments'
