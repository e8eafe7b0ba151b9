from django.apps import AppConfig


class TatDetectorConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'tat_detector'
