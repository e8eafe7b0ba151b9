from django.apps import AppConfig


class TatWaveConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'tat_wave'
