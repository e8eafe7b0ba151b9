from django.apps import AppConfig


class TatReconConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'tat_recon'
