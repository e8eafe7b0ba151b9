from django.apps import AppConfig


class TatFieldConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'tat_field'
