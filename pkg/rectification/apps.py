from django.apps import AppConfig


class RectificationConfig(AppConfig):
    name = 'rectification'
    verbose_name = "Gradient Rectification"
