import logging

from django.apps import AppConfig
from django.conf import settings

logger = logging.getLogger(__name__)


class InteractionConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'interaction'
    verbose_name = 'Human-Object Interaction'

    def ready(self):
        import torch

        # same thread count for every command
        torch.set_num_threads(settings.HOI_TORCH_THREADS)
        logger.debug(f"torch threads set to {settings.HOI_TORCH_THREADS}")
