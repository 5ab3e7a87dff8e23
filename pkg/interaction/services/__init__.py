from .attention import AttentionMapService
from .experiments import EvaluationService, SweepService
from .pipeline import InteractionModel, Predictor, Workspace
from .training import TrainingService

__all__ = ['AttentionMapService', 'EvaluationService', 'InteractionModel', 'Predictor', 'SweepService',
           'TrainingService', 'Workspace']
