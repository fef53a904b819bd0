"""Cell-aware stacked LSTM sentence encoders with hand-written backpropagation."""

from .encoder import EncoderConfig
from .estimator import CasLstmClassifier
from .model import ModelConfig, SentenceClassifierNet
from .training import TrainConfig, fit, gradcheck

__all__ = ["CasLstmClassifier", "EncoderConfig", "ModelConfig", "SentenceClassifierNet",
           "TrainConfig", "fit", "gradcheck"]
__version__ = "0.1.0"
