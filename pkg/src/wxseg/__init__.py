"""Label-efficient LiDAR segmentation in adverse weather.

Two-stage training pipeline at desk scale: a base model is trained on
good-weather data, fine-tuned on K labeled adverse scans with warmup-gated
pseudo-label self-training (stage one), then retrained with knowledge
distillation and polar data mixing against good-weather data (stage two).
Checkpoints are selected by mIoU on pseudo-validation sets built from the
K shots alone.
"""

__version__ = "0.1.0"
