"""Population-coded spiking actor networks with temporal shrinking, trained by PPO."""

__version__ = "0.1.0"
