"""Diffusion Datagen

Warm-start a diffusion policy from demonstrations, fine-tune it with PPO over
its denoising steps, harvest low-variance trajectory datasets and measure
their value as a training signal for a freshly initialized student.
"""

__version__ = "0.1.0"
__description__ = "Diffusion-RL data generation pipeline"
