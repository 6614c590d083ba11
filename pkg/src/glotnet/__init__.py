"""Glottal-excitation WaveNet vocoder toolkit.

Modules: dsp (LPC, LSF, filtering), glottal (inverse filtering), features
(acoustic features and conditioning), neuralnet (autodiff), model
(WaveNet, mixture loss, training, checkpoints), generate (sampling and
synthesis), evaluation (objective metrics), cli.
"""

__version__ = "0.1.0"
