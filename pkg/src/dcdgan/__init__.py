"""Discriminator contrastive divergence on 2D Gaussian mixtures.

Pre-train a spectrally normalized WGAN, fine-tune its critic into an energy
function with Langevin-refreshed negatives, and sample from ``exp(D)``
starting at generator outputs.
"""

from .dcd import DcdConfig, DcdLog, dcd_finetune, dcd_objective
from .evaluation import LevelGrid, ModeReport, energy_alignment, level_grid, mode_report
from .nn import AdamState, MlpCritic, MlpGenerator, adam_step, critic_input_grad, critic_value, spectral_normalize
from .numcore import Tape, gaussian, make_rng, tensor
from .sampler import PRESETS, ChainState, LangevinConfig, dot_refine, langevin_step, mala_step, run_chain
from .synth import MixtureSpec, grid25, log_density, ring8, sample, score
from .wgan import TrainConfig, TrainLog, critic_loss, generator_loss, train

__version__ = "0.1.0"
