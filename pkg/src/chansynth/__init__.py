"""Physics-constrained generative modelling of MIMO channels.

Geometric multipath synthesis, a dictionary relaxation that makes the channel
linear in a learned gain matrix, VAE training through either physics layer,
and transport/kernel metrics for comparing channel distributions.
"""
from .pbgc import (ArrayConfig, PathParams, array_response_rx, array_response_tx, flatten, nmse,
                   synthesize_channel, unflatten)
from .dictionary import (AngleGrid, Dictionary, build_dictionary, extract_paths, grid_angle,
                         project_paths, relaxed_synthesize)
from .generative import VaeConfig, VaeModel, generate, train
from .datasets import (ChannelDataset, PathDistribution, ScenarioSpec, generate_dataset, load_dataset,
                       preset, save_dataset, split)
from .metrics import mmd, wasserstein2

__version__ = "0.1.0"
