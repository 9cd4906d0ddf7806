# File: src/__init__.py
"""
sorl-desk - offline reinforcement learning with shortcut generative policies.

A one-step flow policy trained against a learned critic, plus the tools to
scale its inference (more integration steps, best-of-N selection) and to check
the generation-error bounds that justify it.
"""

from .config import InferenceConfig, RunConfig, TrainConfig, load_run_config
from .envworld import Dataset, generate_dataset, get_env_spec
from .errors import SorlError
from .noise import NoiseSource
from .scale import evaluate, scaling_sweep
from .shortcut import ShortcutPolicy, euler_sample
from .sorl import Critic, TrainState, train
from .themes import Theme, get_theme, list_themes

__version__ = "0.1.0"

__all__ = [
    "Critic",
    "Dataset",
    "InferenceConfig",
    "NoiseSource",
    "RunConfig",
    "ShortcutPolicy",
    "SorlError",
    "Theme",
    "TrainConfig",
    "TrainState",
    "euler_sample",
    "evaluate",
    "generate_dataset",
    "get_env_spec",
    "get_theme",
    "list_themes",
    "load_run_config",
    "scaling_sweep",
    "train",
]
