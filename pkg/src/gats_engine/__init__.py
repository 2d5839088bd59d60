# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
GATS Engine Package.

Gather-Attend-Scatter layers that join independently trained transformer
models of different modalities. The package contains a small reverse-mode
tensor engine, the GATS layer and composer, toy component models, training
loops with classifier-free guidance, executable presets and a grid-world
agent harness.

Environment Variables
---------------------
GATS_DETERMINISTIC : str
    Set to ``1`` to pin BLAS/OpenMP thread pools to a single thread
GATS_CONFIG_FILE : str
    Path to a run configuration file (alternative to --config)
GATS_LOG_LEVEL : str
    Default logging level (alternative to --log-level)
"""

from gats_engine.core.environment import pin_thread_count

pin_thread_count()

from gats_engine.cli import main  # noqa: E402

__version__ = "1.0.0"
__all__ = ["main"]
