# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Process environment handling.

This module must stay free of third-party imports: it runs before numpy is
loaded so that thread pinning takes effect.
"""

import logging
import os

logger = logging.getLogger(__name__)

DETERMINISTIC_ENV_VAR = "GATS_DETERMINISTIC"

_THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def is_deterministic_mode() -> bool:
    """
    Check whether single-threaded deterministic execution was requested.

    Returns
    -------
    bool
        True when ``GATS_DETERMINISTIC`` is set to ``1``/``true``/``yes``
    """
    return os.getenv(DETERMINISTIC_ENV_VAR, "").strip().lower() in {"1", "true", "yes"}


def pin_thread_count() -> bool:
    """
    Pin BLAS and OpenMP thread pools to one thread when deterministic mode is on.

    Returns
    -------
    bool
        True if the thread variables were set
    """
    if not is_deterministic_mode():
        return False
    for name in _THREAD_ENV_VARS:
        os.environ[name] = "1"
    logger.debug("Deterministic mode: thread pools pinned to 1")
    return True
