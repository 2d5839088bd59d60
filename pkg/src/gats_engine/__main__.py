# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
import sys

from gats_engine import main

sys.exit(main())
