# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Word vocabulary for instructions and captions.
"""

from typing import List, Sequence

import numpy as np

from gats_engine.harness.env import COLORS, CORNERS, SHAPES, GridState, Template

WORDS = (
    "<pad>",
    "<null>",
    "<bos>",
    "<eos>",
    "push",
    "to",
    *COLORS,
    *SHAPES,
    "top",
    "bottom",
    "left",
    "right",
    "middle",
    "center",
)
WORD_ID = {w: i for i, w in enumerate(WORDS)}
NULL_ID = WORD_ID["<null>"]
BOS_ID = WORD_ID["<bos>"]
EOS_ID = WORD_ID["<eos>"]
INSTRUCTION_LENGTH = 6


def encode(words: Sequence[str]) -> np.ndarray:
    return np.array([WORD_ID[w] for w in words], dtype=np.int64)


def decode(ids: Sequence[int]) -> List[str]:
    return [WORDS[int(i)] for i in ids]


def instruction_tokens(template: Template) -> np.ndarray:
    """``push <color> <shape> to <top|bottom> <left|right>``."""
    vertical, horizontal = CORNERS[template.corner].split("_")
    return encode(["push", COLORS[template.color], SHAPES[template.shape], "to", vertical, horizontal])


def null_instruction(length: int = INSTRUCTION_LENGTH) -> np.ndarray:
    """Null conditioning: the instruction with every token replaced by ``<null>``."""
    return np.full(length, NULL_ID, dtype=np.int64)


def _band(index: int, size: int, words: Sequence[str]) -> str:
    third = size / 3.0
    return words[min(int(index // third), 2)]


def caption_tokens(state: GridState) -> np.ndarray:
    """``<bos>`` then ``<color> <shape> <row band> <column band>`` per object, then ``<eos>``."""
    words = ["<bos>"]
    for kind, r, c in state.objects:
        color, shape = divmod(kind, len(SHAPES))
        words += [
            COLORS[color],
            SHAPES[shape],
            _band(r, state.size, ("top", "middle", "bottom")),
            _band(c, state.size, ("left", "center", "right")),
        ]
    words.append("<eos>")
    return encode(words)
