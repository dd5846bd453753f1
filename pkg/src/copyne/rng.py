"""Seeded, labelled random streams.

Every random draw in the package comes from ``stream(seed, label)``: a
counter-based Philox generator keyed by the run seed and a CRC32 of the
stream label, so streams are independent and reproducible across runs and
modules.  Labels in use:

    init        parameter initialisation
    shuffle     per-epoch training order
    pseudo      pseudo-entity substrings for entity-free instances
    negatives   negative entities sampled into batch dictionaries
    dropout     per-epoch dropout masks
    lexicon     character inventory, syllable map, syllable embeddings
    entities    entity inventories
    text        transcripts and entity placement
    noise       frame durations and acoustic noise
"""

import zlib

import numpy as np


def stream(seed: int, label: str, *sub: int) -> np.random.Generator:
    key = (zlib.crc32(label.encode("utf-8")),) + tuple(int(s) for s in sub)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key)))
