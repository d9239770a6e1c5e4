""" Counter-based random streams keyed by tuples of integers and tags. """

import zlib
from typing import Union

import numpy as np

Key = Union[int, str]


def _word(part: Key) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode())
    if part < 0:
        raise ValueError(f'negative key component {part}')
    return int(part)


def stream(*key: Key) -> np.random.Generator:
    """
    A Philox generator whose state depends only on `key`.

    Draws from two streams never overlap unless the keys are equal, so the
    result of a draw does not depend on iteration order or worker count.
    """
    seq = np.random.SeedSequence([_word(k) for k in key])
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(*key: Key) -> int:
    """ A 63-bit integer seed derived from `key`. """
    seq = np.random.SeedSequence([_word(k) for k in key])
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
