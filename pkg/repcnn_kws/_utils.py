import hashlib

import numpy as np

from ._errors import NonFiniteError


def derive_seed(global_seed: int, key: str) -> int:
    """ Derive a per-item seed from a global seed and a string key

    Args:
        global_seed (int): Global seed
        key (str): Item key, e.g. an utterance id

    Returns:
        int: 63-bit seed, stable across processes and Python versions
    """
    digest = hashlib.sha256(f"{int(global_seed)}:{key}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def make_rng(seed) -> np.random.Generator:
    """ Build a numpy Generator from a seed or pass a Generator through

    Args:
        seed (int, np.random.Generator or None): Seed

    Returns:
        np.random.Generator: Random generator
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def check_finite(array: np.ndarray, what: str) -> np.ndarray:
    """ Raise if an array holds NaN or Inf

    Args:
        array (np.ndarray): Array to check
        what (str): Name used in the error message

    Returns:
        np.ndarray: The same array

    Raises:
        NonFiniteError: If any value is not finite
    """
    if not np.all(np.isfinite(array)):
        bad = int(np.size(array) - np.count_nonzero(np.isfinite(array)))
        raise NonFiniteError(f"{what}: {bad} non-finite value(s)")
    return array


def format_float(value: float) -> str:
    """ Format a float so that parsing it back returns the same value

    Args:
        value (float): Value

    Returns:
        str: Shortest round-trip representation
    """
    return repr(float(value))
