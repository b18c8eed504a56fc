""" Exceptions raised by repcnn_kws.

Every error derives from :class:`RepCNNError` and from the builtin exception
a caller would otherwise expect, so ``except ValueError`` keeps working.
"""


class RepCNNError(Exception):
    """ Base class for all package errors """


class ShapeError(RepCNNError, ValueError):
    """ Tensor shape or channel mismatch """


class ConfigError(RepCNNError, ValueError):
    """ Invalid configuration value """


class NonFiniteError(RepCNNError, ArithmeticError):
    """ NaN or Inf produced by a forward or backward op """


class WavFormatError(RepCNNError, ValueError):
    """ WAV file is not RIFF PCM 16-bit mono 16 kHz """


class ManifestError(RepCNNError, ValueError):
    """ Bad manifest record """


class ModelFileError(RepCNNError, ValueError):
    """ Corrupt, truncated or incompatible model file """


class FusionError(RepCNNError, ValueError):
    """ Graph cannot be re-parameterized """


class DivergenceError(RepCNNError, RuntimeError):
    """ Training produced a non-finite loss """
