"""Exception hierarchy shared across the package."""


class DPPPError(Exception):
    """Base class for all errors raised by dppp."""


class KeyGenerationError(DPPPError, ValueError):
    """Invalid key size or threshold configuration."""


class PlaintextRangeError(DPPPError, ValueError):
    """Plaintext outside [0, n)."""


class InsufficientShares(DPPPError):
    """Fewer than t partial decryptions were supplied to combine."""


class DuplicateShare(DPPPError):
    """Two partial decryptions carry the same party index."""


class EncodingOverflow(DPPPError):
    """A signed plaintext does not fit the centered range (-n/2, n/2)."""


class AbortInsufficientParties(DPPPError):
    """Too many teachers dropped out for threshold decryption to proceed."""


class CalibrationError(DPPPError, ValueError):
    """Noise calibration could not be carried out for the given parameters."""


class DatasetError(DPPPError, ValueError):
    """Malformed or inconsistent dataset input."""
