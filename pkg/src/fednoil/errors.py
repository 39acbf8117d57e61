"""Exception types shared across the package."""


class FedNoilError(Exception):
    """Base class for all package errors."""


class ConfigError(FedNoilError):
    """Invalid configuration value, unknown key, or violated constraint."""


class ParseError(FedNoilError):
    """Malformed on-disk input (IDX file, run log, config text)."""


class AllocationError(FedNoilError):
    """A partition request cannot be satisfied by the available samples."""


class DivergenceError(FedNoilError):
    """Training produced a non-finite loss or activation."""


class ProtocolError(FedNoilError):
    """Server-side protocol violation (e.g. aggregating an empty client set)."""
