"""Exception types shared across the package.

The CLI maps these onto distinct exit codes (config=2, data=3, runtime=4).
"""


class ConfigError(ValueError):
    """Invalid configuration: bad flag values, malformed config files."""


class DataError(ValueError):
    """Invalid or corrupt dataset / artifact files.

    Where possible the message names the offending file and the offset or
    index at which validation failed.
    """
