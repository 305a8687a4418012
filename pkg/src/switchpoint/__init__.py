import configparser
import os
import sys
from pathlib import Path

__version__ = "0.1.0"


class SingletonPath:
    """Resolve the application path and the default run configuration."""

    def __init__(self):
        self._application_path = None

    @property
    def application_path(self) -> Path:
        """Get the application path."""

        if self._application_path is None:

            if getattr(sys, "frozen", False):
                self._application_path = Path(sys.executable).parent

            else:
                self._application_path = Path(__file__).resolve().parents[2]

        return self._application_path

    @property
    def config_file(self) -> Path:
        """Get the config file path. SWITCHPOINT_CONFIG overrides the shipped preset.

        Read on every access so that the variable can change between runs; the
        caller reports a missing file.
        """
        override = os.getenv("SWITCHPOINT_CONFIG")
        if override:
            return Path(override)
        return self.application_path / "assets" / "config.ini"


configuration = SingletonPath()


def read_config(file) -> configparser.ConfigParser:
    """Read config file. Missing files yield an empty parser, validation reports it."""
    config = configparser.ConfigParser()
    config.read(file)
    return config
