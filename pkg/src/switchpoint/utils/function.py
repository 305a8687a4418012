import hashlib
import json
import math
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd
from loguru import logger

from switchpoint import __version__

FLOAT_FORMAT = "%.6f"


def checksum(
    filename, hash_factory=hashlib.blake2b, chunk_num_blocks=128, digest_size=32
):
    """Create hash based on path, or bytes. Hashing by blocks keeps large demand series out of memory."""

    success = True

    if hash_factory == hashlib.blake2b:
        h = hashlib.blake2b(digest_size=digest_size)
    else:
        h = hash_factory()

    if isinstance(filename, (str, Path)):
        with open(filename, "rb") as f:
            for chunk in iter(lambda: f.read(chunk_num_blocks * h.block_size), b""):
                h.update(chunk)
    elif isinstance(filename, bytes):
        h.update(filename)
    else:
        success = False
        logger.error("Input must be either bytes or a path")

    return h.hexdigest() if success else None


def text_to_hash(text: Union[str, list]) -> str:
    """SHA-256 of a string, or of the concatenation of a list of strings."""

    if isinstance(text, list):
        text = "".join(text)

    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _to_builtin(value):
    """json ``default`` hook for numpy scalars and arrays."""
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def _finite_or_none(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _finite_or_none(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite_or_none(v) for v in value]
    return value


def write_json(data, file_path, metadata: dict = None):
    """Write data to a JSON file. Non-finite floats become null; ``metadata`` is stored under ``_meta``."""
    data = json.loads(json.dumps(data, default=_to_builtin))
    if metadata is not None:
        data = {"_meta": metadata, **data}
    with open(file_path, "w") as json_file:
        json.dump(_finite_or_none(data), json_file, indent=4)
    logger.info(f"Wrote {file_path}")


def run_metadata(digest: str, seed=None, **extra) -> dict:
    """Header fields embedded in every output file."""
    return {"version": __version__, "config_digest": digest, "seed": seed, **extra}


def write_csv(frame: pd.DataFrame, file_path, metadata: dict):
    """Write a frame as CSV with ``#`` metadata lines and six-decimal floats."""
    with open(file_path, "w", newline="") as f:
        for key, value in metadata.items():
            f.write(f"# {key}: {value}\n")
        frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info(f"Wrote {file_path} ({len(frame)} rows)")
