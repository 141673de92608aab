import logging
import os
from typing import Any, Dict, Iterable, List

import numpy as np
import pandas as pd

from .constants import ENCODING, MANIFEST_SUFFIX, PARAMS_SUFFIX, TEMPFILE_SUFFIX
from .exceptions import DataError
from .utils import CsvSerializer, dumps_key_values, loads_key_values, parse_ints


class Storage:
    """Output directory of a command.

    All writes go through a temporary file and a rename, existing files are
    overwritten, so rerunning a command replaces its outputs in place.
    """

    def __init__(self, location: str = None):
        self.__location = os.path.abspath(location or ".")

    @property
    def _location(self) -> str:
        return self.__location

    def __str__(self) -> str:
        return self._location

    def path(self, name: str) -> str:
        return os.path.join(self._location, *name.split("/"))

    def exists(self, name: str) -> bool:
        return os.path.isfile(self.path(name))

    def sub(self, name: str) -> "Storage":
        return Storage(self.path(name))

    def _bytes_write(self, name: str, data: bytes) -> None:
        filepath = self.path(name)
        filepath_temp = filepath + TEMPFILE_SUFFIX
        os.makedirs(os.path.dirname(filepath), exist_ok=True)

        logging.debug("Writing %s", filepath_temp)
        with open(filepath_temp, "wb") as file:
            file.write(data)

        logging.debug("Renaming %s => %s", filepath_temp, filepath)
        os.replace(filepath_temp, filepath)

    def _bytes_read(self, name: str) -> bytes:
        filepath = self.path(name)
        if not os.path.isfile(filepath):
            raise DataError(f"missing file: {filepath}")
        logging.debug("Reading %s", filepath)
        with open(filepath, "rb") as file:
            return file.read()

    def write_text(self, name: str, text: str) -> str:
        self._bytes_write(name, text.encode(ENCODING))
        return self.path(name)

    def read_text(self, name: str) -> str:
        return self._bytes_read(name).decode(ENCODING)

    def write_csv(self, name: str, data: Any, columns: List[str] = None) -> str:
        self._bytes_write(name, CsvSerializer().dumps(data, columns=columns))
        return self.path(name)

    def read_csv(self, name: str, required_columns: Iterable[str] = ()) -> pd.DataFrame:
        df = CsvSerializer().loads(self._bytes_read(name))
        for column in required_columns:
            if column not in df.columns:
                raise DataError(f"{self.path(name)}: missing column {column!r}")
        return df

    def write_key_values(self, name: str, data: Dict[str, Any]) -> str:
        return self.write_text(name, dumps_key_values(data))

    def read_key_values(self, name: str) -> Dict[str, str]:
        return loads_key_values(self.read_text(name))

    def find(self, filename: str) -> List[str]:
        """Relative directories (sorted) below this location containing ``filename``."""
        result = []
        for rt, _ds, filenames in os.walk(self._location):
            if filename in filenames:
                rel = os.path.relpath(rt, self._location).replace("\\", "/")
                result.append("" if rel == "." else rel)
        return sorted(result)


def save_checkpoint(
    storage: Storage,
    name: str,
    tensors: Dict[str, np.ndarray],
    manifest: Dict[str, Any],
) -> None:
    """Plain text tensor dump plus a key=value manifest.

    ``<name>.params.txt`` holds one line per tensor: ``name rows cols values...``
    (vectors are stored with ``cols = 0``), values in ``%.17g`` so they
    read back bit-identical.
    """
    lines = []
    for key, value in tensors.items():
        arr = np.asarray(value, dtype=np.float64)
        rows, cols = (arr.shape[0], 0) if arr.ndim == 1 else arr.shape
        values = " ".join(format(v, ".17g") for v in arr.ravel())
        lines.append(f"{key} {rows} {cols} {values}".rstrip() + "\n")
    storage.write_text(name + PARAMS_SUFFIX, "".join(lines))

    manifest = dict(manifest)
    manifest["tensors"] = list(tensors)
    storage.write_key_values(name + MANIFEST_SUFFIX, manifest)


def load_checkpoint(storage: Storage, name: str):
    """Inverse of :func:`save_checkpoint`: ``(tensors, manifest)``."""
    manifest = storage.read_key_values(name + MANIFEST_SUFFIX)
    tensors = {}
    for lineno, line in enumerate(storage.read_text(name + PARAMS_SUFFIX).splitlines()):
        parts = line.split()
        try:
            key, rows, cols = parts[0], int(parts[1]), int(parts[2])
            values = np.array([float(v) for v in parts[3:]], dtype=np.float64)
            shape = (rows,) if cols == 0 else (rows, cols)
            tensors[key] = values.reshape(shape)
        except (IndexError, ValueError) as exc:
            raise DataError(
                f"{storage.path(name + PARAMS_SUFFIX)}:{lineno + 1}: {exc}"
            ) from exc
    if "layer_sizes" in manifest:
        manifest["layer_sizes"] = parse_ints(manifest["layer_sizes"])
    return tensors, manifest
