import inspect
import io
import math
from typing import Any, Callable, Dict, Iterable, List, Tuple

import numpy as np
import pandas as pd
import simplejson

from .constants import CSV_LINETERMINATOR, ENCODING, ROUND_HALF_UP_SLACK
from .exceptions import ArgumentError


def get_pandas_version() -> tuple:
    return tuple(int(x) for x in pd.__version__.split(".")[:2])


def round_half_up(value: float) -> int:
    """Round to the nearest integer, halves go up.

    >>> round_half_up(2.5), round_half_up(2.4999), round_half_up(0.5)
    (3, 2, 1)
    """
    return int(math.floor(value + 0.5 + ROUND_HALF_UP_SLACK))


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Seeded generator for one named stream of a run.

    Generators for different streams of the same seed are independent;
    the same ``(seed, *stream)`` always yields the same sequence.
    """
    return np.random.default_rng([int(seed), *[int(s) for s in stream]])


def json_serialize(x):
    if isinstance(x, np.bool_):
        return bool(x)
    elif np.issubdtype(type(x), np.integer):
        return int(x)
    elif np.issubdtype(type(x), np.floating):
        return float(x)
    elif isinstance(x, np.ndarray):
        return x.tolist()
    elif hasattr(x, "as_dict"):
        return x.as_dict()
    elif inspect.isclass(x):
        # classname
        return x.__name__
    else:
        raise NotImplementedError(f"{x.__class__}: {x}")


def json_dumps(*args, default=json_serialize, **kwargs):
    return simplejson.dumps(
        *args,
        **kwargs,
        default=default,
        # nan, inf are serialized as null
        ignore_nan=True,
    )


def format_value(value: Any) -> str:
    """Text form used in key=value files.

    >>> format_value([1, 2, 3]), format_value(True), format_value(0.1)
    ('1,2,3', 'true', '0.1')
    """
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (list, tuple, np.ndarray)):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    if value is None:
        return ""
    return str(value)


def dumps_key_values(data: Dict[str, Any]) -> str:
    """
    >>> print(dumps_key_values({"gamma": 10.0, "counts": [9, 1]}), end="")
    gamma=10.0
    counts=9,1
    """
    return "".join(f"{key}={format_value(value)}\n" for key, value in data.items())


def loads_key_values(text: str) -> Dict[str, str]:
    """Parse key=value lines, values stay strings."""
    result = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ArgumentError(f"not a key=value line: {line!r}")
        result[key.strip()] = value.strip()
    return result


def parse_key_values(key_vals: Iterable[str]) -> Dict[str, str]:
    """cli: list of key=value"""
    result = {}
    for key_value in key_vals:
        key, sep, value = key_value.partition("=")
        if not sep:
            raise ArgumentError(f"expected key=value, got {key_value!r}")
        result[key.strip()] = value.strip()
    return result


def parse_list(value: str, item_type: Callable = str) -> list:
    """
    >>> parse_list("1, 2,3", int)
    [1, 2, 3]
    >>> parse_list("")
    []
    """
    return [item_type(x.strip()) for x in value.split(",") if x.strip()]


def parse_floats(value: str) -> List[float]:
    return parse_list(value, float)


def parse_ints(value: str) -> List[int]:
    return parse_list(value, int)


def mean_std(values: Iterable[float]) -> Tuple[float, float]:
    """Mean and population standard deviation (ddof=0)."""
    arr = np.asarray(list(values), dtype=float)
    if not arr.size:
        return float("nan"), float("nan")
    return float(arr.mean()), float(arr.std(ddof=0))


class CsvSerializer:
    mediatype = "text/csv"
    suffix = ".csv"

    def dumps(
        self,
        data: object,
        encoding=ENCODING,
        sep=",",
        lineterminator=CSV_LINETERMINATOR,
        columns=None,
    ) -> bytes:
        buf = io.BytesIO()
        to_csv_kwargs = {
            "index": False,
            "encoding": encoding,
            "sep": sep,
            "lineterminator": lineterminator,
        }
        if get_pandas_version() < (1, 5):
            to_csv_kwargs["line_terminator"] = to_csv_kwargs.pop("lineterminator")

        pd.DataFrame(data, columns=columns).to_csv(buf, **to_csv_kwargs)
        return buf.getvalue()

    def loads(self, data: bytes, encoding=ENCODING, sep=",", **kwargs) -> pd.DataFrame:
        buf = io.BytesIO(data)
        return pd.read_csv(buf, encoding=encoding, sep=sep, **kwargs)
