"""Length parsing helpers.

All internal lengths are micrometres.  Config files may give lengths as bare
numbers (already um) or as strings with an explicit unit suffix: "355 nm",
"0.66 mm", "16 um", "16 µm", "0.1 m".
"""

from __future__ import annotations

import re

from .errors import ParameterError

_TO_UM = {
    "nm": 1e-3,
    "um": 1.0,
    "µm": 1.0,
    "μm": 1.0,  # greek mu, distinct codepoint from micro sign
    "mm": 1e3,
    "cm": 1e4,
    "m": 1e6,
}

_NUM_UNIT = re.compile(r"^\s*([+-]?\d+(?:\.\d*)?(?:[eE][+-]?\d+)?)\s*([a-zµμ]+)\s*$")


def parse_length(value, field: str = "length") -> float:
    """Return *value* in micrometres.

    Bare ints/floats are taken to be um already; strings need a unit suffix.
    """
    if isinstance(value, bool):
        raise ParameterError(f"{field}: expected a length, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        m = _NUM_UNIT.match(value)
        if not m:
            raise ParameterError(
                f"{field}: cannot parse {value!r} (expected e.g. '355 nm', '0.66 mm', '16 um')"
            )
        num, unit = m.groups()
        try:
            scale = _TO_UM[unit]
        except KeyError:
            raise ParameterError(f"{field}: unknown length unit {unit!r} in {value!r}") from None
        return float(num) * scale
    raise ParameterError(f"{field}: expected number or unit string, got {type(value).__name__}")
