import re

_PART = re.compile(r"(\d+)([hms])")
_FACTOR = {"h": 3600, "m": 60, "s": 1}


def parse_duration(text):
    """Seconds in a duration such as '1h30m' or '45s'."""
    parts = _PART.findall(text.strip())
    if not parts:
        raise ValueError(f"bad duration: {text!r}")
    return sum(int(n) * _FACTOR[u] for n, u in parts)
