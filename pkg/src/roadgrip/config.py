"""Plain-text key = value configuration files.

One assignment per line, ``#`` starts a comment. Values are coerced in order:
bool, int, float, ``start:stop:step`` numeric range (inclusive of stop within
half a step), comma-separated list of the above, else the bare string. Dotted
keys nest, so ``gbt.max_depth = 6`` lands in ``cfg["gbt"]["max_depth"]``.
"""

from __future__ import annotations


class ConfigError(ValueError):
    pass


def _coerce_scalar(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        pass
    if t.count(":") == 2:
        try:
            start, stop, step = (float(p) for p in t.split(":"))
        except ValueError:
            return t
        if step <= 0 or stop < start:
            # not an ascending range; leave it to the consumer (for example
            # road segment triples use the same colon syntax)
            return t
        vals = []
        v = start
        while v <= stop + step * 0.5:
            vals.append(round(v, 10))
            v += step
        return vals
    return t


def _coerce(text: str):
    if "," in text:
        return [_coerce_scalar(p) for p in text.split(",") if p.strip()]
    return _coerce_scalar(text)


def parse_kv_text(text: str) -> dict:
    """Parse key = value text into a (possibly nested) dict."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"line {lineno}: key {key!r} clashes with a scalar")
        node[parts[-1]] = _coerce(value)
    return out


def parse_kv_file(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_kv_text(fh.read())
