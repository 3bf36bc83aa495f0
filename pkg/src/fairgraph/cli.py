"""``fairgraph`` command-line entry point.

Usage::

    fairgraph <command> [--config FILE] [--seed N] [--out DIR] [--key=value ...]

``--key=value`` overrides use dotted paths into the config (``--train.alpha=0.3``,
``--synth.n=500``, ``--sweep.grid=[0,0.15]``). Values are parsed as JSON when
possible and kept as strings otherwise. ``--seed`` replaces the seed list with
a single seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .experiments import COMMANDS, merge_config, resolve_config

__all__ = ["main", "parse_overrides", "read_config"]


def _value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        if "," in text:
            return [_value(t) for t in text.split(",")]
        return text


def _set(cfg: dict, dotted: str, value):
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ValueError(f"cannot set {dotted!r}: {k!r} is not a section")
    node[keys[-1]] = value


def parse_overrides(tokens: list[str]) -> dict:
    """Turn ``--a.b=1`` / ``--a.b 1`` tokens into a nested dict."""
    out: dict = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise ValueError(f"unexpected argument {tok!r}")
        body = tok[2:]
        if "=" in body:
            key, text = body.split("=", 1)
        elif i + 1 < len(tokens) and not tokens[i + 1].startswith("--"):
            key, text = body, tokens[i + 1]
            i += 1
        else:
            key, text = body, "true"
        _set(out, key.replace("-", "_"), _value(text))
        i += 1
    return out


def read_config(path) -> dict:
    """JSON file, or ``key = value`` lines with dotted keys (``#`` comments)."""
    text = Path(path).read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError:
        cfg = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, val = (p.strip() for p in line.split("=", 1))
            _set(cfg, key, _value(val))
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: config must be a mapping")
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fairgraph", description="Fair node classification experiments.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path, help="JSON or key=value config file")
    p.add_argument("--seed", type=int, help="run with this single seed")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    try:
        cfg = read_config(args.config) if args.config else {}
        extra = parse_overrides(rest)
    except ValueError as exc:
        parser.error(str(exc))
    cfg.pop("command", None)
    cfg = merge_config(cfg, extra)
    if args.seed is not None:
        cfg["seeds"] = [args.seed]
    base = args.config.parent if args.config else None
    resolved = resolve_config(cfg, args.command, base_dir=base)
    result = COMMANDS[args.command](resolved, args.out)
    summary = {"command": args.command, "out": str(args.out)}
    if isinstance(result, dict):
        summary["metrics"] = result
    elif isinstance(result, list):
        summary["rows"] = len(result)
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
