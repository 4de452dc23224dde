"""Command line entry point: ``torus-sns <kind> [--config FILE] [--key value | --key=value ...]``.

Other subcommands: ``list``, ``describe KIND``, ``verify RUN_DIR``.
Exit codes: 0 success, 1 invalid configuration, 2 numeric abort, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import DomainError
from .harness import KINDS, ConfigError, describe, list_experiments, parse_config, parse_override, run_experiment, verify_run

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


def _split_overrides(kind: str, rest: list) -> dict:
    out = {}
    i = 0
    while i < len(rest):
        tok = rest[i]
        if not tok.startswith("--") or tok == "--":
            raise ConfigError([(tok, "expected --key value or --key=value")])
        if "=" in tok:
            key, val = tok[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(rest):
                raise ConfigError([(tok[2:], "missing value")])
            key, val = tok[2:], rest[i + 1]
            i += 2
        k, v = parse_override(kind, key, val)
        out[k] = v
    return out


def _run(kind: str, argv: list) -> int:
    ap = argparse.ArgumentParser(prog=f"torus-sns {kind}", add_help=True,
                                 description=f"Run a {kind} experiment. Any parameter of "
                                             f"'torus-sns describe {kind}' can be passed as --key value.")
    ap.add_argument("--config", help="JSON configuration file")
    ap.add_argument("--print-config", action="store_true", help="validate and print the resolved config, do not run")
    args, rest = ap.parse_known_args(argv)
    try:
        text = "{}"
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        doc = json.loads(text) if text.strip() else {}
        if isinstance(doc, dict):
            if doc.get("kind", kind) != kind:
                raise ConfigError([("kind", f"config is for {doc.get('kind')!r}, not {kind!r}")])
            doc["kind"] = kind
        overrides = _split_overrides(kind, rest)
        cfg = parse_config(json.dumps(doc), overrides)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    except json.JSONDecodeError as exc:
        print(f"error: {args.config}: not valid JSON: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        for key, reason in exc.diagnostics:
            print(f"error: {key}: {reason}", file=sys.stderr)
        return EXIT_CONFIG
    if args.print_config:
        from .harness import serialize

        sys.stdout.write(serialize(cfg))
        return EXIT_OK
    try:
        man = run_experiment(cfg)
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(man.directory)
    for name, ok in man.checks.items():
        print(f"  {'pass' if ok else 'FAIL' if ok is False else 'n/a '}  {name}")
    if man.status == "numeric-abort":
        print(f"numeric abort: {man.message}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    usage = (
        "usage: torus-sns {" + ",".join(KINDS) + "} [--config FILE] [--key value ...]\n"
        "       torus-sns list | describe KIND | verify RUN_DIR"
    )
    if not argv or argv[0] in ("-h", "--help"):
        print(usage)
        return EXIT_OK if argv else EXIT_CONFIG
    cmd, rest = argv[0], argv[1:]
    if cmd == "list":
        print(list_experiments())
        return EXIT_OK
    if cmd == "describe":
        if len(rest) != 1:
            print("usage: torus-sns describe KIND", file=sys.stderr)
            return EXIT_CONFIG
        try:
            print(describe(rest[0]))
        except KeyError as exc:
            print(f"error: {exc.args[0]}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK
    if cmd == "verify":
        if len(rest) != 1:
            print("usage: torus-sns verify RUN_DIR", file=sys.stderr)
            return EXIT_CONFIG
        try:
            ok, diff = verify_run(rest[0])
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        except (ConfigError, KeyError, json.JSONDecodeError) as exc:
            print(f"error: invalid manifest: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if ok:
            print("identical")
            return EXIT_OK
        for name, (old, new) in diff.items():
            print(f"differs: {name} {old} -> {new}")
        return EXIT_NUMERIC
    if cmd in KINDS:
        return _run(cmd, rest)
    print(f"error: unknown subcommand {cmd!r}\n{usage}", file=sys.stderr)
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
