#!/usr/bin/env python3
"""Validate photonstat JSON outputs against the schemas in schemas/.

usage: validate_json.py SCHEMA FILE [FILE ...]

SCHEMA is a name such as g2_summary (resolved to schemas/g2_summary.schema.json).
A .phst FILE is checked through its embedded header metadata.
Exit status 0 when every file validates, 1 otherwise.
"""
import json
import pathlib
import struct
import sys

import jsonschema

SCHEMAS = pathlib.Path(__file__).resolve().parent.parent / "schemas"
# magic(4) version(2) sync_period(8) resolution(4) channels(1) record_count(8)
META_LEN_OFFSET = 27


def load(path):
    p = pathlib.Path(path)
    if p.suffix == ".phst":
        raw = p.read_bytes()
        (n,) = struct.unpack_from("<I", raw, META_LEN_OFFSET)
        start = META_LEN_OFFSET + 4
        return json.loads(raw[start:start + n])
    return json.loads(p.read_text())


def main(argv):
    if len(argv) < 3:
        print(__doc__.strip(), file=sys.stderr)
        return 2
    schema = json.loads((SCHEMAS / f"{argv[1]}.schema.json").read_text())
    validator = jsonschema.Draft202012Validator(schema)
    failed = 0
    for path in argv[2:]:
        errors = sorted(validator.iter_errors(load(path)), key=lambda e: list(e.path))
        for e in errors:
            loc = "/".join(str(x) for x in e.path) or "<root>"
            print(f"{path}: {loc}: {e.message}", file=sys.stderr)
        failed += bool(errors)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
