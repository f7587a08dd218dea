"""Reference external forecaster: persistence over the wire protocol.

Runnable as ``python -m cmlbench.ref_client``.  Reads line-delimited
JSON records on stdin and answers every predict request by repeating
the last context row ``H`` times.  Serves two purposes: a working
example of the protocol for forecaster authors, and the transparency
fixture for the adapter tests (its results must be bit-identical to
the built-in persistence baseline).
"""

from __future__ import annotations

import json
import sys


def serve(stdin=None, stdout=None) -> int:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    horizon = None
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError:
            print("ref_client: malformed JSON record", file=sys.stderr)
            return 2
        kind = record.get("type")
        if kind == "init":
            horizon = int(record["H"])
            continue
        if kind == "predict":
            if horizon is None:
                print("ref_client: predict before init", file=sys.stderr)
                return 2
            last = record["context"][-1]
            response = {
                "type": "prediction",
                "id": record["id"],
                "values": [last] * horizon,
            }
            stdout.write(json.dumps(response, separators=(",", ":")) + "\n")
            stdout.flush()
            continue
        print(f"ref_client: unknown record type {kind!r}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(serve())
