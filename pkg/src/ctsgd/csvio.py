"""CSV serialization of trajectory records.

Dialect: UTF-8, LF line endings, comma separator, '.' decimal point,
'#'-prefixed metadata lines (sorted by key) before the header.  Floats are
written with 17 significant digits so a read-back reproduces every value
bit-exactly.  No timestamps: two runs of the same configuration produce
byte-identical files.
"""

from __future__ import annotations

import numpy as np

from .records import TrajectoryRecord


def emit_csv(record: TrajectoryRecord, path) -> None:
    lines = []
    for key in sorted(record.metadata):
        lines.append(f"# {key}: {record.metadata[key]}")
    lines.append(",".join(record.columns))
    for row in record.data:
        lines.append(",".join("%.17g" % v for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path) -> TrajectoryRecord:
    metadata = {}
    header = None
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if ":" in body:
                    key, val = body.split(":", 1)
                    metadata[key.strip()] = val.strip()
                continue
            if header is None:
                header = line.split(",")
                continue
            rows.append([float(v) for v in line.split(",")])
    if header is None:
        raise ValueError(f"{path}: no header line found")
    data = np.array(rows) if rows else np.empty((0, len(header)))
    return TrajectoryRecord(columns=header, data=data, metadata=metadata)
