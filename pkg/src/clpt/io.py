"""CSV persistence and the output manifest.

Numbers are written with 17 significant digits so files round-trip
exactly and hashes are meaningful. An :class:`OutputSet` stages every file
in memory and commits them together with ``manifest.json``; committing
over an existing file with different content is refused.
"""
import csv
import hashlib
import io
import json
import math
import os
from pathlib import Path

import numpy as np

MANIFEST = "manifest.json"


class OutputConflict(OSError):
    pass


def fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(value)


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header is not None:
        w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows):
    Path(path).write_text(csv_text(header, rows))


def read_csv(path):
    """Header and rows; numeric cells converted to float."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))

    def conv(x):
        try:
            return float(x)
        except ValueError:
            return x

    return rows[0], [[conv(x) for x in r] for r in rows[1:]]


def run_csv_text(meta, iterations, infidelities, samples):
    """One LMC run: a metadata block (problem, T, L, beta, sigma, seed)
    followed by one row per stored protocol."""
    L = samples.shape[1]
    head = csv_text(["problem", "T", "L", "beta", "sigma", "seed"],
                    [[meta["problem"], meta["T"], L, meta["beta"], meta["sigma"], meta["seed"]]])
    body = csv_text(["iteration", "I"] + [f"s_{i + 1}" for i in range(L)],
                    [[int(k), e, *s] for k, e, s in zip(iterations, infidelities, samples)])
    return head + body


def read_run_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    meta = dict(zip(rows[0], rows[1]))
    for k in ("T", "beta", "sigma"):
        meta[k] = float(meta[k])
    for k in ("L", "seed"):
        meta[k] = int(meta[k])
    data = np.array(rows[3:], dtype=float).reshape(-1, meta["L"] + 2)
    return meta, data[:, 0].astype(int), data[:, 1], data[:, 2:]


def sha256(data):
    return hashlib.sha256(data).hexdigest()


class OutputSet:
    """Files of one experiment, written together with a manifest."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.files = {}

    def add_text(self, name, text):
        if name in self.files:
            raise ValueError(f"duplicate output {name}")
        self.files[name] = text.encode()

    def add_csv(self, name, header, rows):
        self.add_text(name, csv_text(header, rows))

    def conflicts(self):
        """Existing files whose content differs from the staged one."""
        bad = []
        for name, data in self.files.items():
            p = self.out_dir / name
            if p.exists() and p.read_bytes() != data:
                bad.append(name)
        return bad

    def manifest(self, config_echo):
        return {
            "config": config_echo,
            "files": {name: sha256(data) for name, data in sorted(self.files.items())},
        }

    def commit(self, config_echo):
        """Write all files; refuse if any would silently change."""
        man = json.dumps(self.manifest(config_echo), indent=2, sort_keys=True, default=fmt) + "\n"
        bad = self.conflicts()
        mpath = self.out_dir / MANIFEST
        if mpath.exists() and mpath.read_text() != man:
            bad.append(MANIFEST)
        if bad:
            raise OutputConflict("refusing to overwrite differing outputs: " + ", ".join(sorted(bad)))
        self.out_dir.mkdir(parents=True, exist_ok=True)
        for name, data in sorted(self.files.items()):
            p = self.out_dir / name
            p.parent.mkdir(parents=True, exist_ok=True)
            tmp = p.with_name(p.name + ".tmp")
            tmp.write_bytes(data)
            os.replace(tmp, p)
        mpath.write_text(man)
        return mpath


def verify_manifest(out_dir):
    """Names of files whose hash no longer matches the manifest."""
    out_dir = Path(out_dir)
    man = json.loads((out_dir / MANIFEST).read_text())
    return [n for n, h in man["files"].items()
            if not (out_dir / n).exists() or sha256((out_dir / n).read_bytes()) != h]
