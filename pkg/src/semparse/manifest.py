"""Run manifests: enough metadata next to every output to reproduce a run."""

from __future__ import annotations

import hashlib
import json
import sys
import time


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunManifest:
    def __init__(self, command, flags, seed=None):
        self.command = command
        self.flags = {k: v for k, v in dict(flags).items()
                      if not callable(v) and k != "func"}
        self.seed = seed
        self.inputs = {}
        self.outputs = []
        self._start = time.perf_counter()

    def add_input(self, path):
        self.inputs[str(path)] = file_digest(path)

    def add_output(self, path):
        self.outputs.append(str(path))

    def write(self, path):
        payload = {
            "command": self.command,
            "flags": self.flags,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "wall_clock_seconds": round(time.perf_counter() - self._start, 3),
            "argv": sys.argv,
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=1, sort_keys=True)
            f.write("\n")
