"""Artifact paths, provenance blocks, and byte-stable CSV I/O.

Every output embeds a provenance comment line carrying the config hash,
dataset hash and tool version, so downstream tables are traceable and any
config change is visible in the bytes.  Floats are written with repr for
lossless round-trips.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import clpd
from clpd.errors import MissingArtifactError


def provenance_block(config_hash: str, dataset_hash: str | None) -> dict:
    return {
        "config": config_hash,
        "dataset": dataset_hash or "",
        "tool": f"clpd-{clpd.__version__}",
    }


def provenance_line(prov: dict) -> str:
    return "# provenance " + json.dumps(prov, sort_keys=True, separators=(",", ":"))


def format_cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header, rows, prov: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write(provenance_line(prov) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_cell(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


def read_csv(path):
    """Returns (provenance dict | None, header, rows as list of dicts)."""
    path = Path(path)
    prov = None
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if first.startswith("# provenance "):
            prov = json.loads(first[len("# provenance ") :])
            rest = fh
        else:
            rest = io.StringIO(first + fh.read())
        reader = csv.reader(rest)
        header = next(reader)
        rows = [dict(zip(header, row)) for row in reader]
    return prov, header, rows


class Layout:
    """Canonical artifact locations under the experiment output directory."""

    def __init__(self, out_dir):
        self.root = Path(out_dir)

    def dataset_file(self, split: str) -> Path:
        return self.root / "dataset" / f"{split}.jsonl"

    def corpus_file(self, filename: str) -> Path:
        return self.root / "corpus" / filename

    def curriculum_file(self) -> Path:
        return self.root / "curriculum.jsonl"

    def teachers_file(self) -> Path:
        return self.root / "teachers.csv"

    def run_file(self, label: str, seed: int) -> Path:
        return self.root / "runs" / f"{label}_s{seed}.csv"

    def report_file(self) -> Path:
        return self.root / "report.csv"

    def sweep_file(self) -> Path:
        return self.root / "sweep.csv"

    def sweep_raw_file(self) -> Path:
        return self.root / "sweep_raw.csv"

    def sweep_svg(self) -> Path:
        return self.root / "sweep.svg"

    def table1_file(self) -> Path:
        return self.root / "table1.csv"

    def table1_svg(self) -> Path:
        return self.root / "table1.svg"

    def require(self, path: Path, needed_by: str, produced_by: str) -> Path:
        if not path.exists():
            raise MissingArtifactError(
                f"{needed_by}: missing {path}; run `clpd {produced_by}` first"
            )
        return path
