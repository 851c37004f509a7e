import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import pandas as pd
from pydantic import BaseModel, Field

from gerrymander import __version__
from gerrymander.errors import DataFormatError
from gerrymander.lattice.assemble import GerrymanderPolynomial
from gerrymander.series.analysis import SeriesSample

DATA_DIR = Path(os.path.dirname(os.path.abspath(__file__))) / "data"

FIXTURES = {
    "generalised": "A358289.b",
    "gerrymander": "A348456.b",
    "partitions": "A068416.b",
}


class RunManifest(BaseModel):
    """Deterministic description of a result; timings live in the sidecar."""

    command: str
    parameters: Dict[str, Any] = Field(default_factory=dict)
    primes: List[int] = Field(default_factory=list)
    engine_version: str = __version__
    output_checksum: Optional[str] = None
    sidecar: Optional[str] = None


class RunTimings(BaseModel):
    threads: int
    wall_seconds: float
    cpu_seconds: float


def fixture_path(kind: str) -> Path:
    """Path of the bundled b-file for a sequence kind, or of a named file in the data directory."""
    return DATA_DIR / FIXTURES.get(kind, kind)


def checksum(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def read_bfile(path, name: Optional[str] = None) -> SeriesSample:
    """
    Parse an OEIS-style b-file: "n a(n)" per line, '#' comments and blank lines ignored.

    Raises:
        DataFormatError: with the 1-based line number of the first bad line
    """
    path = str(path)
    if not os.path.exists(path):
        raise DataFormatError("file not found", path=path)
    indices, values = [], []
    with open(path, "r") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DataFormatError(f"expected 'n a(n)', got {line!r}", path=path, line=lineno)
            try:
                n, value = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataFormatError(f"non-integer field in {line!r}", path=path, line=lineno)
            if indices and n <= indices[-1]:
                raise DataFormatError(f"index {n} does not increase", path=path, line=lineno)
            indices.append(n)
            values.append(value)
    if not values:
        raise DataFormatError("no terms", path=path)
    return SeriesSample(indices=indices, values=values, name=name or Path(path).stem)


def format_bfile(terms: Iterable[Tuple[int, int]], header: Sequence[str] = ()) -> str:
    lines = [f"# {h}" for h in header]
    lines += [f"{n} {value}" for n, value in terms]
    return "\n".join(lines) + "\n"


def write_text(path, text: str) -> str:
    """Write text and return its checksum."""
    data = text.encode("utf-8")
    with open(path, "wb") as f:
        f.write(data)
    return checksum(data)


def polynomial_document(poly: GerrymanderPolynomial, manifest: RunManifest) -> str:
    """Polynomial JSON: coefficients g_{L,k}, k = 1..L²-1, as decimal strings."""
    document = {"L": poly.side, "coeffs": [str(c) for c in poly.terms], "manifest": manifest.model_dump()}
    return json.dumps(document, indent=2, sort_keys=True) + "\n"


def read_polynomial(path) -> GerrymanderPolynomial:
    path = str(path)
    try:
        with open(path, "r") as f:
            document = json.load(f)
        side = int(document["L"])
        terms = [int(c) for c in document["coeffs"]]
    except FileNotFoundError:
        raise DataFormatError("file not found", path=path)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise DataFormatError(f"not a polynomial document: {e}", path=path)
    return GerrymanderPolynomial(side=side, coeffs=[0] + terms + [0])


def report_document(data: Dict[str, Any]) -> str:
    return json.dumps(data, indent=2, sort_keys=True, default=str) + "\n"


def write_sidecar(output_path, timings: RunTimings) -> str:
    sidecar = f"{output_path}.manifest.json"
    with open(sidecar, "w") as f:
        f.write(json.dumps(timings.model_dump(), indent=2, sort_keys=True) + "\n")
    return sidecar


def trails_frame(trails: Dict[str, List[List]]) -> pd.DataFrame:
    """Long table (trail, n, value) of estimator trails."""
    rows = [{"trail": name, "n": n, "value": value} for name, pairs in trails.items() for n, value in pairs]
    return pd.DataFrame(rows, columns=["trail", "n", "value"])


def export_to_csv(frame: pd.DataFrame, csv_file_path) -> None:
    """
    Export a result table to CSV.

    Args:
        frame: table to write
        csv_file_path: Path to save the CSV file
    """
    if frame.empty:
        print("⚠️ No rows to export to CSV")
        return
    frame.to_csv(csv_file_path, index=False)
    print(f"📊 Results exported as CSV to: {csv_file_path}")


def compare_terms(expected: SeriesSample, terms: Sequence[Tuple[int, int]]) -> Optional[int]:
    """First index whose value differs from the reference, or None when all shared indices agree."""
    reference = expected.lookup()
    for n, value in terms:
        if n in reference and reference[n] != value:
            return n
    return None
