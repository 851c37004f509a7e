"""
Enumeration engine: schedules (prime x panel) transfer-matrix jobs on a
thread pool and hands the residues to the assembly layer.
"""

import concurrent.futures
import os
import time
from pathlib import Path
from threading import Lock
from typing import Dict, List, Optional, Tuple

import numpy as np
import yaml
from pydantic import BaseModel, Field, field_validator

from gerrymander.errors import ContractViolation, ResourceRefusal
from gerrymander.lattice import assemble
from gerrymander.lattice.checkpoint import CheckpointStore
from gerrymander.lattice.modarith import PrimeSet
from gerrymander.lattice.transfer import (
    add_polys,
    estimate_bytes,
    panel_12_run,
    panel_34_run,
    run_panel,
)

CONFIG_DIR = Path(os.path.dirname(os.path.abspath(__file__))) / "config"

SEQUENCE_KINDS = ("gerrymander", "generalised", "partitions")


class EngineSettings(BaseModel):
    threads: int = 1
    memory_budget_mb: float = 4096
    extra_primes: int = 1
    checkpoint_dir: Optional[str] = None
    oracle_threads: int = 1
    allow_large_oracle: bool = False

    @field_validator("threads", "oracle_threads")
    @classmethod
    def _positive(cls, value):
        if value < 1:
            raise ValueError("thread counts must be >= 1")
        return value

    @property
    def memory_budget_bytes(self) -> int:
        return int(self.memory_budget_mb * 2**20)


class AnalysisSettings(BaseModel):
    lam: float
    lam_uncertainty: float
    b: Optional[float] = None
    c: Optional[float] = None
    g: Optional[float] = None
    window: int = 5
    lattice_step: int = 2
    prediction_count: int = 20
    min_digits: float = 5
    mad_cut: float = 3.0
    orders: List[int] = Field(default_factory=lambda: [1, 2, 3])
    coefficient_window: int = 10
    inhomogeneous: List[int] = Field(default_factory=lambda: [-1, 0, 1])
    margin: float = 0.01
    z_score: float = 3.0


def _read_yaml(name: str) -> dict:
    with open(CONFIG_DIR / name, "r") as f:
        return yaml.safe_load(f) or {}


def load_analysis_settings(**overrides) -> AnalysisSettings:
    """analysis.yaml flattened into AnalysisSettings; non-None overrides win."""
    raw = _read_yaml("analysis.yaml")
    growth, ratio = raw.get("growth", {}), raw.get("ratio", {})
    prediction, defects = raw.get("prediction", {}), raw.get("defects", {})
    values = {
        "lam": growth.get("lambda"), "lam_uncertainty": growth.get("lambda_uncertainty"),
        "b": growth.get("b"), "c": growth.get("c"), "g": growth.get("g"),
        "window": ratio.get("window", 5), "lattice_step": ratio.get("lattice_step", 2),
        "prediction_count": prediction.get("count", 20), "min_digits": prediction.get("min_digits", 5),
        "mad_cut": prediction.get("mad_cut", 3.0), "orders": prediction.get("orders", [1, 2, 3]),
        "coefficient_window": prediction.get("coefficient_window", 10),
        "inhomogeneous": prediction.get("inhomogeneous", [-1, 0, 1]),
        "margin": defects.get("margin", 0.01), "z_score": defects.get("z_score", 3.0),
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    return AnalysisSettings(**values)


class EnumerationEngine:
    """
    Runs both panel runs for every prime of a plan, concurrently.

    The engine's residues() method has the runner contract of the assembly
    layer, so every assemble operation can be driven through it.
    """

    def __init__(self, threads=None, memory_budget_mb=None, checkpoint_dir=None, verbose=True):
        """
        Initialize the engine.

        Args:
            threads: worker threads (GERRYMANDER_THREADS wins over this)
            memory_budget_mb: table budget (GERRYMANDER_MEMORY_BUDGET_MB wins over this)
            checkpoint_dir: directory for column checkpoints, or None
            verbose: print per-job progress
        """
        self.verbose = verbose
        self.results_lock = Lock()
        self._load_configuration()
        self.settings = self._resolve(threads, memory_budget_mb, checkpoint_dir)
        self.primes_used: Dict[Tuple[int, bool], PrimeSet] = {}

    def _load_configuration(self):
        """Load YAML configuration for enumeration and oracle defaults."""
        self.engine_config = _read_yaml("engine.yaml")
        if self.verbose:
            print("✅ Configuration loaded from YAML files")

    def _resolve(self, threads, memory_budget_mb, checkpoint_dir) -> EngineSettings:
        enumeration = self.engine_config.get("enumeration", {})
        oracle = self.engine_config.get("oracle", {})
        values = {
            "threads": enumeration.get("threads", 1),
            "memory_budget_mb": enumeration.get("memory_budget_mb", 4096),
            "extra_primes": enumeration.get("extra_primes", 1),
            "checkpoint_dir": enumeration.get("checkpoint_dir"),
            "oracle_threads": oracle.get("threads", 1),
            "allow_large_oracle": oracle.get("allow_large", False),
        }
        flags = {"threads": threads, "memory_budget_mb": memory_budget_mb, "checkpoint_dir": checkpoint_dir}
        values.update({k: v for k, v in flags.items() if v is not None})
        if os.environ.get("GERRYMANDER_THREADS"):
            values["threads"] = int(os.environ["GERRYMANDER_THREADS"])
        if os.environ.get("GERRYMANDER_MEMORY_BUDGET_MB"):
            values["memory_budget_mb"] = float(os.environ["GERRYMANDER_MEMORY_BUDGET_MB"])
        if checkpoint_dir is None and os.environ.get("GERRYMANDER_CHECKPOINT_DIR"):
            values["checkpoint_dir"] = os.environ["GERRYMANDER_CHECKPOINT_DIR"]
        return EngineSettings(**values)

    def required_bytes(self, side: int, scalar: bool) -> int:
        """Peak table memory with every worker holding its largest run."""
        if side < 2:
            return 0
        runs = [panel_12_run(side, 2, scalar)]
        if side >= 3:
            runs.append(panel_34_run(side, 2, scalar))
        largest = max(estimate_bytes(run.width, run.capacity) for run in runs)
        return largest * self.settings.threads

    def check_budget(self, side: int, scalar: bool) -> None:
        required = self.required_bytes(side, scalar)
        if required > self.settings.memory_budget_bytes:
            raise ResourceRefusal(required, self.settings.memory_budget_bytes)

    def _run_job(self, side: int, prime: int, panel: str, scalar: bool) -> np.ndarray:
        if panel == "panel_12":
            if side < 2:
                return np.zeros(1, dtype=np.int64)
            run = panel_12_run(side, prime, scalar)
        else:
            if side < 3:
                return np.zeros(1, dtype=np.int64)
            run = panel_34_run(side, prime, scalar)
        store = CheckpointStore(self.settings.checkpoint_dir) if self.settings.checkpoint_dir else None
        started = time.time()
        result = run_panel(run, store, verbose=False)
        if self.verbose:
            print(f"🔄 {panel} L={side} p={prime} done in {time.time() - started:.2f}s")
        return result

    def residues(self, side: int, primes: PrimeSet, scalar: bool) -> Dict[int, np.ndarray]:
        """Residue polynomial of the panel total for every prime; same contract as assemble.sequential_residues."""
        self.check_budget(side, scalar)
        self.primes_used[(side, scalar)] = primes
        jobs = [(p, panel) for p in primes.primes for panel in ("panel_12", "panel_34")]
        results: Dict[Tuple[int, str], np.ndarray] = {}
        if self.verbose:
            print(f"🚀 L={side} {'scalar' if scalar else 'polynomial'}: {len(jobs)} jobs on "
                  f"{self.settings.threads} thread(s)")
        with concurrent.futures.ThreadPoolExecutor(max_workers=min(self.settings.threads, len(jobs))) as executor:
            future_to_job = {executor.submit(self._run_job, side, p, panel, scalar): (p, panel) for p, panel in jobs}
            for future in concurrent.futures.as_completed(future_to_job):
                job = future_to_job[future]
                try:
                    result = future.result()
                except Exception as e:
                    print(f"❌ Exception in job {job[1]} p={job[0]}: {str(e)}")
                    raise
                with self.results_lock:
                    results[job] = result
        return {p: add_polys(results[(p, "panel_12")], results[(p, "panel_34")], p) for p in sorted(primes.primes)}

    def _plan(self, side: int, scalar: bool) -> PrimeSet:
        return assemble.prime_plan(side, scalar, extra=self.settings.extra_primes)

    def panel_total(self, side: int) -> assemble.PanelPolynomial:
        return assemble.panel_total(side, self.residues, self._plan(side, False) if side >= 2 else None)

    def polynomial(self, side: int) -> assemble.GerrymanderPolynomial:
        return assemble.fold_panel(self.panel_total(side))

    def partition_count(self, side: int, primes: Optional[PrimeSet] = None) -> int:
        if side < 2:
            return 0
        return assemble.partition_count(side, self.residues, primes or self._plan(side, True))

    def generalised(self, side: int) -> int:
        return self.polynomial(side).central if side >= 2 else 0

    def gerrymander(self, side: int) -> int:
        return assemble.halve_central(self.generalised(2 * side), 2 * side)

    def sequence(self, kind: str, max_side: int) -> List[Tuple[int, int]]:
        """(L, a(L)) for L = 1..max_side."""
        if kind not in SEQUENCE_KINDS:
            raise ContractViolation(f"unknown sequence kind {kind!r}; expected one of {SEQUENCE_KINDS}")
        compute = {"gerrymander": self.gerrymander, "generalised": self.generalised,
                   "partitions": self.partition_count}[kind]
        terms = []
        for side in range(1, max_side + 1):
            terms.append((side, compute(side)))
            if self.verbose:
                print(f"✅ {kind} L={side}: {terms[-1][1]}")
        return terms
