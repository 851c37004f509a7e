#!/usr/bin/env python
import argparse
import os
import sys
import time
from typing import List, Optional

os.environ.setdefault("OTEL_SDK_DISABLED", "true")

import mpmath
import pandas as pd
from crewai.flow.flow import Flow, listen, start
from mpmath import mp, mpf
from pydantic import BaseModel, Field

try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    print("Warning: python-dotenv not installed. Environment variables from .env will not be loaded.")

from gerrymander.errors import GerrymanderError, UsageError, VerificationMismatch
from gerrymander.lattice.assemble import GerrymanderPolynomial, unimodality_report
from gerrymander.lattice.oracle import brute_partitions
from gerrymander.runner.engine import SEQUENCE_KINDS, EnumerationEngine, load_analysis_settings
from gerrymander.series import analysis, diffapprox
from gerrymander.series.analysis import PRECISION
from gerrymander.utils import (
    RunManifest,
    RunTimings,
    checksum,
    compare_terms,
    export_to_csv,
    fixture_path,
    format_bfile,
    polynomial_document,
    read_bfile,
    report_document,
    trails_frame,
    write_sidecar,
    write_text,
)


class EnumerationState(BaseModel):
    """State model for one enumerate run"""
    size: int = 1
    mode: str = "polynomial"
    output_path: Optional[str] = None
    threads: Optional[int] = None
    memory_budget_mb: Optional[float] = None
    checkpoint_dir: Optional[str] = None
    verbose: bool = False
    primes: List[int] = Field(default_factory=list)
    coeffs: List[str] = Field(default_factory=list)
    value: Optional[str] = None
    document: Optional[str] = None
    unimodal: Optional[bool] = None
    written: bool = False
    error_code: int = 0
    error_message: Optional[str] = None


class EnumerationFlow(Flow[EnumerationState]):
    """Plan, run, assemble and write one enumeration"""

    def _create_initial_state(self) -> EnumerationState:
        return EnumerationState()

    def _fail(self, error: GerrymanderError):
        self.state.error_code = error.exit_code
        self.state.error_message = error.message

    @start()
    def plan_run(self):
        """Resolve settings and check the memory budget"""
        try:
            if self.state.size < 1:
                raise UsageError(f"--size must be >= 1, got {self.state.size}")
            if self.state.mode not in ("polynomial", "scalar"):
                raise UsageError(f"unknown mode {self.state.mode!r}")
            self.engine = EnumerationEngine(threads=self.state.threads, memory_budget_mb=self.state.memory_budget_mb,
                                            checkpoint_dir=self.state.checkpoint_dir, verbose=self.state.verbose)
            self.engine.check_budget(self.state.size, self.state.mode == "scalar")
            return self.state.size
        except GerrymanderError as e:
            self._fail(e)

    @listen(plan_run)
    def run_jobs(self, previous_result):
        """Run every (prime x panel) job"""
        if self.state.error_code:
            return None
        try:
            side = self.state.size
            if self.state.mode == "scalar":
                self.state.value = str(self.engine.partition_count(side))
            else:
                self.poly = self.engine.polynomial(side)
                self.state.coeffs = [str(c) for c in self.poly.terms]
            used = self.engine.primes_used.get((side, self.state.mode == "scalar"))
            self.state.primes = list(used.primes) if used else []
            return side
        except GerrymanderError as e:
            self._fail(e)

    @listen(run_jobs)
    def assemble_result(self, previous_result):
        """Check the observations that come with a polynomial and build the document"""
        if self.state.error_code:
            return None
        manifest = RunManifest(command="enumerate", parameters={"size": self.state.size, "mode": self.state.mode},
                               primes=self.state.primes)
        if self.state.mode == "scalar":
            manifest.output_checksum = checksum(self.state.value.encode())
            document = {"L": self.state.size, "mode": "scalar", "value": self.state.value}
        else:
            report = unimodality_report(self.poly)
            self.state.unimodal = report.unimodal
            if not report.unimodal and self.state.verbose:
                print(f"⚠️ L={self.state.size}: coefficients not unimodal at k={report.first_violation}")
            manifest.output_checksum = checksum("\n".join(self.state.coeffs).encode())
        if self.state.output_path:
            manifest.sidecar = os.path.basename(self.state.output_path) + ".manifest.json"
        if self.state.mode == "scalar":
            document["manifest"] = manifest.model_dump()
            self.state.document = report_document(document)
        else:
            self.state.document = polynomial_document(self.poly, manifest)
        return self.state.document

    @listen(assemble_result)
    def write_result(self, previous_result):
        """Write the result file, or print it"""
        if self.state.error_code:
            return None
        if self.state.output_path:
            write_text(self.state.output_path, self.state.document)
            self.state.written = True
            print(f"📊 Results written to {self.state.output_path}")
        elif self.state.mode == "scalar":
            print(self.state.value)
        else:
            print(self.state.document, end="")
        return self.state.written


class CommandParser(argparse.ArgumentParser):
    """ArgumentParser whose errors become UsageError (exit code 1)"""

    def error(self, message):
        raise UsageError(message)


def _add_engine_flags(parser):
    parser.add_argument("--threads", "-t", type=int, default=None, help="Worker threads")
    parser.add_argument("--memory-budget-mb", type=float, default=None, help="Table memory budget in MiB")
    parser.add_argument("--checkpoint-dir", default=None, help="Directory for column checkpoints")
    parser.add_argument("--verbose", "-v", action="store_true", default=False, help="Print progress")


def build_parser() -> CommandParser:
    parser = CommandParser(prog="gerrymander", description="Gerrymander polynomial enumeration and series analysis")
    sub = parser.add_subparsers(dest="command", parser_class=CommandParser)

    p = sub.add_parser("enumerate", help="Enumerate G_L(q) or G_L(1)/2 for one board size")
    p.add_argument("--size", "-L", type=int, required=True, help="Board side L")
    p.add_argument("--mode", choices=["polynomial", "scalar"], default="polynomial")
    p.add_argument("--output", "-o", default=None, help="Result file (JSON)")
    _add_engine_flags(p)

    p = sub.add_parser("sequence", help="Emit a b-file for L = 1..max")
    p.add_argument("--kind", choices=SEQUENCE_KINDS, required=True)
    p.add_argument("--max", type=int, required=True, dest="max_side", help="Largest L")
    p.add_argument("--output", "-o", default=None, help="b-file path")
    p.add_argument("--check", action="store_true", default=False, help="Compare with the bundled fixture")
    _add_engine_flags(p)

    p = sub.add_parser("oracle-check", help="Compare the engine with exhaustive enumeration")
    p.add_argument("--size", "-L", type=int, required=True)
    p.add_argument("--allow-large", action="store_true", default=False, help="Permit L = 5")
    _add_engine_flags(p)

    p = sub.add_parser("analyze", help="Ratio analysis and lattice-square fit of a b-file")
    p.add_argument("--input", "-i", required=True, help="b-file")
    p.add_argument("--mode", choices=["divide", "pair", "ratio"], default="divide")
    p.add_argument("--pair", default=None, help="Denominator b-file for pair mode")
    p.add_argument("--lambda", type=float, default=None, dest="lam", help="Growth constant")
    p.add_argument("--step", type=int, default=None, help="Intercept step (2 = parity averaged)")
    p.add_argument("--window", type=int, default=None, help="Extrapolants in the uncertainty window")
    p.add_argument("--extend", type=int, default=0, help="Predicted terms to append before fitting")
    p.add_argument("--start", type=int, nargs="*", default=[], help="Fit-start indices for the sensitivity table")
    p.add_argument("--zc", type=float, default=None, help="Known critical point (ratio mode)")
    p.add_argument("--gamma", type=float, default=None, help="Known exponent (ratio mode)")
    p.add_argument("--output", "-o", default=None, help="JSON report")
    p.add_argument("--csv", default=None, help="CSV of all estimator trails")
    p.add_argument("--threads", "-t", type=int, default=1)
    p.add_argument("--verbose", "-v", action="store_true", default=False)

    p = sub.add_parser("predict", help="Predict further coefficients with differential approximants")
    p.add_argument("--input", "-i", required=True, help="b-file")
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--use", type=int, default=None, help="Use only the first N terms")
    p.add_argument("--orders", type=int, nargs="*", default=None)
    p.add_argument("--output", "-o", default=None, help="JSON report")
    p.add_argument("--csv", default=None, help="CSV prediction table")
    p.add_argument("--threads", "-t", type=int, default=1)
    p.add_argument("--verbose", "-v", action="store_true", default=False)

    p = sub.add_parser("da", help="Fit one differential approximant")
    p.add_argument("--input", "-i", required=True, help="b-file")
    p.add_argument("--order", type=int, required=True)
    p.add_argument("--degrees", type=int, nargs="+", required=True, help="N_0 .. N_M")
    p.add_argument("--inhomogeneous", type=int, default=-1, help="Degree K of P, -1 for none")
    p.add_argument("--output", "-o", default=None, help="JSON report")
    return parser


def _emit(text: str, output: Optional[str]):
    if output:
        write_text(output, text)
        print(f"📊 Results written to {output}")
    else:
        print(text, end="")


def _timed(output: Optional[str], threads: int, started: float, cpu_started: float):
    if output:
        write_sidecar(output, RunTimings(threads=threads, wall_seconds=time.time() - started,
                                         cpu_seconds=time.process_time() - cpu_started))


def cmd_enumerate(args) -> int:
    started, cpu_started = time.time(), time.process_time()
    flow = EnumerationFlow()
    flow.state.size = args.size
    flow.state.mode = args.mode
    flow.state.output_path = args.output
    flow.state.threads = args.threads
    flow.state.memory_budget_mb = args.memory_budget_mb
    flow.state.checkpoint_dir = args.checkpoint_dir
    flow.state.verbose = args.verbose
    flow.kickoff()
    if flow.state.error_code:
        print(f"❌ {flow.state.error_message}")
        return flow.state.error_code
    _timed(args.output, flow.engine.settings.threads, started, cpu_started)
    return 0


def cmd_sequence(args) -> int:
    started, cpu_started = time.time(), time.process_time()
    engine = EnumerationEngine(threads=args.threads, memory_budget_mb=args.memory_budget_mb,
                               checkpoint_dir=args.checkpoint_dir, verbose=args.verbose)
    terms = engine.sequence(args.kind, args.max_side)
    text = format_bfile(terms, header=[f"{args.kind} sequence, L = 1..{args.max_side}"])
    if args.check:
        reference = read_bfile(fixture_path(args.kind))
        bad = compare_terms(reference, terms)
        if bad is not None:
            raise VerificationMismatch(f"{args.kind} term L={bad} differs from the bundled fixture", index=bad)
        print(f"✅ {len(terms)} {args.kind} terms match the bundled fixture")
    _emit(text, args.output)
    _timed(args.output, engine.settings.threads, started, cpu_started)
    return 0


def cmd_oracle_check(args) -> int:
    engine = EnumerationEngine(threads=args.threads, memory_budget_mb=args.memory_budget_mb,
                               checkpoint_dir=args.checkpoint_dir, verbose=args.verbose)
    allow_large = args.allow_large or engine.settings.allow_large_oracle
    if args.size > 4 and not allow_large:
        raise UsageError("oracle check above L=4 needs --allow-large or oracle.allow_large")
    poly = engine.polynomial(args.size)
    brute = brute_partitions(args.size, allow_large=allow_large, threads=engine.settings.oracle_threads)
    compare_polynomials(poly, brute)
    print(f"✅ L={args.size}: engine and exhaustive census agree on all {len(poly.coeffs)} coefficients")
    return 0


def compare_polynomials(poly: GerrymanderPolynomial, brute) -> None:
    for k, (a, b) in enumerate(zip(poly.coeffs, brute)):
        if int(a) != int(b):
            raise VerificationMismatch(f"L={poly.side}: g_{k} is {a} from the engine but {int(b)} exhaustively", index=k)
    if len(poly.coeffs) != len(brute):
        raise VerificationMismatch(f"L={poly.side}: coefficient counts differ", index=min(len(poly.coeffs), len(brute)))


def cmd_analyze(args) -> int:
    settings = load_analysis_settings(lam=args.lam, window=args.window)
    sample = read_bfile(args.input).trimmed()
    print(f"🔍 Analysing {len(sample)} terms of {sample.name}")

    def extend(s: analysis.SeriesSample) -> analysis.SeriesSample:
        if not args.extend:
            return s
        return diffapprox.extend_for_ratio_analysis(
            s, args.extend, min_digits=settings.min_digits,
            grid=diffapprox.default_grid(len(s), settings.orders, settings.coefficient_window,
                                         settings.inhomogeneous),
            mad_cut=settings.mad_cut, z_score=settings.z_score, margin=settings.margin,
            threads=args.threads, verbose=args.verbose)

    report = {"input": os.path.basename(args.input), "mode": args.mode}
    if args.mode == "ratio":
        sample = extend(sample)
        diagnostics = analysis.ratio_diagnostics(sample, zc=args.zc, gamma=args.gamma)
        report["trails"] = diagnostics.model_dump()
        trails = report["trails"]
    else:
        step = args.step or settings.lattice_step
        if args.mode == "pair":
            if not args.pair:
                raise UsageError("pair mode needs --pair")
            other = read_bfile(args.pair).trimmed()
            shared = sorted(set(sample.indices) & set(other.indices))
            sample = _restrict(sample, shared)
            normalised = analysis.normalize_lattice(sample, mode="pair", other=_restrict(other, shared))
        else:
            normalised = analysis.normalize_lattice(sample, settings.lam)
        # the lattice-square growth must be gone before approximants see the series
        sample = extend(normalised)
        fit = analysis.fit_subdominant(sample, settings.lam, window=settings.window, step=step,
                                       b=settings.b, c=settings.c, g=settings.g)
        report["fit"] = fit.model_dump()
        report["lambda_uncertainty"] = settings.lam_uncertainty
        if args.start:
            h_trail = analysis.Trail([int(n) for n, _ in fit.trails["deviation"]],
                                     [mpf(v) for _, v in fit.trails["deviation"]])
            report["sensitivity"] = {str(k): v for k, v in analysis.window_sensitivity(h_trail, args.start).items()}
        trails = fit.trails
    report.update({"terms": len(sample), "exact_terms": sample.exact_count, "offset": sample.offset})
    _emit(report_document(report), args.output)
    if args.csv:
        export_to_csv(trails_frame(trails), args.csv)
    return 0



def _restrict(sample: analysis.SeriesSample, indices) -> analysis.SeriesSample:
    keep = set(indices)
    rows = [(n, v, d) for n, v, d in zip(sample.indices, sample.values, sample.digits) if n in keep]
    return analysis.SeriesSample(indices=[r[0] for r in rows], values=[r[1] for r in rows],
                                 digits=[r[2] for r in rows], offset=sample.offset, name=sample.name)


def cmd_predict(args) -> int:
    settings = load_analysis_settings()
    sample = read_bfile(args.input).trimmed()
    if args.use:
        sample = _restrict(sample, sample.indices[: args.use])
    orders = args.orders or settings.orders
    grid = diffapprox.default_grid(len(sample), orders, settings.coefficient_window, settings.inhomogeneous)
    predictions = diffapprox.predict_coefficients(
        sample, grid, count=args.count or settings.prediction_count, mad_cut=settings.mad_cut,
        z_score=settings.z_score, margin=settings.margin, threads=args.threads, verbose=args.verbose)
    rows = prediction_rows(sample, predictions)
    _emit(report_document({"input": os.path.basename(args.input), "used_terms": len(sample),
                           "orders": orders, "predictions": rows}), args.output)
    if args.csv:
        export_to_csv(pd.DataFrame(rows), args.csv)
    return 0


def prediction_rows(sample: analysis.SeriesSample, predictions) -> List[dict]:
    """Predicted values and ratios r_n = a_n / a_{n-1} as plot-ready rows."""
    rows = []
    previous = mpf(sample.values[-1])
    with mp.workdps(PRECISION):
        for p in predictions:
            rows.append({"n": p.index, "value": mpmath.nstr(p.value, 20),
                         "ratio": mpmath.nstr(p.value / previous, 15),
                         "std": p.std, "digits": p.digits, "contributors": p.contributors})
            previous = p.value
    return rows


def cmd_da(args) -> int:
    sample = read_bfile(args.input).trimmed()
    try:
        cfg = diffapprox.DAConfig(order=args.order, degrees=args.degrees, inhomogeneous=args.inhomogeneous)
    except ValueError as e:
        raise UsageError(str(e))
    da = diffapprox.fit_da(sample, cfg)
    estimates = diffapprox.singularities(da)
    report = {
        "config": cfg.model_dump(), "matched": cfg.size,
        "q": [[str(c) for c in poly] for poly in da.q], "p": [str(c) for c in da.p],
        "singularities": [{"z": [e.z.real, e.z.imag],
                           "gamma": None if e.gamma is None else [e.gamma.real, e.gamma.imag],
                           "residual": e.residual, "multiple": e.multiple} for e in estimates],
        "reproduces_input": da.regenerate(cfg.size, sample.values) == [diffapprox.to_fraction(v)
                                                                     for v in sample.values[: cfg.size]],
    }
    _emit(report_document(report), args.output)
    return 0


COMMANDS = {
    "enumerate": cmd_enumerate,
    "sequence": cmd_sequence,
    "oracle-check": cmd_oracle_check,
    "analyze": cmd_analyze,
    "predict": cmd_predict,
    "da": cmd_da,
}


def main(argv=None):
    """Main entry point function"""
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise UsageError("a command is required: " + ", ".join(COMMANDS))
        return COMMANDS[args.command](args)
    except GerrymanderError as e:
        print(f"❌ {e.message}")
        return e.exit_code
    except Exception as e:
        print(f"Error running command: {e}")
        import traceback
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
