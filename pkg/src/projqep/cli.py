"""Command-line front end.

Run configurations are small TOML documents::

    [problem]
    name = "counterexample"          # or moving_square, l2_truncated:4, contraction:0.5

    [start]
    x0 = [0.5, 0.0]                  # or: multistart = 5, seed = 0

    [outer]
    stop_tol = 1e-8
    max_iter = 1000

    [inner]
    method = "auto"

    [output]
    trace = "trace.csv"
    certificate = "certificate.json"
    summary = "summary.txt"

Every key is optional except ``problem.name`` and one of ``start.x0`` /
``start.multistart``; unknown sections or keys are rejected.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .algorithm import (
    OuterConfig,
    Outcome,
    RunResult,
    cluster_points,
    contraction_certificate,
    fixed_point_oracle,
)
from .ep_solver import InnerConfig
from .errors import ConfigParseError, ConfigValidationError, QEPError
from .instances import INSTANCE_HELP, ProblemInstance, get_instance
from .problems import estimate_constants, sample_point

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("projqep")

EXIT_CODES = {Outcome.CONVERGED: 0, Outcome.CYCLING: 2, Outcome.BUDGET_EXHAUSTED: 3}
EXIT_ERROR = 1

# config key -> dataclass field
OUTER_KEYS = {
    "stop_tol": "stop_tol",
    "max_iter": "max_outer_iterations",
    "cycle_window": "cycle_window",
    "cycle_tol": "cycle_tol",
    "certify_eps": "certify_eps",
    "projection_tol": "projection_tol",
}
INNER_KEYS = {
    "epsilon": "epsilon_inner",
    "max_iter": "max_inner_iterations",
    "step_size": "step_size",
    "grid_resolution": "grid_resolution",
    "method": "method",
    "allow_grid": "allow_grid",
    "membership_tol": "membership_tol",
}
INT_FIELDS = {"max_outer_iterations", "cycle_window", "max_inner_iterations"}
BOOL_FIELDS = {"allow_grid"}
STR_FIELDS = {"method"}


@dataclass(frozen=True)
class RunSpec:
    problem: str
    x0: Optional[tuple] = None
    multistart: Optional[int] = None
    seed: int = 0
    use_closed_form: bool = True
    outer: OuterConfig = field(default_factory=OuterConfig)
    constant_samples: int = 32
    trace_path: Optional[str] = None
    certificate_path: Optional[str] = None
    summary_path: Optional[str] = None

    def instance(self) -> ProblemInstance:
        return get_instance(self.problem)

    def starts(self, inst: ProblemInstance):
        if self.x0 is not None:
            return [np.array(self.x0, dtype=float)]
        rng = np.random.default_rng(self.seed)
        return [sample_point(inst.C, rng) for _ in range(self.multistart)]


def _coerce(section, key, name, value):
    where = f"{section}.{key}"
    if name in BOOL_FIELDS:
        if not isinstance(value, bool):
            raise ConfigValidationError(where, "expected true or false")
        return value
    if name in STR_FIELDS:
        if not isinstance(value, str):
            raise ConfigValidationError(where, "expected a string")
        return value
    if name in INT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigValidationError(where, "expected an integer")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigValidationError(where, "expected a number")
    return float(value)


def _check_keys(section, table, allowed):
    if not isinstance(table, dict):
        raise ConfigValidationError(section, "expected a table")
    for key in table:
        if key not in allowed:
            raise ConfigValidationError(f"{section}.{key}", "unknown key")


def parse_config(text: str) -> RunSpec:
    """Parse and validate a run configuration, filling in defaults."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        line = getattr(err, "lineno", None)
        if line is None:
            line = _line_from_message(str(err))
        raise ConfigParseError(line, getattr(err, "msg", str(err))) from None

    sections = {"problem", "start", "outer", "inner", "output"}
    for sec in doc:
        if sec not in sections:
            raise ConfigValidationError(sec, "unknown section")

    problem = doc.get("problem", {})
    _check_keys("problem", problem, {"name", "use_closed_form"})
    if "name" not in problem or not isinstance(problem["name"], str):
        raise ConfigValidationError("problem.name", "a problem name is required")
    name = problem["name"]
    try:
        inst = get_instance(name)
    except (KeyError, ValueError) as err:
        raise ConfigValidationError("problem.name", str(err)) from None
    use_cf = problem.get("use_closed_form", True)
    if not isinstance(use_cf, bool):
        raise ConfigValidationError("problem.use_closed_form", "expected true or false")

    start = doc.get("start", {})
    _check_keys("start", start, {"x0", "multistart", "seed"})
    x0 = start.get("x0")
    multistart = start.get("multistart")
    if (x0 is None) == (multistart is None):
        raise ConfigValidationError("start", "give exactly one of x0 and multistart")
    if x0 is not None:
        if not isinstance(x0, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in x0
        ):
            raise ConfigValidationError("start.x0", "expected a list of numbers")
        if len(x0) != inst.dim:
            raise ConfigValidationError("start.x0", f"expected {inst.dim} coordinates, got {len(x0)}")
        if not all(math.isfinite(v) for v in x0):
            raise ConfigValidationError("start.x0", "coordinates must be finite")
        x0 = tuple(float(v) for v in x0)
    if multistart is not None and (isinstance(multistart, bool) or not isinstance(multistart, int) or multistart < 1):
        raise ConfigValidationError("start.multistart", "expected a positive integer")
    seed = start.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigValidationError("start.seed", "expected an integer")

    outer_t = doc.get("outer", {})
    _check_keys("outer", outer_t, set(OUTER_KEYS) | {"constant_samples"})
    inner_t = doc.get("inner", {})
    _check_keys("inner", inner_t, set(INNER_KEYS))
    inner_kw = {INNER_KEYS[k]: _coerce("inner", k, INNER_KEYS[k], v) for k, v in inner_t.items()}
    outer_kw = {OUTER_KEYS[k]: _coerce("outer", k, OUTER_KEYS[k], v) for k, v in outer_t.items() if k in OUTER_KEYS}
    samples = outer_t.get("constant_samples", 32)
    if isinstance(samples, bool) or not isinstance(samples, int) or samples < 2:
        raise ConfigValidationError("outer.constant_samples", "expected an integer >= 2")
    try:
        inner = InnerConfig(**inner_kw)
    except ValueError as err:
        raise ConfigValidationError("inner", str(err)) from None
    try:
        outer = OuterConfig(inner=inner, **outer_kw)
    except ValueError as err:
        raise ConfigValidationError("outer", str(err)) from None

    out = doc.get("output", {})
    _check_keys("output", out, {"trace", "certificate", "summary"})
    for k, v in out.items():
        if not isinstance(v, str):
            raise ConfigValidationError(f"output.{k}", "expected a path string")

    if x0 is not None and not inst.C.contains(x0, inner.membership_tol):
        raise ConfigValidationError("start.x0", "start point is not in C")

    return RunSpec(
        problem=name,
        x0=x0,
        multistart=multistart,
        seed=seed,
        use_closed_form=use_cf,
        outer=outer,
        constant_samples=samples,
        trace_path=out.get("trace"),
        certificate_path=out.get("certificate"),
        summary_path=out.get("summary"),
    )


def _line_from_message(msg):
    import re

    m = re.search(r"line (\d+)", msg)
    return int(m.group(1)) if m else 0


def _toml_string(text):
    out = []
    for ch in text:
        if ch in '"\\':
            out.append("\\" + ch)
        elif ord(ch) < 0x20 or ord(ch) == 0x7F:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    return '"' + "".join(out) + '"'


def _toml_value(v):
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return _toml_string(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def render_config(spec: RunSpec) -> str:
    """Inverse of :func:`parse_config`; every field is written out explicitly."""
    lines = ["[problem]", f"name = {_toml_value(spec.problem)}"]
    lines.append(f"use_closed_form = {_toml_value(spec.use_closed_form)}")
    lines += ["", "[start]"]
    if spec.x0 is not None:
        lines.append(f"x0 = {_toml_value(list(spec.x0))}")
    else:
        lines.append(f"multistart = {spec.multistart}")
    lines.append(f"seed = {spec.seed}")
    lines += ["", "[outer]"]
    for key, name in OUTER_KEYS.items():
        v = getattr(spec.outer, name)
        if v is not None:
            lines.append(f"{key} = {_toml_value(v)}")
    lines.append(f"constant_samples = {spec.constant_samples}")
    lines += ["", "[inner]"]
    for key, name in INNER_KEYS.items():
        lines.append(f"{key} = {_toml_value(getattr(spec.outer.inner, name))}")
    outputs = [("trace", spec.trace_path), ("certificate", spec.certificate_path), ("summary", spec.summary_path)]
    if any(p is not None for _, p in outputs):
        lines += ["", "[output]"]
        lines += [f"{k} = {_toml_value(p)}" for k, p in outputs if p is not None]
    return "\n".join(lines) + "\n"


def _fmt(v):
    return repr(float(v))


def trace_rows(result: RunResult, start=None):
    """CSV rows for one run; the last iterate has no inner solution, gap or residual."""
    tr = result.trace
    n = tr.dim
    prefix = [] if start is None else [str(start)]
    rows = []
    for i in range(len(tr.zs)):
        rows.append(
            prefix
            + [str(i)]
            + [_fmt(v) for v in tr.xs[i]]
            + [_fmt(v) for v in tr.zs[i]]
            + [_fmt(tr.gaps[i]), _fmt(tr.residuals[i])]
        )
    last = len(tr.xs) - 1
    rows.append(prefix + [str(last)] + [_fmt(v) for v in tr.xs[last]] + [""] * (n + 2))
    return rows


def trace_header(n, multistart=False):
    head = ["iter"] + [f"x{k + 1}" for k in range(n)] + [f"z{k + 1}" for k in range(n)] + ["gap", "residual"]
    return (["start"] if multistart else []) + head


def render_trace(results, multistart=False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trace_header(results[0].trace.dim, multistart))
    for k, res in enumerate(results):
        w.writerows(trace_rows(res, k if multistart else None))
    return buf.getvalue()


def certificate_record(k, x0, result: RunResult):
    rec = {
        "start": k,
        "x0": [float(v) for v in x0],
        "outcome": result.outcome.value,
        "period": result.period,
        "steps": result.steps,
        "final_x": [float(v) for v in result.x],
        "certificate": None,
        "contraction": None,
    }
    c = result.certificate
    if c is not None:
        rec["certificate"] = {
            "x": [float(v) for v in c.x],
            "z": [float(v) for v in c.z],
            "ep_residual": c.ep_residual,
            "projection_gap": c.projection_gap,
            "membership_distance": c.membership_distance,
            "in_constraint": c.in_constraint,
            "residual_ok": c.residual_ok,
            "projects_back": c.projects_back,
            "valid": c.valid,
            "eps": c.eps,
        }
    d = result.diagnostics
    if d is not None:
        rec["contraction"] = {"q": d.q if math.isfinite(d.q) else None, "guaranteed": d.guaranteed}
    return rec


def _write(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as err:
        raise OSError(f"cannot write {path}: {err.strerror}") from err


def run_command(spec: RunSpec, jobs: int = 1, stdout=None) -> int:
    """Run every start of ``spec``, write the requested files and return the exit status."""
    stdout = stdout or sys.stdout
    inst = spec.instance()
    starts = spec.starts(inst)
    constants = None
    if inst.solution_lipschitz is None:
        constants = estimate_constants(inst.f, inst.cmap, spec.constant_samples, spec.seed)

    def one(x0):
        return inst.run(x0, spec.outer, use_closed_form=spec.use_closed_form, constants=constants)

    if jobs > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, starts))
    else:
        results = [one(x0) for x0 in starts]

    for res in results:
        if res.diagnostics is None and constants is not None:
            res.diagnostics = contraction_certificate(constants, res.trace.xs[0], res.trace.zs[0])

    multi = spec.x0 is None
    lines = []
    for k, res in enumerate(results):
        prefix = f"[{inst.name} start {k}] " if multi else f"[{inst.name}] "
        lines.append(prefix + res.summary())
    summary = "\n".join(lines) + "\n"
    stdout.write(summary)

    if spec.trace_path:
        _write(spec.trace_path, render_trace(results, multi))
    if spec.certificate_path:
        recs = [certificate_record(k, x0, r) for k, (x0, r) in enumerate(zip(starts, results))]
        _write(spec.certificate_path, json.dumps({"problem": inst.name, "runs": recs}, indent=2) + "\n")
    if spec.summary_path:
        _write(spec.summary_path, summary)

    codes = {EXIT_CODES[r.outcome] for r in results}
    for code in (3, 2):
        if code in codes:
            return code
    return 0


def oracle_command(spec: RunSpec, grid_resolution: float, out_path=None, eps=None, stdout=None) -> int:
    """Write the grid approximation of the projected-solution set as CSV."""
    stdout = stdout or sys.stdout
    inst = spec.instance()
    eps = spec.outer.certify_eps if eps is None else eps
    cf = inst.closed_form if spec.use_closed_form else None
    pts = fixed_point_oracle(inst.f, inst.cmap, inst.C, grid_resolution, eps, spec.outer.inner, closed_form=cf)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{k + 1}" for k in range(inst.dim)])
    w.writerows([[_fmt(v) for v in p] for p in pts])
    if out_path:
        _write(out_path, buf.getvalue())
    else:
        stdout.write(buf.getvalue())
    clusters = cluster_points(pts, 1.5 * grid_resolution)
    centers = "; ".join("(" + ", ".join(f"{v:.4g}" for v in c.mean(axis=0)) + ")" for c in clusters)
    msg = f"[{inst.name}] {len(pts)} grid points in {len(clusters)} clusters: {centers}\n"
    (sys.stderr if not out_path else stdout).write(msg)
    return 0


def _parse_vector(text):
    try:
        return tuple(float(v) for v in text.strip("[]() ").split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated vector: {text!r}") from None


def build_parser():
    p = argparse.ArgumentParser(prog="projqep", description="Projected solutions of quasi equilibrium problems.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run the projected solution procedure")
    s.add_argument("config", nargs="?", help="run configuration (TOML)")
    s.add_argument("--problem", help="instance name, used instead of or on top of the config")
    s.add_argument("--x0", type=_parse_vector, help="start point, e.g. 0.5,0")
    s.add_argument("--multistart", type=int, help="number of seeded random starts")
    s.add_argument("--seed", type=int)
    s.add_argument("--stop-tol", type=float)
    s.add_argument("--max-iter", type=int)
    s.add_argument("--no-closed-form", action="store_true", help="solve inner problems numerically")
    s.add_argument("--trace", help="trace CSV path")
    s.add_argument("--cert", help="certificate JSON path")
    s.add_argument("--summary", help="summary text path")
    s.add_argument("--jobs", type=int, default=1, help="run independent starts in parallel")

    o = sub.add_parser("oracle", help="grid search for projected solutions")
    o.add_argument("config", nargs="?")
    o.add_argument("--problem")
    o.add_argument("--resolution", type=float, required=True)
    o.add_argument("--eps", type=float)
    o.add_argument("--no-closed-form", action="store_true")
    o.add_argument("--out", help="CSV path (default: standard output)")

    sub.add_parser("list-instances", help="list the built-in problems")
    return p


def _spec_from_args(args) -> RunSpec:
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as err:
            raise OSError(f"cannot read {args.config}: {err.strerror}") from err
        if args.problem or getattr(args, "x0", None) or getattr(args, "multistart", None):
            doc = tomllib.loads(text)
            if args.problem:
                doc.setdefault("problem", {})["name"] = args.problem
            start = doc.setdefault("start", {})
            if getattr(args, "x0", None):
                start.pop("multistart", None)
                start["x0"] = list(args.x0)
            elif getattr(args, "multistart", None):
                start.pop("x0", None)
                start["multistart"] = args.multistart
            text = _dump_doc(doc)
        spec = parse_config(text)
    elif args.problem:
        inst = get_instance(args.problem)
        doc = {"problem": {"name": args.problem}, "start": {}}
        if getattr(args, "x0", None):
            doc["start"]["x0"] = list(args.x0)
        elif getattr(args, "multistart", None):
            doc["start"]["multistart"] = args.multistart
        else:
            doc["start"]["x0"] = list(inst.known_behaviors[0].x0)
        spec = parse_config(_dump_doc(doc))
    else:
        raise ConfigValidationError("config", "give a config path or --problem")

    if getattr(args, "seed", None) is not None:
        spec = replace(spec, seed=args.seed)
    if args.no_closed_form:
        spec = replace(spec, use_closed_form=False)
    outer = spec.outer
    if getattr(args, "stop_tol", None) is not None:
        outer = replace(outer, stop_tol=args.stop_tol)
    if getattr(args, "max_iter", None) is not None:
        outer = replace(outer, max_outer_iterations=args.max_iter, cycle_window=min(outer.cycle_window, args.max_iter))
    spec = replace(spec, outer=outer)
    for opt, attr in (("trace", "trace_path"), ("cert", "certificate_path"), ("summary", "summary_path")):
        if getattr(args, opt, None):
            spec = replace(spec, **{attr: getattr(args, opt)})
    return spec


def _dump_doc(doc):
    lines = []
    for sec, table in doc.items():
        lines.append(f"[{sec}]")
        lines += [f"{k} = {_toml_value(v)}" for k, v in table.items()]
        lines.append("")
    return "\n".join(lines)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "list-instances":
        for name, desc in INSTANCE_HELP.items():
            print(f"{name:22s} {desc}")
        return 0
    try:
        spec = _spec_from_args(args)
        if args.command == "solve":
            return run_command(spec, jobs=args.jobs)
        return oracle_command(spec, args.resolution, args.out, args.eps)
    except (QEPError, OSError, KeyError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
