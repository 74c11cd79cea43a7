"""Command-line front end.

Subcommands: check (static validation), gen (emit a model family as DSL
text), build (explicit model construction and dump), verify (run one engine
on one formula), bench (a matrix of verify runs with CSV/JSON reports).

Exit codes for verify: 0 when a verdict was produced (including "none" and
"unknown"), 2 when a resource limit got there first (timeout, node budget,
strategy-space cap, state cap), 3 on input errors.  check returns 0 only on
a clean spec, 1 otherwise.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import dataclass
from typing import Optional

from .approx import approximate_verify
from .bench import AsvParams, SeleneParams, gen_asv_spec, gen_selene, gen_vuln_formula
from .core import (
    BuildConfig,
    DeadlineExceeded,
    EPSILON,
    Model,
    ModelError,
    StateLimitExceeded,
    build_undeadlocked,
)
from .dsl import DslError, instantiate, parse_formula, parse_model_file, pretty_print, validate
from .logic import (
    FormulaError,
    StrategySpaceError,
    coalition_indices,
    formula_agents,
    formula_to_str,
    formula_vars,
    subjective_initial_set,
    verify_exact,
)
from .por import context_for_formula, reduce
from .synthesis import DEFAULT_BUDGET, dfs_synthesize, parallel_synthesize

EXIT_OK = 0
EXIT_UNCLEAN = 1
EXIT_LIMIT = 2
EXIT_INPUT = 3

_LIMIT_VERDICTS = {"budget", "timeout", "unknown-capacity"}


def _default_workers() -> int:
    raw = os.environ.get("AMASCHECK_WORKERS", "")
    try:
        n = int(raw)
        return n if n >= 1 else 4
    except ValueError:
        return 4


# ---------------------------------------------------------------------------
# run reports

@dataclass
class RunReport:
    """One verification run, JSON-ready via to_dict."""

    config: dict
    model: dict
    verdict: str
    seconds: float
    reason: Optional[str] = None
    witness: Optional[dict] = None
    bounds: Optional[dict] = None

    def to_dict(self) -> dict:
        out = {
            "config": self.config,
            "model": self.model,
            "verdict": self.verdict,
            "seconds": round(self.seconds, 6),
        }
        if self.reason is not None:
            out["reason"] = self.reason
        if self.witness is not None:
            out["witness"] = self.witness
        if self.bounds is not None:
            out["bounds"] = self.bounds
        return out

    @property
    def exit_code(self) -> int:
        return EXIT_LIMIT if self.verdict in _LIMIT_VERDICTS else EXIT_OK


def schema_path() -> str:
    """Filesystem path of the JSON schema the reports validate against."""
    return os.path.join(os.path.dirname(__file__), "report.schema.json")


# ---------------------------------------------------------------------------
# spec and formula resolution

def _read_spec(args):
    """ModelSpec from --family flags or a spec file, plus a config label."""
    family = getattr(args, "family", None)
    if family == "asv":
        params = {"n": args.n, "k": args.k}
        return gen_asv_spec(AsvParams(args.n, args.k)), "asv", params
    if family == "selene":
        params = {"V": args.V, "CV": args.CV, "C": args.C, "R": args.R}
        return gen_selene(SeleneParams(args.V, args.CV, args.C, args.R)), "selene", params
    spec_file = getattr(args, "spec", None)
    if not spec_file:
        raise DslError("no input: pass a spec file or --family with its parameters")
    with open(spec_file, "r", encoding="utf-8") as fp:
        text = fp.read()
    return parse_model_file(text, source_name=spec_file), None, {"file": spec_file}


def _resolve_formula(args, spec):
    text = getattr(args, "formula_text", None)
    if text:
        return parse_formula(text)
    short = getattr(args, "formula", None)
    if short:
        if short.startswith("vuln:"):
            parts = short.split(":")
            if len(parts) != 3:
                raise FormulaError(f"bad shorthand {short!r}, expected vuln:i:k")
            try:
                candidate, k = int(parts[1]), int(parts[2])
            except ValueError:
                raise FormulaError(f"bad shorthand {short!r}, expected integers")
            return gen_vuln_formula(candidate, k)
        return parse_formula(short)
    if spec.directives.formulas:
        return parse_formula(spec.directives.formulas[0])
    raise FormulaError("no formula: pass --formula, --formula-text, or a spec "
                       "with a FORMULA directive")


# ---------------------------------------------------------------------------
# one verification run end to end

def run_verification(spec, formula, method="dfs", mode="objective",
                     variant="react", reduced=False, workers=1,
                     budget=DEFAULT_BUDGET, timeout=300.0,
                     config_extra=None, full_cache=None) -> RunReport:
    """Build (full or reduced) and run one engine; never raises for
    resource exhaustion, only for bad inputs."""
    config = {
        "formula": formula_to_str(formula),
        "method": method,
        "mode": mode,
        "variant": variant,
        "reduced": bool(reduced),
        "workers": workers,
        "budget": budget,
        "timeout": timeout,
    }
    if config_extra:
        config.update(config_extra)

    amas = instantiate(spec)
    t0 = time.perf_counter()
    deadline = time.monotonic() + timeout if timeout else None
    model_info: dict = {}
    try:
        if reduced:
            ctx = context_for_formula(amas, formula,
                                      extra_vars=spec.directives.reduction)
            seeds = None
            if mode == "subjective":
                full = _cached_full(amas, full_cache, deadline)
                idxs = coalition_indices(full, formula.agents)
                seeds = [full.states[g]
                         for g in sorted(subjective_initial_set(full, idxs))]
            stats: dict = {}
            model = reduce(amas, seeds, ctx,
                           config=BuildConfig(deadline=deadline), stats=stats)
            model_info["reduction"] = {
                "ample_states": stats["ample_states"],
                "full_states": stats["full_states"],
            }
        else:
            model = _cached_full(amas, full_cache, deadline)
    except DeadlineExceeded:
        model_info.update(states=0, transitions=0, epsilon_states=0,
                          build_seconds=round(time.perf_counter() - t0, 6))
        return RunReport(config, model_info, "timeout",
                         0.0, reason="build phase hit the timeout")
    except StateLimitExceeded as exc:
        model_info.update(states=0, transitions=0, epsilon_states=0,
                          build_seconds=round(time.perf_counter() - t0, 6))
        return RunReport(config, model_info, "unknown-capacity",
                         0.0, reason=str(exc))
    model_info.update(
        states=len(model),
        transitions=model.num_transitions,
        epsilon_states=len(model.epsilon_states),
        build_seconds=round(time.perf_counter() - t0, 6),
    )

    t1 = time.perf_counter()
    deadline = time.monotonic() + timeout if timeout else None
    verdict, reason, witness, bounds = _dispatch(
        model, formula, method, mode, variant, workers, budget, deadline)
    return RunReport(config, model_info, verdict,
                     time.perf_counter() - t1, reason=reason,
                     witness=witness, bounds=bounds)


def _cached_full(amas, full_cache, deadline):
    """Build the full model, or reuse the one in the per-spec cache dict."""
    if full_cache is not None and "model" in full_cache:
        return full_cache["model"]
    model = build_undeadlocked(amas, config=BuildConfig(deadline=deadline))
    if full_cache is not None:
        full_cache["model"] = model
    return model


def _dispatch(model, formula, method, mode, variant, workers, budget, deadline):
    """Run one engine; returns (verdict, reason, witness, bounds)."""
    try:
        if method == "exact":
            res = verify_exact(model, formula, mode, variant, deadline=deadline)
            return ("true" if res.verdict else "false"), None, res.witness, None
        if method == "approx":
            tri = approximate_verify(model, formula, mode, deadline=deadline)
            bounds = {"lower": tri.lower_size, "upper": tri.upper_size,
                      "iterations": tri.iterations}
            return tri.label, None, None, bounds
        if method in ("dfs", "parallel"):
            if method == "dfs":
                res = dfs_synthesize(model, formula.agents, formula.path,
                                     mode, variant, budget, deadline)
            else:
                res = parallel_synthesize(model, formula.agents, formula.path,
                                          mode, variant, workers, budget,
                                          deadline)
            reason = None
            if res.outcome == "budget":
                reason = f"node budget ({budget}) exhausted"
            return res.outcome, reason, res.witness, None
        raise ValueError(f"unknown method {method!r}")
    except DeadlineExceeded:
        return "timeout", "verification hit the timeout", None, None
    except StrategySpaceError as exc:
        return "unknown-capacity", str(exc), None, None


# ---------------------------------------------------------------------------
# subcommands

def cmd_check(args) -> int:
    errors = []
    warnings_ = []
    try:
        with open(args.spec, "r", encoding="utf-8") as fp:
            text = fp.read()
        spec = parse_model_file(text, source_name=args.spec)
    except OSError as exc:
        print(f"error: {exc}")
        return EXIT_UNCLEAN
    except DslError as exc:
        print(f"error: {exc}")
        return EXIT_UNCLEAN

    if not spec.templates:
        print("error: no agent templates")
        return EXIT_UNCLEAN

    for problem in validate(spec):
        if "no synchronization partner" in problem and not args.strict:
            warnings_.append(problem)
        else:
            errors.append(problem)

    amas = None
    if not errors:
        try:
            import warnings as _w
            with _w.catch_warnings():
                _w.simplefilter("ignore")
                amas = instantiate(spec)
        except (DslError, ModelError) as exc:
            errors.append(str(exc))

    for template in spec.templates:
        adjacency: dict = {}
        for t in template.transitions:
            adjacency.setdefault(t.source, set()).add(t.target)
        seen = {template.init_state}
        todo = [template.init_state]
        while todo:
            for nxt in adjacency.get(todo.pop(), ()):
                if nxt not in seen:
                    seen.add(nxt)
                    todo.append(nxt)
        all_locals = set(adjacency) | {t.target for t in template.transitions}
        for orphan in sorted(all_locals - seen):
            warnings_.append(
                f"template {template.name!r}: state {orphan!r} unreachable "
                f"from {template.init_state!r}")

    if amas is not None:
        for ftext in spec.directives.formulas:
            try:
                f = parse_formula(ftext)
            except FormulaError as exc:
                errors.append(f"formula {ftext!r}: {exc}")
                continue
            for var in sorted(formula_vars(f) - set(amas.all_vars)):
                errors.append(f"formula {ftext!r}: unknown atom variable {var!r}")
            for name in sorted(formula_agents(f) - {a.name for a in amas.agents}):
                errors.append(f"formula {ftext!r}: unknown agent {name!r}")

    for line in errors:
        print(f"error: {line}")
    for line in warnings_:
        print(f"{'error' if args.strict else 'warning'}: {line}")
    if errors or (args.strict and warnings_):
        return EXIT_UNCLEAN
    print(f"clean: {len(spec.templates)} templates, "
          f"{sum(t.count for t in spec.templates)} agents"
          + (f", {len(warnings_)} warnings" if warnings_ else ""))
    return EXIT_OK


def cmd_gen(args) -> int:
    spec, _family, _params = _read_spec(args)
    text = pretty_print(spec)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fp:
            fp.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_build(args) -> int:
    spec, family, params = _read_spec(args)
    amas = instantiate(spec)
    deadline = time.monotonic() + args.timeout if args.timeout else None
    t0 = time.perf_counter()
    if args.reduce:
        formula = _resolve_formula(args, spec)
        ctx = context_for_formula(amas, formula,
                                  extra_vars=spec.directives.reduction)
        stats: dict = {}
        model = reduce(amas, None, ctx,
                       config=BuildConfig(deadline=deadline), stats=stats)
        extra = f", {stats['ample_states']} ample / {stats['full_states']} full expansions"
    else:
        model = build_undeadlocked(amas, config=BuildConfig(deadline=deadline))
        extra = ""
    dt = time.perf_counter() - t0
    print(f"{len(model)} states, {model.num_transitions} transitions, "
          f"{len(model.epsilon_states)} {EPSILON}-states in {dt:.2f}s{extra}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fp:
            model.dump(fp)
        print(f"dumped to {args.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    spec, family, params = _read_spec(args)
    formula = _resolve_formula(args, spec)
    full_cache: dict = {}

    if args.load:
        amas = instantiate(spec)
        with open(args.load, "r", encoding="utf-8") as fp:
            full_cache["amas"] = amas
            full_cache["model"] = Model.load(fp, amas)

    report = run_verification(
        spec, formula, method=args.method, mode=args.mode,
        variant=args.variant, reduced=args.reduce, workers=args.workers,
        budget=args.budget, timeout=args.timeout,
        config_extra={"family": family, "params": params},
        full_cache=full_cache)

    if args.json:
        json.dump(report.to_dict(), sys.stdout, indent=2)
        sys.stdout.write("\n")
    else:
        m = report.model
        kind = "reduced" if report.config["reduced"] else "full"
        print(f"model: {m['states']} states, {m['transitions']} transitions, "
              f"{m['epsilon_states']} {EPSILON}-states "
              f"({kind}, built in {m['build_seconds']:.2f}s)")
        if "reduction" in m:
            r = m["reduction"]
            print(f"reduction: {r['ample_states']} ample / "
                  f"{r['full_states']} full expansions")
        print(f"engine: {report.config['method']}, mode {report.config['mode']}, "
              f"variant {report.config['variant']}")
        if report.bounds:
            b = report.bounds
            print(f"bounds: lower {b['lower']} / upper {b['upper']} states, "
                  f"{b['iterations']} iterations")
        line = f"verdict: {report.verdict} ({report.seconds:.2f}s)"
        if report.reason:
            line += f" [{report.reason}]"
        print(line)
        if report.witness is not None:
            n = sum(len(v) for v in report.witness.values())
            print(f"witness: strategy with {n} bound observations "
                  f"across {len(report.witness)} agents")
    return report.exit_code


def _bench_matrix(args) -> dict:
    if args.matrix:
        with open(args.matrix, "r", encoding="utf-8") as fp:
            matrix = json.load(fp)
    else:
        if not args.family:
            raise DslError("bench needs --matrix or --family")
        if args.family == "asv":
            configs = [{"n": args.n, "k": args.k}]
        else:
            configs = [{"V": args.V, "CV": args.CV, "C": args.C, "R": r}
                       for r in _int_list(args.R_list or str(args.R))]
        matrix = {
            "family": args.family,
            "configs": configs,
            "formulas": (args.formula or "").split(",") if args.formula else [],
            "methods": args.method.split(","),
            "modes": args.mode.split(","),
            "variants": args.variant.split(","),
            "models": args.models.split(","),
            "timeout": args.timeout,
            "budget": args.budget,
            "workers": args.workers,
        }
    matrix.setdefault("methods", ["dfs"])
    matrix.setdefault("modes", ["objective"])
    matrix.setdefault("variants", ["react"])
    matrix.setdefault("models", ["full"])
    matrix.setdefault("formulas", [])
    matrix.setdefault("configs", [])
    matrix.setdefault("timeout", 300.0)
    matrix.setdefault("budget", DEFAULT_BUDGET)
    matrix.setdefault("workers", _default_workers())
    return matrix


def _int_list(raw: str):
    return [int(tok) for tok in raw.split(",") if tok.strip()]


_CSV_COLUMNS = ["family", "agents", "params", "model", "formula", "method",
                "mode", "variant", "states", "transitions", "build_seconds",
                "verify_seconds", "verdict"]


def cmd_bench(args) -> int:
    matrix = _bench_matrix(args)
    family = matrix.get("family")

    rows = []
    for cfg in matrix["configs"]:
        if family == "asv":
            spec = gen_asv_spec(AsvParams(cfg["n"], cfg["k"]))
            agents = cfg["n"] + 1
        elif family == "selene":
            spec = gen_selene(SeleneParams(cfg["V"], cfg["CV"], cfg["C"], cfg["R"]))
            agents = cfg["V"] + cfg["CV"] + 2
        else:
            raise DslError(f"unknown bench family {family!r}")
        formulas = matrix["formulas"] or [None]
        for ftext in formulas:
            for method in matrix["methods"]:
                for mode in matrix["modes"]:
                    for variant in matrix["variants"]:
                        for model_kind in matrix["models"]:
                            rows.append((spec, agents, cfg, ftext, method,
                                         mode, variant, model_kind))

    csv_fp = open(args.csv, "w", newline="", encoding="utf-8") if args.csv else None
    writer = csv.writer(csv_fp) if csv_fp else None
    if writer:
        writer.writerow(_CSV_COLUMNS)
        csv_fp.flush()

    reports = []
    full_caches: dict = {}
    try:
        for spec, agents, cfg, ftext, method, mode, variant, model_kind in rows:
            shorthand = argparse.Namespace(formula=ftext, formula_text=None)
            formula = _resolve_formula(shorthand, spec)
            cache = full_caches.setdefault(id(spec), {})
            report = run_verification(
                spec, formula, method=method, mode=mode, variant=variant,
                reduced=(model_kind == "reduced"), workers=matrix["workers"],
                budget=matrix["budget"], timeout=matrix["timeout"],
                config_extra={"family": family, "params": cfg},
                full_cache=cache)
            reports.append(report)
            if writer:
                writer.writerow([
                    family, agents, json.dumps(cfg, sort_keys=True),
                    model_kind, report.config["formula"], method, mode,
                    variant, report.model["states"],
                    report.model["transitions"],
                    f"{report.model['build_seconds']:.3f}",
                    f"{report.seconds:.3f}", report.verdict,
                ])
                csv_fp.flush()
            if not args.quiet:
                print(f"{family} {cfg} {model_kind} {method}/{mode}/{variant} "
                      f"{report.config['formula']}: {report.verdict} "
                      f"({report.seconds:.2f}s)")
    finally:
        if csv_fp:
            csv_fp.close()

    if args.json_out:
        doc = {"runs": [r.to_dict() for r in reports]}
        with open(args.json_out, "w", encoding="utf-8") as fp:
            json.dump(doc, fp, indent=2)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

def _add_family_args(p, with_spec=True):
    if with_spec:
        p.add_argument("spec", nargs="?", help="model spec file (DSL text)")
    p.add_argument("--family", choices=["asv", "selene"],
                   help="generate the model family instead of reading a file")
    p.add_argument("--n", type=int, default=1, help="asv: number of voters")
    p.add_argument("--k", type=int, default=2, help="asv: number of candidates")
    p.add_argument("--V", type=int, default=1, help="selene: plain voters")
    p.add_argument("--CV", type=int, default=1, help="selene: coerced voters")
    p.add_argument("--C", type=int, default=3, help="selene: candidates")
    p.add_argument("--R", type=int, default=3, help="selene: revote rounds")


def _add_formula_args(p):
    p.add_argument("--formula",
                   help="formula text, or shorthand vuln:i:k for the "
                        "coercion formula with candidate i after k revotes")
    p.add_argument("--formula-text", dest="formula_text",
                   help="explicit formula text (overrides --formula)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="amascheck",
        description="Explicit-state model checking of strategic abilities "
                    "for asynchronous agent systems")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="validate a spec file")
    p.add_argument("spec")
    p.add_argument("--strict", action="store_true",
                   help="treat warnings as errors")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("gen", help="emit a generated family as DSL text")
    _add_family_args(p, with_spec=False)
    p.add_argument("--out", help="output file (default stdout)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("build", help="build the explicit model")
    _add_family_args(p)
    _add_formula_args(p)
    p.add_argument("--reduce", action="store_true",
                   help="apply partial-order reduction (needs a formula)")
    p.add_argument("--out", help="dump the model as JSON")
    p.add_argument("--timeout", type=float, default=300.0)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("verify", help="run one verification")
    _add_family_args(p)
    _add_formula_args(p)
    p.add_argument("--method", choices=["dfs", "parallel", "approx", "exact"],
                   default="dfs")
    p.add_argument("--mode", choices=["objective", "subjective"],
                   default="objective")
    p.add_argument("--variant", choices=["std", "react"], default="react",
                   help="how stalling states fold into outcomes "
                        "(default react: stall only when nothing else runs)")
    p.add_argument("--reduce", action="store_true",
                   help="verify on the reduced model")
    p.add_argument("--workers", type=int, default=_default_workers(),
                   help="parallel method worker count "
                        "(default $AMASCHECK_WORKERS or 4)")
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET,
                   help="synthesis node budget")
    p.add_argument("--timeout", type=float, default=300.0,
                   help="seconds per phase (build, then verify)")
    p.add_argument("--json", action="store_true", help="emit a JSON report")
    p.add_argument("--load", help="load a dumped model instead of building")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="run a verification matrix")
    _add_family_args(p, with_spec=False)
    _add_formula_args(p)
    p.add_argument("--matrix", help="JSON matrix file (overrides flags)")
    p.add_argument("--R-list", dest="R_list",
                   help="selene: comma-separated revote rounds (e.g. 3,5)")
    p.add_argument("--method", default="dfs",
                   help="comma-separated methods")
    p.add_argument("--mode", default="objective",
                   help="comma-separated modes")
    p.add_argument("--variant", default="react",
                   help="comma-separated variants")
    p.add_argument("--models", default="full",
                   help="comma-separated subset of full,reduced")
    p.add_argument("--workers", type=int, default=_default_workers())
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    p.add_argument("--timeout", type=float, default=300.0)
    p.add_argument("--csv", help="CSV output path (flushed row by row)")
    p.add_argument("--json-out", dest="json_out", help="JSON report path")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return EXIT_OK
    except (DslError, FormulaError, ModelError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
