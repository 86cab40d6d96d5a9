"""Command-line front end (``fmtcheck`` / ``python3 -m fmtcheck``)."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from importlib import resources

from . import analysis
from .analysis import METRICS, NumericsConfig, NumericsError
from .ctmc import All, AnyG, AnyOf, CompositionError, Named, Not, _Const, to_text
from .decomposition import DecompositionError, abstract_analyze, find_and_split, state_space_report
from .model import (
    ModelError,
    bundled_path,
    duplicate_rdep_inputs,
    load_model,
    parse_duration,
    to_dot,
    validate,
)
from .semantics import assemble_system
from .simulate import DETERMINISTIC, PHASE_TYPE, SimConfig, cross_check, simulate_chain, simulate_tree

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2, 3
CSV_HEADER = ["model", "strategy", "metric", "horizon", "engine", "value", "stderr", "ci_lo", "ci_hi", "runs", "seed",
              "mode", "z"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# Inputs


def resolve_model(ref):
    """A path, or the name of a bundled model (``hvac``, ``toy_rdep`` ...)."""
    if os.path.exists(ref):
        return load_model(ref, check=False)
    try:
        path = bundled_path(ref)
    except Exception:
        path = None
    if path and os.path.exists(path):
        return load_model(path, check=False)
    raise ModelError(f"no such model file or bundled model: {ref}")


def _check(tree):
    problems = validate(tree)
    if problems:
        raise ModelError("; ".join(str(v) for v in problems))
    return tree


def parse_strategies(text):
    """``{"strategies": [{"name", "t_rp"?, "t_oh"?, "t_in"?, "none"?}]}`` -> {name: timers}."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(exc.msg, line=exc.lineno) from None
    items = doc.get("strategies") if isinstance(doc, dict) else doc
    if not isinstance(items, list) or not items:
        raise ModelError("strategy file needs a non-empty 'strategies' list")
    out = {}
    for i, s in enumerate(items):
        path = f"strategies[{i}]"
        if not isinstance(s, dict) or not isinstance(s.get("name"), str):
            raise ModelError("each strategy needs a name", path)
        name = s["name"]
        if name in out:
            raise ModelError(f"duplicate strategy name {name!r}", path)
        timers = {k: parse_duration(s[k], f"{path}.{k}") if s.get(k) is not None else None
                  for k in ("t_rp", "t_oh", "t_in")}
        if not any(v is not None for v in timers.values()) and not s.get("none"):
            raise ModelError(f"strategy {name!r} has no timer; mark it with \"none\": true", path)
        out[name] = timers
    return out


def load_strategies(ref=None):
    if ref is None:
        text = resources.files("fmtcheck").joinpath("data", "strategies.json").read_text(encoding="utf-8")
    else:
        with open(ref, encoding="utf-8") as fh:
            text = fh.read()
    return parse_strategies(text)


def apply_strategy(tree, timers, phases=None):
    pol = replace(tree.policy, **timers)
    if phases is not None:
        pol = replace(pol, timer_phases=phases)
    return tree.with_policy(pol)


def _horizons(values):
    out = []
    for v in values:
        for part in str(v).split(","):
            part = part.strip()
            if not part:
                continue
            try:
                out.append(parse_duration(part) if part[-1].isalpha() else float(part))
            except (ValueError, ModelError):
                raise UsageError(f"bad horizon {part!r}") from None
    if any(t < 0 for t in out):
        raise UsageError("horizons must be >= 0")
    return out


def _metrics(values):
    out = []
    for v in values:
        for part in v.split(","):
            part = part.strip()
            if part == "all":
                out.extend(METRICS)
            elif part:
                if part not in METRICS:
                    raise UsageError(f"unknown metric {part!r} (choose from {', '.join(METRICS)})")
                out.append(part)
    return list(dict.fromkeys(out)) or list(METRICS)


def _threads():
    try:
        return max(1, int(os.environ.get("FMTCHECK_THREADS", "1")))
    except ValueError:
        return 1


# --------------------------------------------------------------------------
# Analysis cells


def _fmt(x):
    return "" if x is None else repr(float(x))


def run_cell(model_name, strategy, tree, metrics, horizons, args):
    """All rows for one (model, strategy)."""
    rows = []
    cfg = NumericsConfig(epsilon=args.epsilon)
    numeric = {}
    if args.engine in ("numeric", "both"):
        if args.mode == "decomposed":
            numeric = abstract_analyze(tree, metrics, horizons, cfg, abstract_phase_count=args.abstract_phases).values
        else:
            numeric = analysis.evaluate(assemble_system(duplicate_rdep_inputs(tree)), metrics, horizons, cfg)
    est = None
    if args.engine in ("mc", "both"):
        scfg = SimConfig(args.runs, tuple(horizons), args.seed, args.delay_mode)
        if args.sim == "chain":
            est = simulate_chain(assemble_system(duplicate_rdep_inputs(tree)), scfg)
        else:
            est = simulate_tree(tree, scfg)
    for m in metrics:
        for T in horizons:
            key = (m, float(T))
            z = None
            if est is not None and key in numeric:
                z = cross_check(numeric[key], est[key])["z"]
            if key in numeric:
                rows.append([model_name, strategy, m, _fmt(T), "numeric", _fmt(numeric[key]), "", "", "", "", "",
                             args.mode, _fmt(z)])
            if est is not None:
                e = est[key]
                lo, hi = e.ci
                rows.append([model_name, strategy, m, _fmt(T), "mc", _fmt(e.mean), _fmt(e.stderr), _fmt(lo), _fmt(hi),
                             str(e.runs), str(args.seed), est.mode, _fmt(z)])
    return rows


def _write_csv(rows, out):
    rows = sorted(rows, key=lambda r: (r[0], r[1], METRICS.index(r[2]), float(r[3]), r[4]))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    w.writerows(rows)
    out.write(buf.getvalue())
    return rows


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", encoding="utf-8", newline=""), True


def _strict_fail(rows):
    return any(r[12] and float(r[12]) > 3.0 for r in rows)


# --------------------------------------------------------------------------
# Commands


def cmd_validate(args):
    try:
        tree = resolve_model(args.model)
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    problems = validate(tree)
    for v in problems:
        where = f" [{v.node}]" if v.node else ""
        print(f"{v.code}{where}: {v.message}")
    if problems:
        return EXIT_VALIDATION
    print(f"ok: {tree.name or args.model} ({len(tree.ebes())} EBEs)")
    return EXIT_OK


def _cells(args, strategies):
    tree = _check(resolve_model(args.model))
    name = tree.name or os.path.splitext(os.path.basename(args.model))[0]
    metrics = _metrics(args.metric)
    horizons = _horizons(args.horizons)
    cells = []
    for sname, timers in strategies:
        t = tree if timers is None else apply_strategy(tree, timers, args.phases)
        if timers is None and args.phases is not None:
            t = tree.with_policy(replace(tree.policy, timer_phases=args.phases))
        cells.append((name, sname, t, metrics, horizons, args))
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        parts = list(pool.map(lambda c: run_cell(*c), cells))
    return [r for p in parts for r in p], metrics, horizons


def cmd_analyze(args):
    if args.strategy in (None, "model"):
        strategies = [("model", None)]
    else:
        table = load_strategies(args.strategies)
        if args.strategy not in table:
            raise UsageError(f"unknown strategy {args.strategy!r} (have {', '.join(table)})")
        strategies = [(args.strategy, table[args.strategy])]
    rows, _, _ = _cells(args, strategies)
    out, close = _open_out(args.output)
    try:
        _write_csv(rows, out)
    finally:
        if close:
            out.close()
    if args.strict and _strict_fail(rows):
        print("strict: numeric and Monte Carlo results disagree (z > 3)", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def rank_strategies(rows):
    """Per horizon: strategies ordered by (expected failures, expected cost), ascending."""
    table = {}
    for r in rows:
        if r[4] != "numeric" and any(x[4] == "numeric" for x in rows):
            continue
        table.setdefault(float(r[3]), {}).setdefault(r[1], {})[r[2]] = float(r[5])
    out = {}
    for T, per in table.items():
        out[T] = sorted(per, key=lambda s: (per[s].get("expected_failures", 0.0), per[s].get("expected_cost", 0.0), s))
    return out


def cmd_compare(args):
    table = load_strategies(args.strategies)
    rows, _, _ = _cells(args, list(table.items()))
    out, close = _open_out(args.output)
    try:
        rows = _write_csv(rows, out)
    finally:
        if close:
            out.close()
    for T, order in sorted(rank_strategies(rows).items()):
        print(f"horizon {T:g}: " + " < ".join(order), file=sys.stderr)
    if args.strict and _strict_fail(rows):
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_decompose(args):
    tree = _check(resolve_model(args.model))
    if args.phases is not None:
        tree = tree.with_policy(replace(tree.policy, timer_phases=args.phases))
    plan = find_and_split(tree, args.abstract_phases)
    T = _horizons([args.horizon])[0]
    if T > 0 and not plan.is_monolithic:
        res = abstract_analyze(tree, ["reliability"], [T], NumericsConfig(epsilon=args.epsilon), plan=plan)
        plan = res.plan
    plan.horizon = T
    doc = plan.to_dict()
    if args.report_states:
        doc["state_space"] = state_space_report(tree, state_budget=args.state_budget,
                                                abstract_phase_count=args.abstract_phases)
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.emit_plan:
        with open(args.emit_plan, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.emit_plan:
        print(f"{len(plan.subgraphs)} sub-graph(s); plan written to {args.emit_plan}", file=sys.stderr)
    return EXIT_OK


def prism_sketch(bundle) -> str:
    """Best-effort rendering of the components in the PRISM module language."""
    lines = ["// best-effort sketch for manual cross-checks; not a supported interchange format", "ctmc", ""]
    var = {}
    prop_where = {}
    for comp in bundle.components:
        v = "s_" + "".join(ch if ch.isalnum() else "_" for ch in comp.name)
        var[comp.name] = v
        for p in comp.ctmc.props:
            states = [s for s in range(comp.ctmc.n_states) if p in comp.ctmc.labels_of(s)]
            prop_where[p] = (v, states)

    def prop_expr(p):
        if p not in prop_where:
            return "false"
        v, states = prop_where[p]
        return "(" + (" | ".join(f"{v}={s}" for s in states) or "false") + ")"

    def guard_expr(g):
        if isinstance(g, Named):
            return guard_expr(g.inner)
        if isinstance(g, AnyOf):
            return "(" + (" | ".join(prop_expr(p) for p in g.names) or "false") + ")"
        if isinstance(g, Not):
            return "!" + guard_expr(g.inner)
        if isinstance(g, All):
            return "(" + " & ".join(guard_expr(p) for p in g.parts) + ")"
        if isinstance(g, AnyG):
            return "(" + " | ".join(guard_expr(p) for p in g.parts) + ")"
        if isinstance(g, _Const):
            return "true" if g.value else "false"
        return "true"

    for comp in bundle.components:
        c = comp.ctmc
        v = var[comp.name]
        mod = "".join(ch if ch.isalnum() else "_" for ch in comp.name)
        lines.append(f"module {mod}")
        lines.append(f"  {v} : [0..{c.n_states - 1}] init {c.initial};")
        for s, lab, t, r, g in c.edges():
            rate = "1e6 /* immediate */" if r == float("inf") else repr(r)
            cond = f"{v}={s}" + (f" & {guard_expr(g)}" if g is not None else "")
            name = "".join(ch if ch.isalnum() else "_" for ch in lab)
            lines.append(f"  [{name}] {cond} -> {rate} : ({v}'={t});")
        lines.append("endmodule")
        lines.append("")
    lines.append(f"label \"failed\" = {guard_expr(bundle.failed_predicate)};")
    return "\n".join(lines) + "\n"


def cmd_export(args):
    tree = _check(resolve_model(args.model))
    if args.what == "dot":
        text = to_dot(tree)
    else:
        bundle = assemble_system(duplicate_rdep_inputs(tree), state_budget=args.state_budget)
        text = to_text(bundle.ctmc) if args.what == "ctmc" else prism_sketch(bundle)
    out, close = _open_out(args.output)
    try:
        out.write(text)
    finally:
        if close:
            out.close()
    return EXIT_OK


# --------------------------------------------------------------------------
# Argument parsing


def _analysis_flags(p, strategies_required=False):
    p.add_argument("model", help="model file or bundled model name")
    p.add_argument("--strategies", required=strategies_required, help="strategy file (default: the bundled M0..M4)")
    p.add_argument("--metric", "--metrics", action="append", default=[], help="comma-separated metrics or 'all'")
    p.add_argument("--horizons", nargs="+", default=["0,5,10,15,20,25"], help="horizons in years (suffixes y/mo/w/d/h allowed)")
    p.add_argument("--engine", choices=["numeric", "mc", "both"], default="numeric")
    p.add_argument("--mode", choices=["monolithic", "decomposed"], default="monolithic")
    p.add_argument("--phases", type=int, default=None, help="Erlang phases of the maintenance timers")
    p.add_argument("--abstract-phases", type=int, default=4)
    p.add_argument("--epsilon", type=float, default=1e-9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--runs", type=int, default=10_000)
    p.add_argument("--sim", choices=["tree", "chain"], default="tree", help="Monte Carlo route")
    p.add_argument("--delay-mode", choices=[PHASE_TYPE, DETERMINISTIC], default=PHASE_TYPE)
    p.add_argument("--strict", action="store_true", help="exit 3 if any |z| > 3")
    p.add_argument("-o", "--output", default=None)


def build_parser():
    p = _Parser(prog="fmtcheck", description="Fault maintenance tree analysis.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    v = sub.add_parser("validate", help="check a model file")
    v.add_argument("model")
    v.set_defaults(func=cmd_validate)

    a = sub.add_parser("analyze", help="compute metrics")
    _analysis_flags(a)
    a.add_argument("--strategy", default=None, help="strategy name (default: the model's own policy)")
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("compare", help="compare maintenance strategies")
    _analysis_flags(c)
    c.set_defaults(func=cmd_compare)

    d = sub.add_parser("decompose", help="modular decomposition and abstraction plan")
    d.add_argument("model")
    d.add_argument("--horizon", default="5")
    d.add_argument("--emit-plan", default=None, metavar="FILE")
    d.add_argument("--report-states", action="store_true")
    d.add_argument("--state-budget", type=int, default=None)
    d.add_argument("--abstract-phases", type=int, default=4)
    d.add_argument("--phases", type=int, default=None)
    d.add_argument("--epsilon", type=float, default=1e-9)
    d.set_defaults(func=cmd_decompose)

    e = sub.add_parser("export", help="write DOT, CTMC text or a PRISM sketch")
    e.add_argument("model")
    e.add_argument("--what", required=True, choices=["dot", "ctmc", "prism-sketch"])
    e.add_argument("--state-budget", type=int, default=None)
    e.add_argument("-o", "--output", default=None)
    e.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"fmtcheck: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ModelError as exc:
        print(f"fmtcheck: invalid model: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericsError, DecompositionError, CompositionError) as exc:
        print(f"fmtcheck: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"fmtcheck: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
