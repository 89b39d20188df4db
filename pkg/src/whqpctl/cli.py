"""Command-line front end: ``solve``, ``simulate``, ``verify`` and ``plot``."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import verify as _verify
from .sim import (WEIGHT_CASES, default_scenario, load_scenario, quat_to_matrix, run, singular_scenario,
                  summarize, write_summary)
from .whqp import (CycleDetected, IterationLimitExceeded, ParseError, active_search, level_objectives,
                   parse_problem)

EXIT_OK, EXIT_FAILURE, EXIT_PARSE = 0, 1, 2


def _fmt(v: float) -> str:
    return f"{v:.12g}"


def cmd_solve(args) -> int:
    try:
        text = Path(args.problem).read_text()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    try:
        h = parse_problem(text)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    try:
        st = active_search(h)
    except (CycleDetected, IterationLimitExceeded, ArithmeticError, ValueError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print("x " + " ".join(_fmt(v) for v in st.x))
    print("active " + " ".join(f"{k}:{i}" for k, i in sorted(st.active)))
    print("objectives " + " ".join(_fmt(v) for v in level_objectives(h, st.x)))
    return EXIT_OK


def _scenario(args):
    over = {k: getattr(args, k) for k in ("dt", "duration") if getattr(args, k) is not None}
    if args.case == "singular":
        return singular_scenario(**over)
    if args.case:
        over["case"] = args.case
    if args.scenario:
        return load_scenario(args.scenario, **over)
    return default_scenario(**over)


def cmd_simulate(args) -> int:
    sc = _scenario(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log = run(sc)
    log.write_csv(out / "log.csv")
    summary = summarize(sc, log)
    write_summary(summary, out / "summary.txt")
    print((out / "summary.txt").read_text(), end="")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = _verify.run_suite(args.suite, args.seed, args.count)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        print(f"{status}  {r.name:<{width}}  checks {r.checked:6d}  max residual {r.worst:.3e}")
        for msg in r.failures[:5]:
            print(f"      {msg}")
    return EXIT_OK if all(r.ok for r in results) else EXIT_FAILURE


ROT_COLUMNS = [f"r{i}{j}" for i in range(1, 4) for j in range(1, 4)]


def read_log(path):
    """Header and float columns of a trajectory CSV (the ``active`` column is dropped)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(1, "empty log file")
    header = rows[0]
    need = ["t", "px", "py", "pz", "qw", "qx", "qy", "qz"]
    missing = [c for c in need if c not in header]
    if missing:
        raise ParseError(1, f"missing columns {', '.join(missing)}")
    cols = {name: [] for name in header if name != "active"}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(lineno, f"expected {len(header)} fields, got {len(row)}")
        for name, val in zip(header, row):
            if name == "active":
                continue
            try:
                cols[name].append(float(val))
            except ValueError:
                raise ParseError(lineno, f"bad number {val!r} in column {name}") from None
    return header, {k: np.array(v) for k, v in cols.items()}


def plot_data(cols, case: str = None):
    """Rows of ``t, r11..r33, px, py, pz`` plus reference series for a known case."""
    header = ["t"] + ROT_COLUMNS + ["px", "py", "pz"]
    t = cols["t"]
    ref = None
    if case and t.size:
        sc = default_scenario(case, duration=max(float(t[-1]), 1e-3))
        header += ["sx", "sy", "cx", "cy"]
        ref = sc.spiral
    rows = []
    for i in range(t.size):
        quat = np.array([cols[c][i] for c in ("qw", "qx", "qy", "qz")])
        R = quat_to_matrix(quat)
        row = [t[i]] + list(R.ravel()) + [cols["px"][i], cols["py"][i], cols["pz"][i]]
        if ref is not None:
            s = ref(t[i])[0]
            row += [s[0], s[1], ref.center[0], ref.center[1]]
        rows.append(row)
    return header, rows


def _svg(header, rows, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    data = np.array(rows).reshape(-1, len(header))
    col = {name: data[:, i] for i, name in enumerate(header)}
    fig, axes = plt.subplots(1, 3, figsize=(13, 4))
    for name in ROT_COLUMNS:
        axes[0].plot(col["t"], col[name], label=name)
    axes[0].set_xlabel("t [s]")
    axes[0].set_title("rotation entries")
    axes[0].legend(fontsize=6, ncol=3)
    for name in ("px", "py", "pz"):
        axes[1].plot(col["t"], col[name], label=name)
    axes[1].set_xlabel("t [s]")
    axes[1].set_title("TCP position [m]")
    axes[1].legend(fontsize=7)
    axes[2].plot(col["px"], col["py"], label="TCP")
    if "sx" in col:
        axes[2].plot(col["sx"], col["sy"], "--", label="spiral")
        axes[2].plot(col["cx"][:1], col["cy"][:1], "k+", label="center")
    axes[2].set_aspect("equal", adjustable="datalim")
    axes[2].set_title("xy path [m]")
    axes[2].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def cmd_plot(args) -> int:
    try:
        _, cols = read_log(args.log)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    header, rows = plot_data(cols, args.case)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])
    if args.svg:
        _svg(header, rows, args.svg)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="whqpctl", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve a hierarchy given in the text problem format")
    s.add_argument("problem")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("simulate", help="run a scenario and write log.csv and summary.txt")
    s.add_argument("scenario", nargs="?", help="YAML scenario file (defaults to the built-in scene)")
    s.add_argument("--case", choices=sorted(WEIGHT_CASES) + ["singular"])
    s.add_argument("--out", default="out")
    s.add_argument("--dt", type=float)
    s.add_argument("--duration", type=float)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("verify", help="run self-check suites")
    s.add_argument("suite", nargs="?", default="all", choices=sorted(_verify.SUITES) + ["all"])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--count", type=int, default=100)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("plot", help="extract rotation and position series from a log")
    s.add_argument("log")
    s.add_argument("--out", default="plot.csv")
    s.add_argument("--case", choices=sorted(WEIGHT_CASES), help="add the spiral and center of this case")
    s.add_argument("--svg", help="also write a simple SVG figure (needs matplotlib)")
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
