"""Configuration-driven experiment runner.

Modes: ``table`` reproduces convergence tables for the two benchmark
problems (exact-solution errors for benchmark 1, two-mesh errors for
benchmark 2); ``audit`` runs the weight-property audit; ``recurrence`` runs
the scalar stability lab; ``truncation`` runs the consistency oracles.

Configuration is a flat key=value file overridable by command-line flags
(flags win); the output directory additionally honors the FRACSTEP_OUT
environment variable above both.  CSV outputs are byte-stable across
reruns; timestamps go only to the run.log sidecar.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import analysis, kernel, problems
from .kernel import RecurrenceSpec, SchemeParams, audit_properties, solve_scalar_recurrence
from .mesh import build_graded_mesh
from .solver import march, spec_hash


class UsageError(Exception):
    """Configuration problem; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits with code 2
        raise UsageError(message)


def _parse_list(text: str, token_parser) -> list:
    out = []
    for tok in str(text).split(","):
        tok = tok.strip()
        if tok:
            out.append(token_parser(tok))
    if not out:
        raise UsageError(f"empty list value: {text!r}")
    return out


def resolve_token(token: str, alpha: float) -> float:
    """Numbers plus the symbolic forms '2/alpha' and 'alpha-1'."""
    key = token.replace(" ", "").lower()
    if key in ("2/alpha", "2/a"):
        return 2.0 / alpha
    if key in ("alpha-1", "a-1"):
        return alpha - 1.0
    try:
        return float(token)
    except ValueError:
        raise UsageError(f"cannot parse value {token!r}") from None


def read_config(path: str) -> dict[str, str]:
    """Flat key = value lines; '#' starts a comment."""
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    values: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value, got {line!r}")
            key, value = line.split("=", 1)
            values[key.strip().lower()] = value.strip()
    return values


_MODE_DEFAULTS = {
    "table": dict(alpha="0.5", r="2", n="64,128,256", t="0.5"),
    "audit": dict(alpha="0.3,0.5,0.7", r="1,2", n="32,64,128", t="1.0"),
    "recurrence": dict(alpha="0.5", r="2", n="128,256", t="1.0",
                       gamma="alpha-1", lambda1="0", lambda2="0"),
    "truncation": dict(alpha="0.5", r="2", n="32,64,128", t="1.0",
                       beta="alpha,1,2"),
}


def build_parser() -> _Parser:
    p = _Parser(prog="fracstep", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--mode", choices=sorted(_MODE_DEFAULTS), default=None)
    p.add_argument("--example", default=None, help="benchmark id for table mode: 1 or 2")
    p.add_argument("--alpha", default=None, help="comma list of fractional orders in (0,1)")
    p.add_argument("--r", default=None, help="comma list of gradings; '2/alpha' allowed")
    p.add_argument("--N", dest="n", default=None, help="comma list of step counts")
    p.add_argument("--M", dest="m", default=None, help="cells per direction (M1 = M2)")
    p.add_argument("--T", dest="t", default=None, help="final time")
    p.add_argument("--nu", default=None, help="diffusivity (default: benchmark's)")
    p.add_argument("--out", default=None, help="output directory (FRACSTEP_OUT overrides)")
    p.add_argument("--jobs", default=None, help="worker processes for experiment cells")
    p.add_argument("--config", default=None, help="flat key=value config file")
    return p


def _settings(args) -> dict[str, str]:
    """Merge defaults < config < flags; resolve the output directory."""
    cfg = read_config(args.config) if args.config else {}
    mode = args.mode or cfg.get("mode") or "table"
    if mode not in _MODE_DEFAULTS:
        raise UsageError(f"unknown mode {mode!r}")
    merged = dict(_MODE_DEFAULTS[mode])
    merged.update({k: v for k, v in cfg.items() if k != "mode"})
    for key in ("example", "alpha", "r", "n", "m", "t", "nu", "out", "jobs"):
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = str(val)
    merged["mode"] = mode
    merged["out"] = os.environ.get("FRACSTEP_OUT", merged.get("out", "out"))
    merged.setdefault("jobs", "1")
    merged.setdefault("m", "25")
    return merged


def _alphas(settings) -> list[float]:
    alphas = _parse_list(settings["alpha"], float)
    for a in alphas:
        if not 0.0 < a < 1.0:
            raise UsageError(f"alpha must lie in (0,1), got {a}")
    return alphas


def _steps_list(settings, doubling: bool) -> list[int]:
    Ns = _parse_list(settings["n"], lambda s: int(float(s)))
    if any(n < 1 for n in Ns):
        raise UsageError(f"N values must be positive, got {Ns}")
    if doubling:
        for a, b in zip(Ns, Ns[1:]):
            if b != 2 * a:
                raise UsageError(f"N list must strictly double for rate fitting, got {Ns}")
    return Ns


# --- experiment cells (module level so worker processes can import them) ----

def _ex1_cell(desc):
    example, alpha, r, N, M, T, nu = desc
    spec = problems.by_id(example, alpha, N, r, M, M, T, nu)
    sol = march(spec)
    series = analysis.error_series(sol)
    return {"E_L": series.E_L, "E_G": series.E_G, "hash": spec_hash(spec)}


def _ex2_cell(desc):
    example, alpha, r, N, M, T, nu = desc
    spec = problems.by_id(example, alpha, N, r, M, M, T, nu)
    sol = march(spec)
    return {"final": sol.final, "h1": sol.grid.h1, "h2": sol.grid.h2,
            "hash": spec_hash(spec)}


def _run_cells(fn, descs, jobs: int, log) -> dict:
    results = {}
    if jobs <= 1:
        for d in descs:
            t0 = time.perf_counter()
            try:
                results[d] = ("ok", fn(d))
            except Exception as exc:  # per-cell isolation: record and continue
                results[d] = ("error", f"{type(exc).__name__}: {exc}")
            log(f"cell {d}: {results[d][0]} ({time.perf_counter() - t0:.2f}s)")
        return results
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = {d: pool.submit(fn, d) for d in descs}
        for d, fut in futures.items():
            try:
                results[d] = ("ok", fut.result())
            except Exception as exc:
                results[d] = ("error", f"{type(exc).__name__}: {exc}")
            log(f"cell {d}: {results[d][0]}")
    return results


def _r_label(token: str) -> str:
    return token.replace(" ", "").replace("/", "_over_")


def run_table(settings, log) -> int:
    example = settings.get("example")
    if example is None:
        raise UsageError("table mode needs --example 1 or 2")
    if str(example) not in ("1", "2"):
        raise UsageError(f"table mode supports benchmarks 1 and 2, got {example!r} "
                         "(custom problems are library-level)")
    alphas = _alphas(settings)
    r_tokens = _parse_list(settings["r"], str)
    Ns = _steps_list(settings, doubling=True)
    M = int(settings["m"])
    T = float(settings["t"])
    nu = float(settings["nu"]) if "nu" in settings else None
    jobs = int(settings["jobs"])
    out = settings["out"]
    os.makedirs(out, exist_ok=True)

    two_mesh = str(example) == "2"
    failures = 0
    for token in r_tokens:
        blocks = []
        for alpha in alphas:
            r = resolve_token(token, alpha)
            if r < 1.0:
                raise UsageError(f"grading must satisfy r >= 1, got {r} (token {token!r})")
            march_Ns = list(Ns) + ([2 * Ns[-1]] if two_mesh else [])
            descs = [(str(example), alpha, r, N, M, T, nu) for N in march_Ns]
            cells = _run_cells(_ex2_cell if two_mesh else _ex1_cell, descs, jobs, log)
            bad = {d: msg for d, (st, msg) in cells.items() if st == "error"}
            for d, msg in bad.items():
                log(f"FAILED {d}: {msg}")
                failures += 1
            if bad:
                continue
            payload = {d[3]: cells[d][1] for d in descs}
            if two_mesh:
                h1 = payload[Ns[0]]["h1"]
                h2 = payload[Ns[0]]["h2"]
                E_L = [float(np.sqrt(h1 * h2 * np.sum(
                    (payload[N]["final"] - payload[2 * N]["final"]) ** 2)))
                    for N in Ns]
                blocks.append(analysis.build_block(
                    str(example), alpha, r, token, Ns, M, M, E_L,
                    [payload[N]["hash"] for N in Ns]))
            else:
                blocks.append(analysis.build_block(
                    str(example), alpha, r, token, Ns, M, M,
                    [payload[N]["E_L"] for N in Ns],
                    [payload[N]["hash"] for N in Ns],
                    E_G=[payload[N]["E_G"] for N in Ns]))
        if not blocks:
            continue
        stem = f"example{example}_r{_r_label(token)}"
        analysis.write_table_csv(blocks, os.path.join(out, stem + ".csv"))
        title = (f"Benchmark {example}, r = {token} "
                 f"(M1 = M2 = {M}, T = {T:g}"
                 + (f", nu = {nu:g}" if nu is not None else "") + ")")
        text = analysis.render_blocks(blocks, title)
        with open(os.path.join(out, stem + ".txt"), "w") as fh:
            fh.write(text)
        sys.stdout.write(text + "\n")
    return 2 if failures else 0


def run_audit(settings, log) -> int:
    alphas = _alphas(settings)
    r_tokens = _parse_list(settings["r"], str)
    Ns = _steps_list(settings, doubling=False)
    T = float(settings["t"])
    out = settings["out"]
    os.makedirs(out, exist_ok=True)
    rows = []
    all_ok = True
    for alpha in alphas:
        params = SchemeParams(alpha)
        for token in r_tokens:
            r = resolve_token(token, alpha)
            for N in Ns:
                mesh = build_graded_mesh(T, N, r)
                rep = audit_properties(mesh, params)
                ok = rep.all_passed
                all_ok = all_ok and ok
                log(f"audit alpha={alpha} r={token} N={N}: "
                    + ("pass" if ok else "FAIL"))
                for check in rep.checks():
                    wm = "" if check.worst_margin is None else f"{check.worst_margin:.6e}"
                    wi = "" if not check.worst_index else \
                        ";".join(str(i) for i in check.worst_index)
                    rows.append([f"{alpha:g}", f"{r:.12g}", N, f"{rep.sigma:.12g}",
                                 int(rep.hypothesis_ok), check.name or "",
                                 int(check.evaluated),
                                 "" if check.passed is None else int(check.passed),
                                 wm, wi])
    with open(os.path.join(out, "audit.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "r", "N", "sigma", "hypothesis_ok", "property",
                         "evaluated", "passed", "worst_margin", "worst_index"])
        writer.writerows(rows)
    sys.stdout.write(f"audit: {'all pass' if all_ok else 'FAILURES PRESENT'} "
                     f"({len(rows)} property rows) -> {out}/audit.csv\n")
    return 0


def run_recurrence(settings, log) -> int:
    alphas = _alphas(settings)
    r_tokens = _parse_list(settings["r"], str)
    Ns = _steps_list(settings, doubling=False)
    T = float(settings["t"])
    out = settings["out"]
    os.makedirs(out, exist_ok=True)
    gammas = _parse_list(settings["gamma"], str)
    l1s = _parse_list(settings["lambda1"], float)
    l2s = _parse_list(settings["lambda2"], float)
    summary = []
    for alpha in alphas:
        params = SchemeParams(alpha)
        for token in r_tokens:
            r = resolve_token(token, alpha)
            for N in Ns:
                mesh = build_graded_mesh(T, N, r)
                for gtok in gammas:
                    gamma = resolve_token(gtok, alpha)
                    for l1 in l1s:
                        for l2 in l2s:
                            spec = RecurrenceSpec(mesh, params, gamma, l1, l2)
                            res = solve_scalar_recurrence(spec)
                            name = (f"recurrence_a{alpha:g}_r{_r_label(token)}_N{N}"
                                    f"_g{gamma:g}_l{l1:g}_{l2:g}.csv")
                            kernel.recurrence_to_csv(res, os.path.join(out, name))
                            summary.append([f"{alpha:g}", f"{r:.12g}", N, f"{gamma:g}",
                                            f"{l1:g}", f"{l2:g}",
                                            f"{res.constant:.17g}",
                                            "" if spec.admissible is None
                                            else int(spec.admissible)])
                            log(f"recurrence a={alpha} r={token} N={N} g={gamma} "
                                f"l=({l1},{l2}): C={res.constant:.4e}")
    with open(os.path.join(out, "recurrence_summary.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "r", "N", "gamma", "lambda1", "lambda2",
                         "constant", "admissible"])
        writer.writerows(summary)
    sys.stdout.write(f"recurrence lab: {len(summary)} runs -> {out}\n")
    return 0


def run_truncation(settings, log) -> int:
    alphas = _alphas(settings)
    r_tokens = _parse_list(settings["r"], str)
    Ns = _steps_list(settings, doubling=False)
    T = float(settings["t"])
    M = int(settings["m"])
    out = settings["out"]
    os.makedirs(out, exist_ok=True)
    betas = _parse_list(settings["beta"], str)
    rows = []
    for alpha in alphas:
        for token in r_tokens:
            r = resolve_token(token, alpha)
            for N in Ns:
                for btok in betas:
                    beta = alpha if btok.strip().lower() == "alpha" else float(btok)
                    fit = analysis.truncation_r1_oracle(alpha, r, N, beta, T=T)
                    rows.append(["r1", f"{alpha:g}", f"{r:.12g}", N, f"{beta:g}",
                                 f"{fit.constant:.17g}", f"{fit.max_residual:.17g}"])
                spec = problems.example1(alpha, N, r, M, M)
                for fit in (analysis.truncation_r3_oracle(spec),
                            analysis.truncation_r2_oracle(spec)):
                    rows.append([fit.label, f"{alpha:g}", f"{r:.12g}", N, "",
                                 f"{fit.constant:.17g}", f"{fit.max_residual:.17g}"])
                log(f"truncation a={alpha} r={token} N={N} done")
    with open(os.path.join(out, "truncation.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "alpha", "r", "N", "beta", "C", "max_residual"])
        writer.writerows(rows)
    sys.stdout.write(f"truncation oracles: {len(rows)} fits -> {out}/truncation.csv\n")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        settings = _settings(args)
        out = settings["out"]
        os.makedirs(out, exist_ok=True)
        log_path = os.path.join(out, "run.log")

        def log(message: str) -> None:
            with open(log_path, "a") as fh:
                fh.write(f"[{time.strftime('%Y-%m-%d %H:%M:%S')}] {message}\n")

        log(f"run start: mode={settings['mode']} settings={settings}")
        runner = {"table": run_table, "audit": run_audit,
                  "recurrence": run_recurrence, "truncation": run_truncation}
        code = runner[settings["mode"]](settings, log)
        log(f"run end: exit={code}")
        return code
    except UsageError as exc:
        sys.stderr.write(f"fracstep: error: {exc}\n")
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
