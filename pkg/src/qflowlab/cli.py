"""The ``qflow`` command-line entry point.

Subcommands: verify | bubble | run | decompose | sweep | tensor.
Every subcommand accepts ``--config <path>`` (flat dotted-key text) and
``--out <dir>``; direct flags override config values.  Each run writes
its outputs plus a ``manifest.json`` (config echo, version, wall times,
termination reason, emitted files with SHA-256 digests), written last.
Exit codes: 0 pass, 1 check failure, 2 usage error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .config import (ConfigError, ScenarioConfig, default_config,
                     parse_config, serialize_config)

EXIT_PASS, EXIT_CHECK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3

__all__ = ["main", "RunManifest", "run_scenario", "EXIT_PASS",
           "EXIT_CHECK", "EXIT_USAGE", "EXIT_RUNTIME"]


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _json_text(obj) -> str:
    def default(o):
        if isinstance(o, (np.floating,)):
            return float(o)
        if isinstance(o, (np.integer,)):
            return int(o)
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.bool_,)):
            return bool(o)
        raise TypeError(f"not serializable: {type(o)}")
    return json.dumps(obj, sort_keys=True, indent=1, default=default) + "\n"


class RunManifest:
    """Output ledger for one scenario run; written last as manifest.json."""

    def __init__(self, cfg: ScenarioConfig, outdir: str):
        self.outdir = outdir
        self.data = {
            "config": serialize_config(cfg),
            "version": __version__,
            "started": time.time(),
            "finished": None,
            "termination": "incomplete",
            "threads": os.environ.get("QFLOW_THREADS", ""),
            "files": [],
        }

    def emit_text(self, name: str, text: str) -> str:
        path = os.path.join(self.outdir, name)
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
        self.data["files"].append({"path": name, "sha256": digest})
        return path

    def append_csv(self, name: str, header: str, row: str) -> str:
        """Append one row to a CSV ledger, creating it with a header."""
        path = os.path.join(self.outdir, name)
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        fresh = not os.path.exists(path)
        with open(path, "a", encoding="utf-8") as fh:
            if fresh:
                fh.write(header + "\n")
            fh.write(row + "\n")
        with open(path, "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        self.data["files"] = [f for f in self.data["files"]
                              if f["path"] != name]
        self.data["files"].append({"path": name, "sha256": digest})
        return path

    def close(self, termination: str):
        self.data["finished"] = time.time()
        self.data["termination"] = termination
        path = os.path.join(self.outdir, "manifest.json")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(_json_text(self.data))


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

def _scenario_run(cfg: ScenarioConfig, man: RunManifest) -> bool:
    from .flow import (FlowControls, ZonalOperator, constant_state,
                       zonal_perturbed_state, lojasiewicz_fit)

    n = cfg["n"]
    op = ZonalOperator(n, cfg["flow.K"])
    if cfg["flow.preset"] == "constant":
        init = constant_state(op)
    else:
        init = zonal_perturbed_state(op, cfg["flow.amplitude"],
                                     cfg["flow.degree"])
    controls = FlowControls(t_end=cfg["flow.t_end"], dt0=cfg["flow.dt0"],
                            dt_max=cfg["flow.dt_max"],
                            e_drift_tol=cfg["flow.e_drift_tol"],
                            stop_tol=cfg["flow.stop_tol"])
    from .flow import flow_run
    trace, final = flow_run(init, op, controls)
    man.emit_text("trace.csv", trace.to_csv())
    man.emit_text("state.json", _json_text({
        "n": n, "K": op.K, "t": final.t,
        "coeffs": [float(c) for c in final.coeffs]}))

    arr = trace.arrays()
    e0 = arr["E"][0]
    e_drift = float(np.max(np.abs(arr["E"] / e0 - 1.0)))
    v_steps = np.diff(arr["V"])
    mu_steps = np.diff(arr["mu"])
    f_steps = np.diff(arr["F"])
    checks = {
        "energy_drift": e_drift,
        "energy_ok": e_drift < 1e-6,
        "volume_nondecreasing": bool(np.all(v_steps >= -1e-8)),
        "mu_nonincreasing": bool(np.all(mu_steps <= 1e-8)),
        "f_nonincreasing": bool(np.all(f_steps <= 1e-8)),
        "termination": trace.termination,
    }
    try:
        checks["lojasiewicz"] = lojasiewicz_fit(trace)
    except (ValueError, RuntimeError) as e:
        checks["lojasiewicz"] = {"error": str(e)}
    man.emit_text("summary.json", _json_text(checks))
    man.emit_text("plot.txt", "\n".join([
        "# plain plotting commands; any gnuplot-compatible tool",
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set logscale y",
        "plot 'trace.csv' using 1:6 with lines title 'fH2'",
        "replot 'trace.csv' using 1:4 with lines title 'mu'",
    ]) + "\n")
    return bool(checks["energy_ok"] and checks["volume_nondecreasing"]
                and checks["mu_nonincreasing"]
                and checks["f_nonincreasing"])


def _verify_reports(cfg: ScenarioConfig):
    from .charts import flat_chart, sphere_chart, tt_rational_basis
    from .rational import monomial
    from .variations import (DomainWithBoundary, dw_identity_check,
                             dw_vanishes_lie, flat_tt_compact, koiso_check,
                             lie_direction_first, lie_direction_mixed,
                             lie_direction_second, linearize_curvature,
                             second_variation_tt)

    n = cfg["n"]
    tol = cfg["verify.tol"]
    full = cfg["verify.level"] == "full"
    reports = []

    def mono(e, c=1.0):
        return monomial(n, tuple(e), c, eps2=1.0)

    def generic_h():
        # degree-4 entries: on the flat background the integrated
        # Q-curvature linearization reduces to a flux of Lap(DR[h]),
        # which vanishes identically for lower-degree polynomials
        h = np.empty((n, n), dtype=object)
        for i in range(n):
            for j in range(i, n):
                e = [0] * n
                e[(i + j) % n] += 2
                e[(i * j + 1) % n] += 1
                e[(i + 2 * j) % n] += 1
                h[i, j] = mono(e, 0.1 * (1 + ((i + 1) * (j + 1)) % 5))
                h[j, i] = h[i, j]
        return h

    def vector_x():
        X = []
        for i in range(n):
            e1 = [0] * n
            e1[i] = 1
            e2 = [0] * n
            e2[(i + 1) % n] = 2
            X.append(mono(e1, 0.4) + mono(e2, -0.2 - 0.05 * i))
        return X

    charts = [("flat", flat_chart(n), flat_tt_compact(n))]
    if full:
        cap = sphere_chart(n, 4.0)
        charts.append(("cap", cap, tt_rational_basis(cap, max_deg=2,
                                                     p=2, seed=0)[7]))
    for label, chart, tth in charts:
        flat = label == "flat"
        coarse = DomainWithBoundary(chart, 0.8, nr=4, deg=3)
        ibp = DomainWithBoundary(chart, 0.8, nr=5 if flat else 8,
                                 deg=4 if flat else 5)
        # the Bochner integrands are polynomial on the flat chart, so a
        # degree-5 rule integrates them exactly
        koiso_dom = ibp if not flat \
            else DomainWithBoundary(chart, 0.8, nr=8, deg=5)
        tol_ibp = tol if flat else max(tol, 1e-4)
        lin = linearize_curvature(coarse, generic_h(), tol=tol)
        for key, rep in lin.items():
            rep.identity = f"{label}:{rep.identity}"
            reports.append(rep)
        lin_tt = linearize_curvature(coarse, tth, tol=tol, tt=True)
        for key, rep in lin_tt.items():
            if key in lin:
                continue
            rep.identity = f"{label}:{rep.identity}"
            reports.append(rep)
        rep = second_variation_tt(ibp, tth, tol=tol_ibp)
        rep.identity = f"{label}:{rep.identity}"
        reports.append(rep)
        for rep in koiso_check(koiso_dom, tth,
                               tol=1e-5 if flat else 1e-4).values():
            rep.identity = f"{label}:{rep.identity}"
            reports.append(rep)
        rep = dw_identity_check(koiso_dom, tth,
                                tol=1e-5 if flat else 1e-4)
        rep.identity = f"{label}:{rep.identity}"
        reports.append(rep)
        X = vector_x()
        rep = lie_direction_first(coarse, X, tol=tol)
        rep.identity = f"{label}:{rep.identity}"
        reports.append(rep)
        rep = dw_vanishes_lie(chart, X, coarse.ipts[::7], tol=tol)
        rep.identity = f"{label}:{rep.identity}"
        reports.append(rep)
        if full:
            rep = lie_direction_second(koiso_dom, X, tol=max(tol, 1e-3))
            rep.identity = f"{label}:{rep.identity}"
            reports.append(rep)
            rep = lie_direction_mixed(koiso_dom, X, tth, tol=max(tol, 1e-3))
            rep.identity = f"{label}:{rep.identity}"
            reports.append(rep)
    return reports


def _scenario_verify(cfg: ScenarioConfig, man: RunManifest) -> bool:
    reports = _verify_reports(cfg)
    lines = [json.dumps(r.to_dict(), sort_keys=True) for r in reports]
    man.emit_text("reports.jsonl", "\n".join(lines) + "\n")
    return all(r.passed for r in reports)


def _scenario_bubble(cfg: ScenarioConfig, man: RunManifest) -> bool:
    from .bubbles import (Bubble, PolyTensor, SphereChartGreens,
                          assemble_test_bubble, bubble_eval, bubble_on_sphere,
                          corrector_w, greens_sphere_radial, mci_integral,
                          ps_quotient, split_tensor, y4_constant)
    from .flow import ZonalOperator

    n, eps, delta = cfg["n"], cfg["epsilon"], cfg["delta"]
    report: dict = {"n": n, "epsilon": eps, "delta": delta}
    b = Bubble(n=n, eps=eps)
    # the grid must resolve the concentration scale
    h_eff = min(cfg["bubble.h"], eps / 50.0)
    report["pde_h"] = h_eff
    report["pde_residual"] = bubble_eval(b, h=h_eff,
                                         rmax=cfg["bubble.rmax"])["residual"]
    greens = greens_sphere_radial(n, M=cfg["greens.M"], K=cfg["greens.K"])
    chart = SphereChartGreens(greens, n)
    report["greens_A_p"] = greens.A_p
    report["mci"] = mci_integral(chart, n, delta)

    # spectral resolution must track the concentration scale
    k_q = int(min(4096, max(cfg["greens.K"], 12.0 / eps)))
    op = ZonalOperator(n, k_q)
    q = ps_quotient(op, bubble_on_sphere(n, eps)(op.theta))
    report["ps_quotient"] = q
    report["y4"] = y4_constant(n)

    tb = assemble_test_bubble(n, eps, delta, chart)
    rgrid = np.linspace(0.0, 2.0 * delta, 801)
    vals = tb.eval_radial(rgrid)
    field_csv = "r,v\n" + "\n".join(
        f"{_fmt(r)},{_fmt(v)}" for r, v in zip(rgrid, vals)) + "\n"
    man.emit_text("field.csv", field_csv)
    report["rescaled_deviation"] = tb.rescaled_deviation()

    if cfg["bubble.H"]:
        with open(cfg["bubble.H"], "r", encoding="utf-8") as fh:
            H = PolyTensor.from_json(fh.read())
        split = split_tensor(H, delta, eps, nr=cfg["bubble.split_nr"],
                             deg=cfg["bubble.split_deg"])
        report["split_residuals"] = split.residuals
        w, wrep = corrector_w(split, b)
        report["corrector"] = wrep

    ok = (report["pde_residual"] < 1e-6
          and abs(q["quotient"] / report["y4"] - 1.0) < 1e-2)
    report["passed"] = ok
    man.emit_text("report.json", _json_text(report))
    return ok


def _read_state(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    return data


def _scenario_decompose(cfg: ScenarioConfig, man: RunManifest) -> bool:
    from .decomposition import (LEDGER_HEADER, algebraic_inequality_check,
                                fit_bubbles, quantization_and_orthogonality,
                                weighted_spectrum)
    from .flow import ZonalOperator

    if not cfg["decompose.state"]:
        raise ConfigError("decompose requires decompose.state "
                          "(or --state <file>)")
    data = _read_state(cfg["decompose.state"])
    n = int(data.get("n", cfg["n"]))
    k = int(data.get("K", cfg["decompose.K"]))
    op = ZonalOperator(n, k)
    coeffs = np.asarray(data["coeffs"], dtype=float)
    if coeffs.size != k:
        raise ConfigError("state coefficient count does not match K")
    u = op.to_values(coeffs)

    u_inf = None
    spec = None
    if cfg["decompose.uinf"]:
        udata = _read_state(cfg["decompose.uinf"])
        u_inf = op.to_values(np.asarray(udata["coeffs"], dtype=float))
        spec = weighted_spectrum(op, u_inf, cfg["decompose.count"])

    rep = fit_bubbles(op, u, cfg["decompose.m"], u_inf=u_inf,
                      budget=cfg["decompose.budget"], seed=cfg["seed"])
    energy = float(np.sum(op.lam * coeffs * coeffs))
    vol = op.volume(coeffs)
    mu = energy / vol
    f_val = energy / vol ** ((n - 4.0) / n)
    diag = quantization_and_orthogonality(rep, mu_inf=mu, f_inf=f_val,
                                          spec=spec)
    alg = algebraic_inequality_check(seed=cfg["seed"])

    out = rep.as_dict()
    out.update({"mu": mu, "F": f_val, "diagnostics": diag,
                "algebraic": alg,
                "residual_recomputed": rep.recompute_residual()})
    man.emit_text("decomposition.json", _json_text(out))
    worst = rep.worst_separation()
    row = ",".join([str(rep.m), _fmt(rep.residual),
                    _fmt(diag["quant_residual"]), _fmt(diag["rho"]),
                    _fmt(worst if math.isfinite(worst) else -1.0)])
    man.append_csv("ledger.csv", LEDGER_HEADER, row)
    return alg["violations"] == 0 and diag["rho"] < 1.0


def _scenario_sweep(cfg: ScenarioConfig, man: RunManifest) -> bool:
    eps_list = []
    for tok in cfg["sweep.epsilons"].split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            v = float(tok)
        except ValueError:
            raise ConfigError(f"key 'sweep.epsilons': bad entry '{tok}'")
        if v <= 0:
            raise ConfigError("key 'sweep.epsilons': entries must be > 0")
        eps_list.append(v)
    rows = []
    ok = True
    for eps in eps_list:
        sub = f"eps_{_fmt(eps)}"
        subdir = os.path.join(man.outdir, sub)
        os.makedirs(subdir, exist_ok=True)
        sub_cfg = cfg.with_overrides(**{"epsilon": eps,
                                        "scenario": "bubble"})
        sub_man = RunManifest(sub_cfg, subdir)
        passed = _scenario_bubble(sub_cfg, sub_man)
        sub_man.close("complete" if passed else "check_failure")
        ok = ok and passed
        with open(os.path.join(subdir, "report.json"), encoding="utf-8") \
                as fh:
            rep = json.load(fh)
        rows.append(",".join([
            _fmt(eps), _fmt(rep["pde_residual"]),
            _fmt(rep["ps_quotient"]["quotient"]), _fmt(rep["mci"]),
            _fmt(rep["rescaled_deviation"]), "1" if rep["passed"] else "0"]))
        for f in sub_man.data["files"]:
            man.data["files"].append(
                {"path": os.path.join(sub, f["path"]),
                 "sha256": f["sha256"]})
    header = "epsilon,pde_residual,quotient,mci,rescaled_deviation,passed"
    man.emit_text("summary.csv", header + "\n" + "\n".join(rows) + "\n")
    return ok


def _scenario_tensor(cfg: ScenarioConfig, man: RunManifest) -> bool:
    from .bubbles import weyl_poly_tensor

    H = weyl_poly_tensor(cfg["n"], degree=cfg["tensor.degree"],
                         seed=cfg["tensor.seed"])
    man.emit_text("tensor.json", H.to_json())
    res = H.constraint_residuals()
    res["degrees"] = sorted(H.degrees())
    res["divergence_free"] = not H.divergence_coeffs()
    man.emit_text("tensor_report.json", _json_text(res))
    return res["trace"] < 1e-12 and res["tangency"] < 1e-12


_SCENARIO_FUNCS = {
    "run": _scenario_run,
    "verify": _scenario_verify,
    "bubble": _scenario_bubble,
    "decompose": _scenario_decompose,
    "sweep": _scenario_sweep,
    "tensor": _scenario_tensor,
}


def run_scenario(cfg: ScenarioConfig, outdir: str | None = None) -> int:
    outdir = outdir or cfg["out"]
    os.makedirs(outdir, exist_ok=True)
    man = RunManifest(cfg, outdir)
    try:
        passed = _SCENARIO_FUNCS[cfg.scenario](cfg, man)
    except ConfigError as e:
        man.close(f"usage error: {e}")
        print(f"qflow: {e}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        man.close("interrupted")
        return EXIT_RUNTIME
    except Exception as e:  # noqa: BLE001 - recorded in the manifest
        man.close(f"error: {e}")
        print(f"qflow: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    man.close("complete" if passed else "check_failure")
    return EXIT_PASS if passed else EXIT_CHECK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat dotted-key config file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qflow",
                                 description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="identity checks vs FD oracles")
    _add_common(p)
    p.add_argument("--level", choices=("fast", "full"))

    p = sub.add_parser("bubble", help="bubble/test-function construction")
    _add_common(p)
    p.add_argument("--eps", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--H", help="tensor coefficient file (JSON)")

    p = sub.add_parser("run", help="integrate the zonal flow")
    _add_common(p)
    p.add_argument("--K", type=int)
    p.add_argument("--t-end", type=float)
    p.add_argument("--preset", choices=("constant", "perturbed"))

    p = sub.add_parser("decompose", help="bubble decomposition of a state")
    _add_common(p)
    p.add_argument("--state", help="state file (JSON)")
    p.add_argument("--m", type=int)
    p.add_argument("--uinf", help="smooth-part state file (JSON)")

    p = sub.add_parser("sweep", help="epsilon ladder of bubble scenarios")
    _add_common(p)
    p.add_argument("--epsilons", help="comma-separated scales")

    p = sub.add_parser("tensor", help="emit a symmetric trace-free tensor")
    _add_common(p)
    p.add_argument("--degree", type=int)
    p.add_argument("--tensor-seed", type=int)
    return ap


_FLAG_TO_KEY = {
    "seed": "seed", "n": "n", "level": "verify.level",
    "eps": "epsilon", "delta": "delta", "H": "bubble.H",
    "K": "flow.K", "t_end": "flow.t_end", "preset": "flow.preset",
    "state": "decompose.state", "m": "decompose.m",
    "uinf": "decompose.uinf", "epsilons": "sweep.epsilons",
    "degree": "tensor.degree", "tensor_seed": "tensor.seed",
    "out": "out",
}


def main(argv=None) -> int:
    threads = os.environ.get("QFLOW_THREADS")
    if threads and threads.isdigit():
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else 0
    try:
        if args.config:
            cfg = parse_config(args.config)
        else:
            cfg = default_config(args.command)
        overrides = {"scenario": args.command}
        for flag, key in _FLAG_TO_KEY.items():
            val = getattr(args, flag, None)
            if val is not None:
                overrides[key] = val
        cfg = cfg.with_overrides(**overrides)
    except (ConfigError, OSError) as e:
        print(f"qflow: {e}", file=sys.stderr)
        return EXIT_USAGE
    return run_scenario(cfg)


if __name__ == "__main__":
    sys.exit(main())
