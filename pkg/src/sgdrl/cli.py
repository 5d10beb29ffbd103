"""Command-line experiment runner.

Exit codes: 0 pass, 1 condition failed, 2 bad input, 3 divergence, 4 certificate failure.
"""
from __future__ import annotations

import argparse
import csv
import sys
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from . import certificates as cert_mod
from .drift import (
    check_contraction,
    check_property,
    default_samples,
    derived_bounds_check,
    estimate_property_v,
    transport_constants,
)
from .engine import fmt, simulate_ensemble
from .experiment import ConfigError, ExperimentConfig, build_problem, theta0_for
from .gronwall import CertificateUnavailable, RecursionSpec, bound_constant, recursion_envelope, verify_bound
from .linreg import (
    affine_noise_kappa,
    centered_kappa,
    explicit_noise_kappa,
    interchange_check,
    parse_model,
    spd_contraction_constant,
    true_minimizer,
)
from .schedules import PolynomialSchedule, check_admissibility, parse_schedule

EXIT_OK, EXIT_FAIL, EXIT_PARSE, EXIT_DIVERGED, EXIT_CERT = 0, 1, 2, 3, 4


def artifact_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


def write_kv(path: Path, items: dict) -> str:
    text = "".join(f"{k}={v}\n" for k, v in items.items())
    path.write_text(text, encoding="utf-8")
    return text


def write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(rows)


def write_manifest(out: Path, command: str, values: dict) -> None:
    items = {"command": command, "artifact_version": artifact_version()}
    items.update(sorted(values.items()))
    write_kv(out / "manifest.txt", items)


def _prepare(args, command: str) -> tuple[ExperimentConfig, Path]:
    cfg = ExperimentConfig.load(args.config, dict(args.set))
    out = Path(args.out) if args.out else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, command, cfg.values)
    return cfg, out


def _c_and_kappa(cfg, built, p: int) -> tuple[float, float]:
    c = cfg.optional_float("c")
    c = built.contraction_c if c is None else c
    if not np.isfinite(c):
        raise ConfigError("no contraction constant could be computed; set c")
    kappa = cfg.optional_float("kappa")
    return c, built.noise_kappa(p) if kappa is None else kappa


# ---------------------------------------------------------------------------
# commands


def cmd_check_schedule(args) -> int:
    try:
        sched = parse_schedule(args.schedule)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    rep = check_admissibility(sched, args.c, args.k_max, args.horizon, args.tol)
    items = {
        "schedule": sched.describe(),
        "c": fmt(rep.c),
        "k_max": rep.k_max,
        "requested_horizon": rep.requested_horizon,
        "evaluated_horizon": fmt(rep.horizon),
        "limsup_ok": rep.limsup_ok,
        "tail_gamma_max": fmt(rep.tail_gamma_max),
        **{f"min_tail_D_{k}": fmt(v) for k, v in rep.per_k_min_tail},
        "verdict": rep.verdict,
    }
    if rep.analytic_verdict is not None:
        items["analytic_verdict"] = rep.analytic_verdict
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        print(write_kv(out / "admissibility.txt", items), end="")
    else:
        print("".join(f"{k}={v}\n" for k, v in items.items()), end="")
    return EXIT_OK if rep.admissible else EXIT_FAIL


def cmd_check_drift(args) -> int:
    cfg, out = _prepare(args, "check-drift")
    built = build_problem(cfg)
    drift = built.problem.drift
    c = cfg.optional_float("c")
    c = built.contraction_c if c is None else c
    if not np.isfinite(c):
        raise ConfigError("no contraction constant could be computed; set c")
    samples = default_samples(drift.target)
    cert = check_contraction(drift, c, samples)
    items = {"problem": cfg.values["problem"], "c": fmt(c), "samples_checked": cert.samples_checked,
             "max_violation": fmt(cert.max_violation), "contraction_valid": cert.valid}
    if cert.valid:
        derived = derived_bounds_check(drift, c, c, samples)
        items.update({f"derived_{k}": fmt(v) for k, v in derived.items.items()})
        items["derived_ok"] = derived.ok
        c_ii = transport_constants("i", (c,), "ii")
        items["transport_ii_valid"] = check_property(drift, "ii", c_ii, samples).valid
        items["transport_iii_valid"] = check_property(drift, "iii", transport_constants("i", (c,), "iii"), samples).valid
    C_v, r_v = estimate_property_v(drift, samples)
    items.update({"best_v_C": fmt(C_v), "best_v_r": fmt(r_v)})
    if C_v > 0:
        items["transport_v_to_i_c"] = fmt(transport_constants("v", (C_v, r_v), "i")[0])
    print(write_kv(out / "drift_report.txt", items), end="")
    return EXIT_OK if cert.valid else EXIT_FAIL


def cmd_gronwall_bound(args) -> int:
    cfg, out = _prepare(args, "gronwall-bound")
    try:
        v = cfg.values
        spec = RecursionSpec(
            N=int(v.get("N", 0)),
            k=float(v.get("k", 1)),
            kappa=float(v["kappa"]),
            c=float(v["c"]),
            schedule=cfg.schedule,
            e_prefix=tuple(np.atleast_1d([float(x) for x in v.get("e_prefix", "0").replace(";", " ").split()])),
        )
        horizon = int(float(v.get("horizon", 10**6)))
        n_max = int(float(v.get("n_max", 10**5)))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"gronwall-bound: {exc}") from exc
    try:
        cert = bound_constant(spec, horizon)
    except CertificateUnavailable as exc:
        print(f"condition failed: {exc}", file=sys.stderr)
        write_kv(out / "gronwall_certificate.txt", {"status": "unavailable", "reason": str(exc)})
        return EXIT_FAIL
    env = recursion_envelope(spec, n_max)
    ok = verify_bound(cert, env, spec.schedule)
    bound = cert.bound(spec.schedule, n_max)
    items = {"lambda": fmt(cert.lam), "k": fmt(cert.k), "C_inf": fmt(cert.C_inf), "C_argmin": cert.argmin,
             "horizon": cert.horizon, "n_max": n_max, "verified": ok}
    items.update({k: v for k, v in cert.provenance.items() if k != "e_prefix"})
    print(write_kv(out / "gronwall_certificate.txt", items), end="")
    write_csv(out / "gronwall_envelope.csv",
              [["n", "envelope", "bound"], *([n, fmt(e), fmt(b)] for n, (e, b) in enumerate(zip(env, bound)))])
    return EXIT_OK if ok else EXIT_CERT


def _ensemble(cfg, built, workers, checkpoints):
    theta0 = theta0_for(cfg, built.problem.dim)
    cps = np.unique(np.concatenate([[0], checkpoints]))
    return simulate_ensemble(built.problem, cfg.schedule, theta0, cps, cfg.master_seed, cfg.ensemble_size, workers)


def _report_divergence(ens, out: Path) -> int:
    items = {"divergence_count": ens.divergence_count,
             "first_divergence_step": int(ens.diverged_at[ens.diverged_at >= 0].min())}
    write_kv(out / "divergence.txt", items)
    print(f"divergence: {ens.divergence_count} trajectories became non-finite", file=sys.stderr)
    return EXIT_DIVERGED


def cmd_simulate(args) -> int:
    cfg, out = _prepare(args, "simulate")
    built = build_problem(cfg)
    ens = _ensemble(cfg, built, args.workers, cfg.checkpoints)
    ens.to_csv(out / "ensemble.csv")
    if ens.divergence_count:
        return _report_divergence(ens, out)
    return EXIT_OK


def cmd_rate(args) -> int:
    cfg, out = _prepare(args, "rate")
    built = build_problem(cfg)
    sched = cfg.schedule
    if not isinstance(sched, PolynomialSchedule):
        raise ConfigError("rate needs a polynomial schedule (the expected slope is -nu/2)")
    p, cps = cfg.p, cfg.checkpoints
    ens = _ensemble(cfg, built, args.workers, cps)
    if ens.divergence_count:
        return _report_divergence(ens, out)
    target = built.problem.target
    g = sched.gammas(int(cps[-1]))
    errs = [cert_mod.lp_error(ens, target, p, int(n)) for n in cps]
    write_csv(out / "rate.csv", [["n", "gamma_n", "lp_error", "std_error"],
                                 *([int(n), fmt(g[n]), fmt(e.estimate), fmt(e.std_error)] for n, e in zip(cps, errs))])
    tol = float(cfg.get("tolerance", 0.08))
    expected = -sched.nu / 2
    summary = {"p": p, "nu": fmt(sched.nu), "expected_slope": fmt(expected), "tolerance": fmt(tol),
               "ensemble_size": cfg.ensemble_size, "divergence_count": 0}
    if cfg.get("tolerance_note"):
        summary["tolerance_note"] = cfg.get("tolerance_note")
    code = EXIT_OK
    if cfg.ensemble_size < 2:
        summary["warning"] = "insufficient ensemble"
        summary["verdict"] = "not judged"
        print("warning: insufficient ensemble (M < 2), slope not judged", file=sys.stderr)
    elif any(e.estimate <= 0 for e in errs):
        summary["verdict"] = "exact convergence"  # error reached zero; faster than any power
    else:
        fit = cert_mod.rate_fit([(int(n), e.estimate) for n, e in zip(cps, errs)])
        noiseless = built.kind == "drift" and built.noise_desc.strip() == "zero"
        passed = fit.slope <= expected + tol if noiseless else abs(fit.slope - expected) <= tol
        summary.update({"slope": fmt(fit.slope), "intercept": fmt(fit.intercept), "r_squared": fmt(fit.r_squared),
                        "criterion": "slope <= expected + tolerance" if noiseless else "|slope - expected| <= tolerance",
                        "verdict": "pass" if passed else "fail"})
        code = EXIT_OK if passed else EXIT_FAIL
        if args.plot_data:
            write_csv(out / "plot_data.csv", [["log_n", "log_error"],
                                              *([fmt(np.log(n)), fmt(np.log(e.estimate))] for n, e in zip(cps, errs))])
    print(write_kv(out / "rate_summary.txt", summary), end="")
    return code


def _noise_probe_points(target: np.ndarray) -> np.ndarray:
    d = target.size
    offsets = [np.zeros(d)] + [s * r * np.eye(d)[j] for r in (0.5, 2.0, 10.0) for s in (1, -1) for j in range(d)]
    return target + np.array(offsets)


def cmd_certify(args) -> int:
    cfg, out = _prepare(args, "certify")
    built = build_problem(cfg)
    p, sched = cfg.p, cfg.schedule
    c, kappa = _c_and_kappa(cfg, built, p)
    target = built.problem.target
    theta0 = theta0_for(cfg, built.problem.dim)
    horizon = int(float(cfg.get("horizon", 10**6)))
    mc_budget = int(cfg.get("mc_budget", cfg.ensemble_size))
    head = {"problem": cfg.values["problem"], "schedule": sched.describe(), "p": p, "c": fmt(c), "kappa": fmt(kappa)}

    noise = cert_mod.noise_moment_check(built.problem, p, kappa, _noise_probe_points(target),
                                        int(cfg.get("noise_draws", 10**4)), cfg.master_seed, centered=True)
    write_csv(out / "noise_moments.csv", [["theta", "estimate", "std_error", "bound", "ok"],
                                          *([";".join(fmt(x) for x in r.theta), fmt(r.estimate), fmt(r.std_error),
                                             fmt(r.bound), r.ok] for r in noise.rows)])
    if not noise.passed:
        write_kv(out / "certificate_summary.txt", {**head, "failed_stage": "noise_moment_check"})
        print("certificate failure at stage noise_moment_check: kappa too small for the sampled noise", file=sys.stderr)
        return EXIT_CERT
    try:
        certs = cert_mod.lp_induction_chain(built.problem, sched, c, kappa, p, theta0, horizon, mc_budget,
                                            cfg.master_seed, args.workers)
    except cert_mod.CertificateError as exc:
        write_csv(out / "certificates.csv", cert_mod.certificate_csv_rows(exc.completed))
        write_kv(out / "certificate_summary.txt", {**head, "failed_stage": f"q={exc.stage}", "reason": exc.reason})
        print(f"certificate failure at stage q={exc.stage}: {exc.reason}", file=sys.stderr)
        return EXIT_CERT
    write_csv(out / "certificates.csv", cert_mod.certificate_csv_rows(certs))
    for cert in certs:
        (out / f"certificate_q{cert.q}.txt").write_text(cert_mod.certificate_text(cert), encoding="utf-8")

    # independent ensemble for the cross-check
    cps = cfg.checkpoints
    check_seed = cfg.master_seed + 1
    ens = simulate_ensemble(built.problem, sched, theta0, np.unique(np.concatenate([[0], cps])), check_seed,
                            cfg.ensemble_size, args.workers)
    if ens.divergence_count:
        return _report_divergence(ens, out)
    rows = [["q", "n", "estimate", "std_error", "bound", "ok"]]
    failed = []
    for cert in certs:
        for r in cert_mod.check_dominance(cert, ens, target, sched, cps):
            rows.append([cert.q, r.n, fmt(r.estimate), fmt(r.std_error), fmt(r.bound), r.ok])
            if not r.ok:
                failed.append(f"q={cert.q},n={r.n}")
    write_csv(out / "dominance.csv", rows)
    summary = {**head, "stages": ";".join(str(c.q) for c in certs), "crosscheck_seed": check_seed,
               "dominance_ok": not failed}
    if failed:
        summary["failed_stage"] = "dominance " + " ".join(failed)
    print(write_kv(out / "certificate_summary.txt", summary), end="")
    return EXIT_CERT if failed else EXIT_OK


def cmd_linreg_demo(args) -> int:
    cfg, out = _prepare(args, "linreg-demo")
    text = cfg.values["problem"]
    if not text.startswith("linreg:"):
        raise ConfigError("linreg-demo needs a linreg:... problem")
    try:
        model = parse_model(text)
    except (ValueError, KeyError, OSError) as exc:
        raise ConfigError(str(exc)) from exc
    mini = true_minimizer(model, seed=cfg.master_seed)
    spd = spd_contraction_constant(2 * mini.moments.M2)
    p = cfg.p
    affine = affine_noise_kappa(model, p, seed=cfg.master_seed)
    generic = explicit_noise_kappa(model, p, seed=cfg.master_seed)
    rng = np.random.default_rng(cfg.master_seed)
    dirs = rng.standard_normal((20, model.dim))
    dirs *= (rng.uniform(size=(20, 1)) ** (1 / model.dim)) / np.linalg.norm(dirs, axis=1, keepdims=True)
    inter = interchange_check(model, mini.theta + dirs, seed=cfg.master_seed)
    items = {
        "problem": text,
        "minimizer": ";".join(fmt(x) for x in mini.theta),
        "minimizer_source": mini.source,
        "moments_source": mini.moments.source,
        "c": fmt(spd.c),
        "c_sharp": fmt(spd.sharp_c),
        "lambda_min_2M2": fmt(spd.lambda_min),
        "lambda_max_2M2": fmt(spd.lambda_max),
        "p": p,
        "kappa_centered_affine": fmt(affine.kappa),
        "kappa_uncentered_generic": fmt(generic.kappa),
        "kappa_generic_centered": fmt(centered_kappa(generic.kappa, p, mini.theta)),
        "interchange_mode": inter.mode,
        "interchange_max_discrepancy": fmt(inter.discrepancies.max()),
        "interchange_passed": inter.passed,
    }
    print(write_kv(out / "linreg_report.txt", items), end="")
    return EXIT_OK if inter.passed else EXIT_FAIL


# ---------------------------------------------------------------------------


def _key_value(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    return key.strip(), value.strip()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgdrl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("check-schedule", help="learning-rate admissibility")
    sp.add_argument("schedule", help='"poly:alpha=<f>,nu=<f>" or "table:<path>"')
    sp.add_argument("--c", type=float, default=1.0)
    sp.add_argument("--k-max", type=int, default=1)
    sp.add_argument("--horizon", type=int, default=10**6)
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_check_schedule)

    for name, func, help_ in [
        ("check-drift", cmd_check_drift, "contraction condition and its equivalent forms"),
        ("gronwall-bound", cmd_gronwall_bound, "explicit bound for the deterministic recursion"),
        ("simulate", cmd_simulate, "simulate an ensemble and write it as CSV"),
        ("rate", cmd_rate, "empirical L^p convergence order"),
        ("certify", cmd_certify, "mean-square and L^p certificates with cross-check"),
        ("linreg-demo", cmd_linreg_demo, "linear-regression constants and interchange check"),
    ]:
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", default=None, help="flat key=value file")
        sp.add_argument("--set", action="append", type=_key_value, default=[], metavar="KEY=VALUE",
                        help="override a config entry (repeatable)")
        sp.add_argument("--out", default=None, help="output directory (default: output_dir from the config)")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--plot-data", action="store_true", help="also write (log n, log error) pairs")
        sp.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
