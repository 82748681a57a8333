"""Command-line driver.

Verbs: ``simulate`` (synthetic data), ``run`` (pilot -> tune -> main run ->
archive), ``tune`` (tuning only, JSON result), ``report`` (diagnostics and
plot data from archives).  Flags mirror the experiment-config fields; values
from ``--config FILE`` override flags; ``--seed`` is required (no wall-clock
seeding).  Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 I/O error.

All emitted files are plain comma-separated text with a header row, LF line
endings and floats at 17 significant digits (lossless round-trip); the run
summary is a flat key=value document that echoes the exact configuration
hash.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__, backends, diagnostics, lna, models, tuning
from ._linalg import psd_sqrt
from ._parallel import WorkerPool
from .errors import ArchiveError, ConfigError, NumericError, SdeBayesError
from .samplers import (
    CnKernel,
    PerTimeRwm,
    RwmProposal,
    acpmmh_run,
    cpmmh_run,
    pmmh_run,
)
from .sde import ParamVector, PointMassInitial, TimeGrid, simulate_data, simulate_path

_CONFIG_DEFAULTS = {
    "model": None,
    "constants": {},
    "sigma": 1.0,
    "n": 100,
    "m": 5,
    "sampler": "acpmmh",
    "rho": 0.99,
    "N": 1,
    "n_iters": 10000,
    "thin_theta": 1,
    "thin_x": 10,
    "seed": None,
    "workers": 1,
    "tuning": "2",
    "pilot_iters": 0,  # 0 -> max(400, n_iters // 10)
    "theta_init": None,
    "theta_true": None,
    "x0": None,
    "delta_tau_sim": 0.001,
    "x_accept_target": 0.25,
    "lna_steps": 20,
}

_SAMPLERS = ("pmmh", "cpmmh", "acpmmh", "lna-mh")


def _fmt(v):
    return f"{float(v):.17g}"


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def resolve_config(args):
    """Defaults <- flags <- config file, then validate."""
    cfg = dict(_CONFIG_DEFAULTS)
    for key in cfg:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    path = getattr(args, "config", None)
    if path:
        try:
            with open(path) as fh:
                file_cfg = json.load(fh)
        except OSError as exc:
            raise ArchiveError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        unknown = set(file_cfg) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    return validate_config(cfg)


def validate_config(cfg):
    if cfg["model"] not in models.available_models():
        raise ConfigError(f"model must be one of {models.available_models()}")
    if cfg["sampler"] not in _SAMPLERS:
        raise ConfigError(f"sampler must be one of {_SAMPLERS}")
    if cfg["seed"] is None:
        raise ConfigError("seed is required")
    cfg["seed"] = int(cfg["seed"])
    cfg["n"] = int(cfg["n"])
    cfg["m"] = int(cfg["m"])
    if cfg["n"] < 1 or cfg["m"] < 1:
        raise ConfigError("need n >= 1 and m >= 1")
    if cfg["n_iters"] < 1:
        raise ConfigError("n_iters must be positive")
    if not 0.0 <= float(cfg["rho"]) <= 1.0:
        raise ConfigError("rho must lie in [0, 1]")
    if cfg["N"] != "auto":
        cfg["N"] = int(cfg["N"])
        if cfg["N"] < 1:
            raise ConfigError("N must be >= 1 or 'auto'")
    cfg["workers"] = int(cfg["workers"])
    if cfg["workers"] < 1:
        raise ConfigError("workers must be >= 1")
    if str(cfg["tuning"]) not in ("1", "2", "none"):
        raise ConfigError("tuning must be '1', '2' or 'none'")
    cfg["tuning"] = str(cfg["tuning"])
    if cfg["pilot_iters"] == 0:
        cfg["pilot_iters"] = max(400, int(cfg["n_iters"]) // 10)
    return cfg


def _setup(cfg):
    spec = models.get_model(cfg["model"], cfg["constants"])
    obs = spec.make_observation(sigma=cfg["sigma"])
    grid = TimeGrid(cfg["n"], cfg["m"])
    x0 = np.asarray(cfg["x0"], dtype=float) if cfg["x0"] is not None else spec.x0
    theta_true = (
        np.asarray(cfg["theta_true"], dtype=float) if cfg["theta_true"] is not None else spec.theta_true
    )
    return spec, obs, grid, x0, theta_true


def write_csv(path, header, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_csv(path):
    try:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    except OSError as exc:
        raise ArchiveError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise ArchiveError(f"cannot parse {path}: {exc}") from exc
    return header, data


def cmd_simulate(cfg, out_path):
    """Simulate a latent path at the fine grid and emit y_{1:n} as CSV."""
    spec, obs, grid, x0, theta_true = _setup(cfg)
    m_sim = round(1.0 / float(cfg["delta_tau_sim"]))
    sim_grid = TimeGrid(cfg["n"], m_sim)
    rng = np.random.default_rng(cfg["seed"])
    theta = ParamVector.from_natural(theta_true, spec.log_scale_mask)
    path = simulate_path(spec.model, theta, x0, sim_grid, rng)
    y = simulate_data(path, obs, rng)
    header = ["t"] + [f"y{j + 1}" for j in range(obs.d_o)]
    rows = [[t + 1.0, *y[t]] for t in range(cfg["n"])]
    write_csv(out_path, header, rows)
    return out_path


def _load_data(path, obs, cfg):
    header, table = read_csv(path)
    if table.shape[1] != obs.d_o + 1:
        raise ConfigError(
            f"data has {table.shape[1] - 1} observed components; model expects {obs.d_o}"
        )
    if table.shape[0] != cfg["n"]:
        cfg = dict(cfg)
        cfg["n"] = int(table.shape[0])
    return table[:, 1:], cfg


def _run_tuning(cfg, spec, obs, grid, data, initial, theta0, rng, pool):
    opt = cfg["tuning"]
    if opt == "none":
        p = theta0.p
        omega_theta = 0.01 * np.eye(p)
        x_scale = float(np.mean(np.diag(np.atleast_2d(obs.Sigma)))) + 0.1
        x_init = tuning.data_based_x_init(spec.model, obs, data, grid, theta0, initial, rng)
        return tuning.TuningResult(
            theta_init=theta0,
            x_o_init=x_init,
            omega_theta=omega_theta,
            omega_x=np.broadcast_to(x_scale * np.eye(spec.model.d), (grid.n, spec.model.d, spec.model.d)).copy(),
            n_selected=cfg["N"] if cfg["N"] != "auto" else 1,
            pilot_iters=0,
        )
    if opt == "1":
        prior_x1 = lna.default_time1_prior(initial.x0 if hasattr(initial, "x0") else spec.x0)
        return tuning.tune_option1(
            spec.model,
            obs,
            data,
            grid,
            spec.log_prior,
            theta0,
            cfg["pilot_iters"],
            rng,
            prior_x1=prior_x1,
            lna_steps=cfg["lna_steps"],
        )
    return tuning.tune_option2(
        spec.model,
        obs,
        data,
        grid,
        spec.log_prior,
        theta0,
        cfg["pilot_iters"],
        rng,
        initial,
        rho=float(cfg["rho"]),
        x_accept_target=float(cfg["x_accept_target"]),
        pool=pool,
    )


def _resolve_n_particles(cfg, spec, obs, grid, data, result, rng, initial):
    if cfg["N"] != "auto":
        return int(cfg["N"])
    center = result.theta_init
    if cfg["sampler"] == "pmmh":
        return diagnostics.tune_N_pmmh(spec.model, obs, data, center, grid, 512, rng, initial)
    if cfg["sampler"] == "cpmmh":
        return diagnostics.tune_N_cpmmh(
            spec.model, obs, data, center, float(cfg["rho"]), grid, 512, rng, initial
        )
    return diagnostics.tune_N_acpmmh(
        spec.model, obs, data, center, result.x_o_init, float(cfg["rho"]), grid, 512, rng, initial
    )


def cmd_run(cfg, data_path, outdir):
    """Tune, run the selected sampler, and write the chain archive."""
    spec, obs, grid, x0, _ = _setup(cfg)
    data, cfg = _load_data(data_path, obs, cfg)
    grid = TimeGrid(cfg["n"], cfg["m"])
    initial = PointMassInitial(x0)
    rng = np.random.default_rng(cfg["seed"])
    theta0 = ParamVector.from_natural(
        np.asarray(cfg["theta_init"], dtype=float) if cfg["theta_init"] is not None else spec.theta_true,
        spec.log_scale_mask,
    )
    t0 = time.perf_counter()
    with WorkerPool(cfg["workers"]) as pool:
        result = _run_tuning(cfg, spec, obs, grid, data, initial, theta0, rng, pool)
        n_particles = _resolve_n_particles(cfg, spec, obs, grid, data, result, rng, initial)
        seconds_tuning = time.perf_counter() - t0
        t1 = time.perf_counter()
        sampler = cfg["sampler"]
        if sampler == "lna-mh":
            prior_x1 = lna.default_time1_prior(x0)
            out_mh = lna.lna_mh_run(
                spec.model,
                obs,
                data,
                spec.log_prior,
                result.theta_proposal(),
                result.theta_init,
                cfg["n_iters"],
                rng,
                prior_x1,
                thin=max(1, cfg["thin_x"]),
                steps=cfg["lna_steps"],
            )
            thetas = out_mh.thetas_natural
            logliks = out_mh.logliks
            x_chain = out_mh.x_samples
            accepts = {"theta": (out_mh.accepted, out_mh.n_iters)}
            x_full = None
        elif sampler == "acpmmh":
            out = acpmmh_run(
                spec.model,
                obs,
                data,
                grid,
                spec.log_prior,
                result.theta_proposal(),
                result.x_proposal(),
                CnKernel(float(cfg["rho"])),
                n_particles,
                cfg["n_iters"],
                rng,
                initial,
                theta0=result.theta_init,
                x_o0=result.x_o_init,
                pool=pool,
            )
            thetas, logliks, accepts = out.thetas, out.logliks, out.accepts
            x_full = out.x_o
            x_chain = out.x_o[:: max(1, cfg["thin_x"])]
        else:
            runner = pmmh_run if sampler == "pmmh" else cpmmh_run
            kwargs = dict(pool=pool)
            if sampler == "cpmmh":
                kwargs["kernel"] = CnKernel(float(cfg["rho"]))
            out = runner(
                spec.model,
                obs,
                data,
                grid,
                spec.log_prior,
                result.theta_proposal(),
                n_particles=n_particles,
                n_iters=cfg["n_iters"],
                rng=rng,
                initial=initial,
                theta0=result.theta_init,
                **kwargs,
            )
            thetas, logliks, accepts = out.thetas, out.logliks, out.accepts
            x_full = None
            x_chain = None
        seconds_main = time.perf_counter() - t1
    report = diagnostics.ess_report(
        thetas,
        x_chains=x_full,
        seconds=seconds_main,
        acceptance_rates={k: a / max(1, t) for k, (a, t) in accepts.items()},
    )
    _write_archive(
        outdir,
        cfg,
        spec,
        thetas,
        logliks,
        x_chain,
        report,
        accepts,
        n_particles,
        seconds_tuning,
        seconds_main,
    )
    return outdir


def _write_archive(
    outdir, cfg, spec, thetas, logliks, x_chain, report, accepts, n_particles, sec_tune, sec_main
):
    os.makedirs(outdir, exist_ok=True)
    cfg_out = dict(cfg)
    cfg_out["N"] = n_particles
    chash = config_hash(cfg_out)
    with open(os.path.join(outdir, "config.json"), "w", newline="\n") as fh:
        json.dump({"config": cfg_out, "hash": chash}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    thin_t = max(1, int(cfg["thin_theta"]))
    header = ["iter"] + list(spec.theta_names) + ["loglik"]
    rows = [[i, *thetas[i], logliks[i]] for i in range(0, len(thetas), thin_t)]
    write_csv(os.path.join(outdir, "theta_chain.csv"), header, rows)
    if x_chain is not None and len(x_chain):
        n, d = x_chain.shape[1], x_chain.shape[2]
        header = ["iter"] + [f"x_t{t + 1}_c{c + 1}" for t in range(n) for c in range(d)]
        step = max(1, int(cfg["thin_x"]))
        rows = [[i * step, *x_chain[i].ravel()] for i in range(len(x_chain))]
        write_csv(os.path.join(outdir, "x_chain.csv"), header, rows)
    lines = {
        "software_version": __version__,
        "backend": backends.active_name(),
        "config_hash": chash,
        "model": cfg["model"],
        "sampler": cfg["sampler"],
        "rho": _fmt(cfg["rho"]),
        "N": n_particles,
        "n_iters": cfg["n_iters"],
        "workers": cfg["workers"],
        "seed": cfg["seed"],
        "seconds_tuning": _fmt(sec_tune),
        "seconds_main": _fmt(sec_main),
        "min_ess": _fmt(report.min_ess),
        "mess_per_s": _fmt(report.mess_per_second),
        "degenerate_chains": ";".join(report.degenerate) or "none",
    }
    for j, v in enumerate(report.ess_theta):
        lines[f"ess_theta_{j + 1}"] = _fmt(v)
    if report.ess_x.size:
        lines["ess_x_min"] = _fmt(report.ess_x.min())
    for k, (a, t) in accepts.items():
        lines[f"accept_{k}"] = _fmt(a / max(1, t))
    with open(os.path.join(outdir, "summary.txt"), "w", newline="\n") as fh:
        for k, v in lines.items():
            fh.write(f"{k}={v}\n")


def read_archive(path):
    """(config dict, summary dict, theta table, x table or None)."""
    try:
        with open(os.path.join(path, "config.json")) as fh:
            cfg = json.load(fh)
        summary = {}
        with open(os.path.join(path, "summary.txt")) as fh:
            for line in fh:
                if "=" in line:
                    k, v = line.rstrip("\n").split("=", 1)
                    summary[k] = v
    except OSError as exc:
        raise ArchiveError(f"incomplete archive at {path}: {exc}") from exc
    t_header, t_data = read_csv(os.path.join(path, "theta_chain.csv"))
    x_path = os.path.join(path, "x_chain.csv")
    x_data = None
    if os.path.exists(x_path):
        _, x_data = read_csv(x_path)
    if "config_hash" not in summary or summary["config_hash"] != cfg.get("hash"):
        raise ArchiveError(f"archive at {path} fails the config-hash check")
    return cfg, summary, (t_header, t_data), x_data


def cmd_report(archives, outdir):
    """Diagnostics table plus histogram and predictive-band data files.

    The first archive is the baseline for the relative efficiency column.
    """
    os.makedirs(outdir, exist_ok=True)
    rows = []
    base_rate = None
    for path in archives:
        cfg, summary, (t_header, t_data), x_data = read_archive(path)
        theta_cols = t_data[:, 1:-1]
        x_cols = x_data[:, 1:] if x_data is not None else None
        rep = diagnostics.ess_report(
            theta_cols,
            x_chains=x_cols.reshape(len(x_cols), -1, 1) if x_cols is not None else None,
            seconds=float(summary.get("seconds_main", "nan")),
        )
        rate = rep.mess_per_second
        if base_rate is None:
            base_rate = rate
        rows.append(
            [
                os.path.basename(os.path.normpath(path)),
                summary.get("sampler", "?"),
                summary.get("rho", "?"),
                summary.get("N", "?"),
                f"{float(summary.get('seconds_main', 'nan')):.1f}",
                f"{rep.min_ess:.1f}",
                f"{rate:.4g}",
                f"{rate / base_rate:.2f}" if base_rate else "nan",
                ";".join(rep.degenerate) or "-",
            ]
        )
        _emit_histograms(outdir, path, t_header, theta_cols)
        if x_data is not None:
            _emit_predictive(outdir, path, cfg, x_data)
    header = ["archive", "sampler", "rho", "N", "CPU(s)", "mESS", "mESS/s", "Rel.", "degenerate"]
    table_path = os.path.join(outdir, "report.txt")
    widths = [max(len(header[j]), *(len(r[j]) for r in rows)) for j in range(len(header))]
    with open(table_path, "w", newline="\n") as fh:
        fh.write("  ".join(h.ljust(w) for h, w in zip(header, widths)) + "\n")
        for r in rows:
            fh.write("  ".join(str(v).ljust(w) for v, w in zip(r, widths)) + "\n")
    return table_path


def _emit_histograms(outdir, archive_path, t_header, theta_cols, bins=40):
    tag = os.path.basename(os.path.normpath(archive_path))
    for j, name in enumerate(t_header[1:-1]):
        counts, edges = np.histogram(theta_cols[:, j], bins=bins)
        write_csv(
            os.path.join(outdir, f"hist_{tag}_{name}.csv"),
            ["bin_left", "bin_right", "count"],
            [[edges[k], edges[k + 1], counts[k]] for k in range(bins)],
        )


def _emit_predictive(outdir, archive_path, cfg, x_data, level=0.95):
    """Within-sample predictive mean and credible band per observed component."""
    tag = os.path.basename(os.path.normpath(archive_path))
    conf = cfg["config"]
    spec = models.get_model(conf["model"], conf.get("constants") or {})
    obs = spec.make_observation(sigma=conf.get("sigma", 1.0))
    d = spec.model.d
    n = (x_data.shape[1] - 1) // d
    x = x_data[:, 1:].reshape(len(x_data), n, d)
    rng = np.random.default_rng(int(cfg["hash"], 16) % 2**63)
    noise = rng.standard_normal((len(x), n, obs.d_o))
    y_star = x @ obs.F + noise @ psd_sqrt(obs.Sigma).T
    lo_q, hi_q = 100 * (1 - level) / 2, 100 * (1 + level) / 2
    for c in range(obs.d_o):
        mean = y_star[:, :, c].mean(axis=0)
        lo = np.percentile(y_star[:, :, c], lo_q, axis=0)
        hi = np.percentile(y_star[:, :, c], hi_q, axis=0)
        write_csv(
            os.path.join(outdir, f"predictive_{tag}_y{c + 1}.csv"),
            ["t", "mean", "lo", "hi"],
            [[t + 1.0, mean[t], lo[t], hi[t]] for t in range(n)],
        )


def cmd_tune(cfg, data_path, out_path):
    """Run the configured tuning option and store the result as JSON."""
    spec, obs, grid, x0, _ = _setup(cfg)
    data, cfg = _load_data(data_path, obs, cfg)
    grid = TimeGrid(cfg["n"], cfg["m"])
    initial = PointMassInitial(x0)
    rng = np.random.default_rng(cfg["seed"])
    theta0 = ParamVector.from_natural(
        np.asarray(cfg["theta_init"], dtype=float) if cfg["theta_init"] is not None else spec.theta_true,
        spec.log_scale_mask,
    )
    if cfg["tuning"] == "none":
        raise ConfigError("tune needs tuning option '1' or '2'")
    with WorkerPool(cfg["workers"]) as pool:
        result = _run_tuning(cfg, spec, obs, grid, data, initial, theta0, rng, pool)
        n_particles = _resolve_n_particles(cfg, spec, obs, grid, data, result, rng, initial)
    payload = result.to_config_dict()
    payload["N"] = n_particles
    with open(out_path, "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out_path


def build_parser():
    parser = argparse.ArgumentParser(prog="sdebayes", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    def add_config_flags(p, need_seed=True):
        p.add_argument("--config", help="JSON config file (overrides flags)")
        p.add_argument("--seed", type=int, required=need_seed, help="RNG seed (required)")
        p.add_argument("--model", choices=models.available_models())
        p.add_argument("--sampler", choices=_SAMPLERS)
        p.add_argument("--sigma", type=float)
        p.add_argument("--n", type=int)
        p.add_argument("--m", type=int)
        p.add_argument("--rho", type=float)
        p.add_argument("--N", dest="N")
        p.add_argument("--n-iters", dest="n_iters", type=int)
        p.add_argument("--thin-theta", dest="thin_theta", type=int)
        p.add_argument("--thin-x", dest="thin_x", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--tuning", choices=("1", "2", "none"))
        p.add_argument("--pilot-iters", dest="pilot_iters", type=int)
        p.add_argument("--delta-tau-sim", dest="delta_tau_sim", type=float)
        p.add_argument("--lna-steps", dest="lna_steps", type=int)

    p_sim = sub.add_parser("simulate", help="generate synthetic data")
    add_config_flags(p_sim)
    p_sim.add_argument("--out", required=True, help="output data CSV")

    p_run = sub.add_parser("run", help="tune and run the selected sampler")
    add_config_flags(p_run)
    p_run.add_argument("--data", required=True, help="input data CSV")
    p_run.add_argument("--out", required=True, help="archive directory")

    p_tune = sub.add_parser("tune", help="run tuning only")
    add_config_flags(p_tune)
    p_tune.add_argument("--data", required=True)
    p_tune.add_argument("--out", required=True, help="output tuning JSON")

    p_rep = sub.add_parser("report", help="diagnostics from archives")
    p_rep.add_argument("archives", nargs="+", help="archive dirs; first is the baseline")
    p_rep.add_argument("--out", required=True, help="report output directory")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.verb == "report":
            path = cmd_report(args.archives, args.out)
        else:
            cfg = resolve_config(args)
            if args.verb == "simulate":
                path = cmd_simulate(cfg, args.out)
            elif args.verb == "run":
                path = cmd_run(cfg, args.data, args.out)
            else:
                path = cmd_tune(cfg, args.data, args.out)
        print(path)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (ArchiveError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    except SdeBayesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
