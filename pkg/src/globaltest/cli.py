"""Command-line front end: ``globaltest {profile,roc,discover,wavefront}``.

Configuration is a flat ``key=value`` file (``#`` starts a comment) plus
``--set key=value`` overrides.  Unknown keys are rejected.  Every CSV starts
with comment lines carrying the resolved configuration, its hash and the
seed; ``jobs`` and ``out`` are left out so that outputs do not depend on
where or how widely a run was executed.

Exit codes: 0 success, 2 completed with a warning (too few spurious trials
for a meaningful ROC), 1 error.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

log = logging.getLogger("globaltest")

EXIT_OK, EXIT_ERROR, EXIT_WARNING = 0, 1, 2
UNSTAMPED = ("jobs", "out")


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


@dataclass(frozen=True)
class Key:
    parse: Callable
    default: str
    help: str


SCHEMA = {
    "experiment": Key(str, "", "free-form run label"),
    "jobs": Key(int, "1", "worker processes for roc"),
    "out": Key(str, "", "output directory (overridden by --out)"),
    # sinusoid
    "sigma": Key(float, "1.0", "noise standard deviation"),
    "theta_true": Key(float, repr(3 * np.pi), "true frequency"),
    "noise_free": Key(_bool, "false", "profile: use noise-free data"),
    "grid_resolution": Key(int, "4001", "profile: scan points over [0, 4 pi]"),
    # roc
    "trials": Key(int, "2000", "Monte-Carlo trials"),
    "bootstrap": Key(int, "500", "bootstrap replicates for the moment tests"),
    "gap_bootstrap": Key(int, "200", "bootstrap replicates for the gap test"),
    "relaxation": Key(str, "learned-direction", "learned-direction or naive-poly"),
    "k": Key(int, "1", "naive-poly order"),
    "start": Key(str, "uniform", "uniform starts over [0, 4 pi] or 'truth'"),
    "alpha_grid": Key(_floats, ",".join(f"{v:.2f}" for v in np.linspace(0, 1, 101)), "PFA grid"),
    "direction_file": Key(str, "", "learned direction CSV (default: run discovery)"),
    # discover
    "n_nominal": Key(int, "100", "nominal frequencies"),
    "n_starts": Key(int, "50", "start points ('grid' starts)"),
    "starts": Key(str, "grid", "grid or 'truth' (every descent starts at its truth)"),
    "mismatch_tol": Key(float, "1e-3", "spurious-minimum tolerance"),
    # wavefront
    "tau": Key(_floats, "0.2", "shell radii in waves RMS, comma separated"),
    "modes": Key(int, "12", "Zernike modes K (Noll 4 ..)"),
    "grid_size": Key(int, "64", "pupil samples N"),
    "oversampling": Key(float, "2.0", "PSF padding factor"),
    "shell_starts": Key(int, "32", "multi-start budget per shell"),
    "bound_trials": Key(int, "100", "random perturbations in the bound check"),
    "bound_tau": Key(float, "0.2", "perturbation RMS in the bound check"),
    "bound_base_rms": Key(float, "0.1", "RMS of the unperturbed screen in the bound check"),
    "restart": Key(_bool, "false", "also run the toy detect-reject-restart loop"),
    "restart_max": Key(int, "20", "restart budget"),
    "restart_alpha": Key(float, "0.01", "gap-test level in the restart loop"),
    "restart_bootstrap": Key(int, "200", "gap bootstrap size in the restart loop"),
}


class ConfigError(ValueError):
    pass


def read_config_file(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            k, v = (s.strip() for s in line.split("=", 1))
            out[k] = v
    return out


def resolve(raw: dict) -> tuple[dict, dict]:
    """Validate keys and parse values; returns ``(parsed, text)`` over the full schema."""
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    text = {k: raw.get(k, key.default) for k, key in SCHEMA.items()}
    parsed = {}
    for k, v in text.items():
        try:
            parsed[k] = SCHEMA[k].parse(v)
        except ValueError as exc:
            raise ConfigError(f"bad value for {k}: {v!r} ({exc})") from None
    return parsed, text


def stamp(command: str, text: dict, seed: int) -> str:
    """Header comment lines: resolved config, hash and seed."""
    items = [("command", command)] + [(k, text[k]) for k in sorted(text) if k not in UNSTAMPED]
    body = "\n".join(f"{k}={v}" for k, v in items)
    digest = hashlib.sha256(f"{body}\nseed={seed}".encode()).hexdigest()[:16]
    lines = [f"# config_hash={digest} seed={seed}"] + [f"# {k}={v}" for k, v in items]
    return "\n".join(lines) + "\n"


# commands ----------------------------------------------------------------------

def cmd_profile(cfg: dict, header: str, out: str, seed: int) -> int:
    from .model import Dataset
    from .rng import stream
    from .sinusoid import SinusoidModel, enumerate_local_minima, negloglik_profile, write_minima_csv, write_profile_csv

    model = SinusoidModel(cfg["sigma"])
    mean = model.mean([cfg["theta_true"]])
    noise = 0.0 if cfg["noise_free"] else cfg["sigma"] * stream(seed, 0).standard_normal(model.dim)
    data = Dataset(mean + noise)
    thetas, values = negloglik_profile(model, data, cfg["grid_resolution"])
    write_profile_csv(os.path.join(out, "profile.csv"), thetas, values, header)
    minima = enumerate_local_minima(model, data, cfg["grid_resolution"])
    write_minima_csv(os.path.join(out, "minima.csv"), [m[0] for m in minima],
                     [-model.log_likelihood(data, m) for m in minima], header)
    return EXIT_OK


def cmd_roc(cfg: dict, header: str, out: str, seed: int) -> int:
    from .discovery import read_direction_csv
    from .experiments import MIN_SPURIOUS, RelaxationSpec, TrialConfig, run_roc, write_roc_csv, write_trials_csv

    spec = RelaxationSpec(cfg["relaxation"], cfg["k"])
    if spec.kind not in ("learned-direction", "naive-poly"):
        raise ConfigError(f"unknown relaxation {spec.kind!r}")
    direction = read_direction_csv(cfg["direction_file"]) if cfg["direction_file"] else None
    tc = TrialConfig(trials=cfg["trials"], sigma=cfg["sigma"], theta_true=cfg["theta_true"],
                     bootstrap=cfg["bootstrap"], gap_bootstrap=cfg["gap_bootstrap"],
                     start=cfg["start"], relaxations=(spec,))
    result = run_roc(tc, seed=seed, jobs=cfg["jobs"], direction=direction)
    write_trials_csv(os.path.join(out, "trials.csv"), result, header=header)
    write_roc_csv(os.path.join(out, "roc.csv"), result, pfa_grid=np.asarray(cfg["alpha_grid"]), header=header)
    if result.n_spurious < MIN_SPURIOUS:
        log.warning("only %d spurious trials (< %d); ROC estimates are unreliable",
                    result.n_spurious, MIN_SPURIOUS)
        return EXIT_WARNING
    return EXIT_OK


def cmd_discover(cfg: dict, header: str, out: str, seed: int) -> int:
    from .discovery import (DiscoveryConfig, discover_relaxation_direction, sinusoid_discovery_config,
                            write_direction_csv, write_singular_values_csv)
    from .sinusoid import SinusoidModel

    base = sinusoid_discovery_config(cfg["n_nominal"], cfg["n_starts"], cfg["mismatch_tol"])
    if cfg["starts"] == "truth":
        # every descent starts at its own truth
        config = DiscoveryConfig(base.nominal_set, base.nominal_set, None, cfg["mismatch_tol"], paired=True)
    elif cfg["starts"] == "grid":
        config = base
    else:
        raise ConfigError("starts must be 'grid' or 'truth'")
    direction = discover_relaxation_direction(config, SinusoidModel(cfg["sigma"]))
    write_direction_csv(os.path.join(out, "direction.csv"), direction, header)
    write_singular_values_csv(os.path.join(out, "singular_values.csv"), direction, header)
    return EXIT_OK


def cmd_wavefront(cfg: dict, header: str, out: str, seed: int) -> int:
    import csv

    from .optics import (PupilGrid, coherent_psf, max_strehl_shell, psf_from_phase, psf_perturbation_bound,
                         run_restart_demo, write_grid_csv, write_shell_csv, zernike_phase)
    from .rng import stream

    grid = PupilGrid.circular(cfg["grid_size"], cfg["oversampling"])
    K = cfg["modes"]
    shells = {tau: max_strehl_shell(tau, K, grid, cfg["shell_starts"], rng=stream(seed, 0, i))
              for i, tau in enumerate(cfg["tau"])}
    write_shell_csv(os.path.join(out, "shells.csv"), shells, grid, header)

    gen = stream(seed, 1)
    base = gen.standard_normal(K)
    base *= cfg["bound_base_rms"] / np.linalg.norm(base)
    phase = zernike_phase(base, grid)
    write_grid_csv(os.path.join(out, "psf_nominal.csv"),
                   psf_from_phase(np.zeros_like(phase), grid).intensity, header, "intensity")
    write_grid_csv(os.path.join(out, "psf_base.csv"), psf_from_phase(phase, grid).intensity, header, "intensity")
    g = coherent_psf(phase, grid)
    violations = 0
    with open(os.path.join(out, "bound_report.csv"), "w", newline="") as fh:
        fh.write(header)
        w = csv.writer(fh)
        w.writerow(["trial", "tau", "max_epsilon", "max_bound", "min_slack", "violations"])
        for t in range(cfg["bound_trials"]):
            beta = gen.standard_normal(K)
            beta *= cfg["bound_tau"] / np.linalg.norm(beta)
            eps, bound = psf_perturbation_bound(g, beta, grid)
            v = int(np.sum(eps > bound))
            violations += v
            w.writerow([t, repr(cfg["bound_tau"]), repr(float(eps.max())), repr(float(bound.max())),
                        repr(float((bound - eps).min())), v])
    log.info("bound check: %d violations over %d perturbations", violations, cfg["bound_trials"])

    if cfg["restart"]:
        demo = run_restart_demo(seed, max_restarts=cfg["restart_max"], alpha=cfg["restart_alpha"],
                                B=cfg["restart_bootstrap"])
        with open(os.path.join(out, "restart.csv"), "w", newline="") as fh:
            fh.write(header)
            w = csv.writer(fh)
            w.writerow(["step", "objective", "statistic", "decision"]
                       + [f"c{j}" for j in range(4, 4 + len(demo.truth))])
            for i, s in enumerate(demo.result.steps):
                w.writerow([i, repr(s.objective), repr(s.statistic), s.decision] + [repr(float(c)) for c in s.theta])
        log.info("restart loop: accepted=%s restarts=%d psf_error=%.3e",
                 demo.result.accepted, demo.result.restarts, demo.psf_error)
    return EXIT_ERROR if violations else EXIT_OK


COMMANDS = {"profile": cmd_profile, "roc": cmd_roc, "discover": cmd_discover, "wavefront": cmd_wavefront}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="globaltest", description="Check whether local maximum-likelihood fits are spurious.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="flat key=value configuration file")
    p.add_argument("--seed", type=int, default=0, help="master seed (non-negative)")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key; repeatable")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        if args.seed < 0:
            raise ConfigError("seed must be non-negative")
        raw = read_config_file(args.config) if args.config else {}
        for item in args.overrides:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            k, v = item.split("=", 1)
            raw[k.strip()] = v.strip()
        cfg, text = resolve(raw)
        out = args.out or cfg["out"] or "."
        os.makedirs(out, exist_ok=True)
        header = stamp(args.command, text, args.seed)
        return COMMANDS[args.command](cfg, header, out, args.seed)
    except Exception as exc:  # reported, not raised: scripted callers read the exit code
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
