"""Config-driven command line front end.

    hdiv-minimax <command> --config <path> [--out <dir>] [--seed <u64>]
                 [--threads <n>]

Commands: forward | estimate | reconstruct | estimate-rhs | converge |
montecarlo. Outputs are CSV files in the output directory; every file
starts with a version-stamp comment line followed by a header row, and all
numbers carry 17 significant digits so identical configs and seeds yield
byte-identical bodies. Logging verbosity comes from HDIV_MINIMAX_LOG
(error | info | debug).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__
from .assembly import AssemblyError, assemble_core_forms
from .config import (
    ConfigError,
    build_channel,
    build_functional,
    build_problem,
    cell_values,
    load_config,
    scalar_field,
    vector_field,
)
from .estimator import (
    RHS,
    STATE,
    estimate_with_sigma,
    solve_minimax_system,
    solve_rhs_minimax,
    solve_state_reconstruction,
)
from .femspace import build_spaces
from .forward import SolverError, solve_forward
from .mesh import MeshError, refine_uniform
from .observation import (
    Channel,
    ObservationError,
    ObservationSetup,
    apply_observation,
)
from .stochastic import (
    ADMISSIBLE_RANDOM,
    WHITE,
    WORST_CASE,
    NoiseModel,
    monte_carlo_mse,
    sample_admissible_noise,
)

log = logging.getLogger("hdiv_minimax")

COMMANDS = ("forward", "estimate", "reconstruct", "estimate-rhs", "converge",
            "montecarlo")

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(f"# hdiv-minimax {__version__}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _synthetic_observation(raw, blocks, setup, prior, seed):
    """Observation data from the config's observations section.

    Defaults to the noiseless observation of the forward solve at f0.
    """
    spec = raw.get("observations", {})
    unknown = set(spec) - {"f_true", "noise", "seed"}
    if unknown:
        raise ConfigError(f"observations: unknown keys {sorted(unknown)}")
    mesh = blocks.hdiv.mesh
    f_true = (cell_values(spec["f_true"], mesh, "observations.f_true")
              if "f_true" in spec else prior.f0)
    fields = solve_forward(blocks, f_true)
    noise_spec = spec.get("noise", {"kind": "none"})
    kind = noise_spec.get("kind", "none")
    if kind == "none":
        noise = None
    elif kind == "white":
        tau = float(noise_spec.get("tau", 0.25))
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=int(spec.get("seed", seed)))
        )
        noise = sample_admissible_noise(setup, NoiseModel(WHITE, tau=tau), rng)
    else:
        raise ConfigError("observations.noise.kind must be 'none' or 'white'")
    return apply_observation(setup, fields, noise)


# ----------------------------------------------------------------------
# command handlers
def _cmd_forward(raw, out, seed):
    mesh, hdiv, l2, coeffs, prior, blocks = build_problem(raw)
    spec = raw.get("forward", {})
    if "f" not in spec:
        raise ConfigError("forward command needs forward.f")
    f = cell_values(spec["f"], mesh, "forward.f")
    fields = solve_forward(blocks, f)
    log.info("forward solve: %d cells, stability ratio %.3g",
             mesh.num_cells, fields.stability_ratio)
    rows = []
    for k in range(mesh.num_cells):
        jx, jy = hdiv.evaluate(fields.j, k, mesh.centroids[k])
        rows.append([k, mesh.centroids[k, 0], mesh.centroids[k, 1],
                     fields.phi[k], jx, jy])
    write_csv(os.path.join(out, "fields.csv"),
              ["cell", "xc", "yc", "phi", "jx", "jy"], rows)


def _gain_rows(setup, sol):
    rows = []
    idx = 0
    for ch, vals in zip(setup.flux_channels, sol.u1hat):
        for t, cell in enumerate(ch.cells):
            rows.append([idx, "flux", int(cell), vals[t, 0], vals[t, 1]])
        idx += 1
    for ch, vals in zip(setup.scalar_channels, sol.u2hat):
        for t, cell in enumerate(ch.cells):
            rows.append([idx, "scalar", int(cell), vals[t], 0.0])
        idx += 1
    return rows


def _assemble_estimation(raw):
    mesh, hdiv, l2, coeffs, prior, blocks = build_problem(raw)
    setup = build_setup_from(raw, hdiv, l2)
    a3, a4 = setup.gram_blocks()
    blocks.with_observation(a3, a4)
    return mesh, hdiv, l2, prior, blocks, setup


def build_setup_from(raw, hdiv, l2):
    from .config import build_setup

    return build_setup(raw, hdiv, l2)


def _cmd_estimate(raw, out, seed):
    mesh, hdiv, l2, prior, blocks, setup = _assemble_estimation(raw)
    functional = build_functional(raw, hdiv, l2)
    if functional.kind != STATE:
        raise ConfigError("estimate requires a state functional")
    sol = solve_minimax_system(blocks, setup, functional)
    y = _synthetic_observation(raw, blocks, setup, prior, seed)
    est, sigma = estimate_with_sigma(setup, sol, y)
    write_csv(os.path.join(out, "estimate.csv"),
              ["estimate", "chat", "sigma"], [[est, sol.chat, sigma]])
    write_csv(os.path.join(out, "gains.csv"),
              ["channel", "group", "cell", "u_x", "u_y"],
              _gain_rows(setup, sol))


def _cmd_estimate_rhs(raw, out, seed):
    mesh, hdiv, l2, prior, blocks, setup = _assemble_estimation(raw)
    functional = build_functional(raw, hdiv, l2)
    if functional.kind != RHS:
        raise ConfigError("estimate-rhs requires an rhs functional")
    y = _synthetic_observation(raw, blocks, setup, prior, seed)
    sol, fhat = solve_rhs_minimax(blocks, setup, prior, functional, y=y)
    est, sigma = estimate_with_sigma(setup, sol, y)
    write_csv(os.path.join(out, "estimate.csv"),
              ["estimate", "chat", "sigma"], [[est, sol.chat, sigma]])
    write_csv(os.path.join(out, "gains.csv"),
              ["channel", "group", "cell", "u_x", "u_y"],
              _gain_rows(setup, sol))


def _cmd_reconstruct(raw, out, seed):
    mesh, hdiv, l2, prior, blocks, setup = _assemble_estimation(raw)
    y = _synthetic_observation(raw, blocks, setup, prior, seed)
    recon = solve_state_reconstruction(blocks, setup, prior, y)
    rows = []
    for k in range(mesh.num_cells):
        jx, jy = hdiv.evaluate(recon.jhat, k, mesh.centroids[k])
        rows.append([k, mesh.centroids[k, 0], mesh.centroids[k, 1],
                     recon.phihat[k], jx, jy, recon.fhat[k]])
    write_csv(os.path.join(out, "reconstruction.csv"),
              ["cell", "xc", "yc", "phihat", "jhatx", "jhaty", "fhat"], rows)


def _cmd_montecarlo(raw, out, seed):
    mesh, hdiv, l2, prior, blocks, setup = _assemble_estimation(raw)
    functional = build_functional(raw, hdiv, l2)
    spec = raw.get("montecarlo", {})
    policy = spec.get("policy", WORST_CASE)
    if policy not in (WORST_CASE, ADMISSIBLE_RANDOM):
        raise ConfigError("montecarlo.policy must be 'worst_case' or "
                          "'admissible_random'")
    trials = int(spec.get("trials", 10000))
    tau_prior = float(spec.get("tau_prior", 0.25))
    tau_noise = float(spec.get("tau_noise", 0.25))
    if functional.kind == STATE:
        sol = solve_minimax_system(blocks, setup, functional)
    else:
        sol, _ = solve_rhs_minimax(blocks, setup, prior, functional)
    report = monte_carlo_mse(blocks, prior, setup, functional, sol, policy,
                             trials, seed=seed, tau_prior=tau_prior,
                             tau_noise=tau_noise)
    log.info("montecarlo %s: ratio %.4f (ci %.3g)", policy, report.ratio,
             report.ci)
    write_csv(os.path.join(out, "mc.csv"),
              ["policy", "N", "mse", "sigma_sq", "ratio", "ci"],
              [report.as_row()])


# ----------------------------------------------------------------------
# convergence study
def _refine_channel(ch, fine_mesh):
    """Refine a channel onto a uniformly refined mesh.

    The fine subdomain is the set of children of the coarse subdomain cells;
    scalar weights and constant kernels carry over, per-cell weight tables
    inherit the parent's value.
    """
    parents = fine_mesh.parent_cells
    coarse_pos = {int(c): i for i, c in enumerate(ch.cells)}
    fine_cells = np.nonzero(np.isin(parents, ch.cells))[0]
    parent_idx = np.array([coarse_pos[int(parents[f])] for f in fine_cells])
    weight = ch.weight[parent_idx]
    nc = fine_cells.size
    if ch.kernel is None:
        kernel = None
    else:
        vals = np.unique(ch.kernel.reshape(ch.cells.size ** 2, -1), axis=0)
        if vals.shape[0] != 1:
            raise ConfigError("converge supports identity or constant kernels")
        if ch.group == "scalar":
            kernel = np.full((nc, nc), ch.kernel.flat[0])
        else:
            kernel = np.broadcast_to(ch.kernel[0, 0], (nc, nc, 2, 2)).copy()
    return Channel(ch.group, fine_cells, kernel, weight, fine_mesh), parent_idx


def _gain_difference(setup_f, sol_f, sol_c, maps):
    """H-norm of u_h (prolonged coarse gains) minus u_{h/2} on the fine mesh."""
    total = 0.0
    for ch, fine, coarse, pidx in zip(
        setup_f.flux_channels, sol_f.u1hat, sol_c.u1hat, maps["flux"]
    ):
        diff = fine - coarse[pidx]
        total += float(np.sum(np.sum(diff * diff, axis=1) * ch.areas))
    for ch, fine, coarse, pidx in zip(
        setup_f.scalar_channels, sol_f.u2hat, sol_c.u2hat, maps["scalar"]
    ):
        diff = fine - coarse[pidx]
        total += float(np.sum(diff * diff * ch.areas))
    return float(np.sqrt(total))


def run_convergence_study(raw, levels=None, seed=0):
    """Estimator and forward convergence over uniform refinements.

    Returns one dict per level with h, sigma, gain_diff (vs previous level)
    and, when converge.truth is configured, interpolated-truth forward
    errors with observed rates.
    """
    spec = raw.get("converge", {})
    levels = int(spec.get("levels", 4)) if levels is None else levels
    if levels < 2:
        raise ConfigError("converge.levels must be at least 2")
    mesh, hdiv, l2, coeffs, prior, blocks = build_problem(raw)
    base_channels = [build_channel(s, mesh) for s in raw.get("channels", [])]

    truth = spec.get("truth")
    f_spec = spec.get("f")
    if truth is not None:
        phi_exact = scalar_field(truth["phi"])
        j_exact = vector_field(truth["j"])
        if f_spec is None:
            raise ConfigError("converge.truth requires converge.f")

    from .config import build_coefficients, build_prior

    results = []
    prev = None  # (setup, sol, channels)
    for level in range(levels):
        if level > 0:
            mesh = refine_uniform(mesh)
            hdiv, l2 = build_spaces(mesh)
            coeffs = build_coefficients(raw, mesh)
            prior = build_prior(raw, mesh)
            blocks = assemble_core_forms(hdiv, l2, coeffs, prior)
            refined = [_refine_channel(ch, mesh) for ch in prev[2]]
            channels = [r[0] for r in refined]
            maps = {
                "flux": [r[1] for r in refined if r[0].group == "flux"],
                "scalar": [r[1] for r in refined if r[0].group == "scalar"],
            }
        else:
            channels = base_channels
            maps = None
        setup = ObservationSetup(hdiv, l2, channels)
        blocks.with_observation(*setup.gram_blocks())
        functional = build_functional(raw, hdiv, l2)
        if functional.kind == STATE:
            sol = solve_minimax_system(blocks, setup, functional)
        else:
            sol, _ = solve_rhs_minimax(blocks, setup, prior, functional)
        row = {"h": mesh.h, "sigma": sol.sigma, "gain_diff": None,
               "phi_err": None, "j_err": None, "phi_rate": None,
               "j_rate": None}
        if maps is not None:
            row["gain_diff"] = _gain_difference(setup, sol, prev[1], maps)
        if truth is not None:
            f = cell_values(f_spec, mesh, "converge.f")
            fields = solve_forward(blocks, f)
            phi_i = l2.interpolate(phi_exact)
            j_i = hdiv.interpolate(j_exact)
            row["phi_err"] = l2.l2_norm(fields.phi - phi_i)
            row["j_err"] = hdiv.l2_norm(fields.j - j_i)
            if results and results[-1]["phi_err"]:
                row["phi_rate"] = float(
                    np.log2(results[-1]["phi_err"] / row["phi_err"]))
                row["j_rate"] = float(
                    np.log2(results[-1]["j_err"] / row["j_err"]))
        results.append(row)
        prev = (setup, sol, channels)
        log.info("converge level %d: h=%.4g sigma=%.8g", level, mesh.h,
                 sol.sigma)
    return results


def _cmd_converge(raw, out, seed):
    results = run_convergence_study(raw, seed=seed)
    rows = []
    for r in results:
        rows.append([
            r["h"], r["sigma"],
            "" if r["gain_diff"] is None else _fmt(r["gain_diff"]),
            "" if r["phi_err"] is None else _fmt(r["phi_err"]),
            "" if r["j_err"] is None else _fmt(r["j_err"]),
            "" if r["phi_rate"] is None else _fmt(r["phi_rate"]),
            "" if r["j_rate"] is None else _fmt(r["j_rate"]),
        ])
    write_csv(os.path.join(out, "converge.csv"),
              ["h", "sigma", "gain_diff", "phi_err", "j_err", "phi_rate",
               "j_rate"], rows)


_HANDLERS = {
    "forward": _cmd_forward,
    "estimate": _cmd_estimate,
    "reconstruct": _cmd_reconstruct,
    "estimate-rhs": _cmd_estimate_rhs,
    "converge": _cmd_converge,
    "montecarlo": _cmd_montecarlo,
}


def run(command, config_path, out_dir=".", seed=0, threads=None):
    """Execute one command; returns the process exit status."""
    if threads not in (None, 1):
        log.info("--threads is accepted for interface stability; solves are "
                 "single-threaded")
    try:
        raw = load_config(config_path)
        os.makedirs(out_dir, exist_ok=True)
        if "seed" in raw and seed == 0:
            seed = int(raw["seed"])
        _HANDLERS[command](raw, out_dir, seed)
        return 0
    except (ConfigError, MeshError, AssemblyError, ObservationError,
            KeyError) as exc:
        print(f"hdiv-minimax: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, FloatingPointError) as exc:
        print(f"hdiv-minimax: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"hdiv-minimax: i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


def _setup_logging():
    level = os.environ.get("HDIV_MINIMAX_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO,
              "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")
    if level not in levels:
        log.error("HDIV_MINIMAX_LOG must be one of error|info|debug")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="hdiv-minimax",
        description="Guaranteed estimation for mixed elliptic problems",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", default=".")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=None)
    args = parser.parse_args(argv)
    _setup_logging()
    return run(args.command, args.config, args.out, args.seed, args.threads)


if __name__ == "__main__":
    sys.exit(main())
