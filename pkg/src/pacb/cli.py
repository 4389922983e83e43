"""Command-line front end: ``pacb certify|verify|gen|sweep``.

Exit codes: 0 success, 1 error (bad input, I/O), 2 trivial certificate,
3 a verification check failed.  ``PACB_SEED`` overrides the seed from a
``--config`` file; an explicit ``--seed`` flag wins over both.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import bounds, io, verify
from .bounds import STRUCTURES, CertifyConfig, certify, structures_for
from .networks import KINDS, Dataset, Layer, Network, layer_jacobian, margins, spectral_normalize
from .pacbayes import optimal_posterior
from .sensitivity import ToeplitzSymbol

EXIT_OK, EXIT_ERROR, EXIT_TRIVIAL, EXIT_CHECK_FAILED = 0, 1, 2, 3
CHECKS = ("condition", "bound", "concentration", "optimality", "jacobian", "lemma")


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors share exit code 1 (2 means "trivial")
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_ERROR)


# -- configuration ----------------------------------------------------------


DATA_DIR = Path(__file__).resolve().parent / "data"


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise CliError("config must be a JSON object")
    return cfg


def resolve_seed(flag, cfg: dict) -> int:
    if flag is not None:
        return int(flag)
    env = os.environ.get("PACB_SEED")
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError as exc:
            raise CliError(f"PACB_SEED must be an integer, got {env!r}") from exc
    return int(cfg.get("seed", 0))


def _pick(args, cfg, name, default=None):
    v = getattr(args, name, None)
    if v is not None:
        return v
    return cfg.get(name, default)


def _symbol(args, cfg) -> ToeplitzSymbol:
    coeffs = _pick(args, cfg, "symbol")
    rho = _pick(args, cfg, "rho")
    if coeffs is not None and rho is not None:
        raise CliError("give either --symbol or --rho, not both")
    if rho is not None:
        return ToeplitzSymbol.geometric(float(rho))
    if coeffs is not None:
        if isinstance(coeffs, str):
            coeffs = [float(c) for c in coeffs.split(",") if c.strip()]
        return ToeplitzSymbol(tuple(float(c) for c in coeffs))
    return ToeplitzSymbol.identity()


def _toy_config(args, cfg: dict) -> dict:
    """With ``--toy``, fill unset inputs from the bundled network, data and config."""
    if not getattr(args, "toy", False):
        return cfg
    out = load_config(DATA_DIR / "toy_config.json")
    out.update({"net": [str(DATA_DIR / "toy_net.json")], "data": str(DATA_DIR / "toy_data.csv")})
    out.update(cfg)
    return out


def _inputs(args, cfg):
    nets = args.net or cfg.get("net")
    data_path = _pick(args, cfg, "data")
    if not nets or not data_path:
        raise CliError("--net and --data are required")
    if isinstance(nets, str):
        nets = [nets]
    try:
        networks = [io.load_network(p) for p in nets]
        data = io.load_dataset(data_path, _pick(args, cfg, "radius"))
    except OSError as exc:
        raise CliError(f"cannot read input: {exc}") from exc
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    return networks, data


def _certify_config(args, cfg, seed, sigma2_scale=1.0) -> CertifyConfig:
    mc = int(_pick(args, cfg, "mc_samples", 10_000))
    if mc and mc < 1000:
        raise CliError("mc_samples must be 0 (off) or at least 1000")
    return CertifyConfig(
        symbol=_symbol(args, cfg),
        circ_gain=_pick(args, cfg, "circ_gain", "exact"),
        anchor_index=_pick(args, cfg, "anchor"),
        mc_samples=mc,
        seed=seed,
        sigma2_scale=sigma2_scale,
    )


def _jobs(networks, structure):
    jobs = []
    for net in networks:
        if structure == "all":
            jobs += [(net, s) for s in structures_for(net.kind)]
        else:
            if bounds.NET_KIND[structure] != net.kind:
                raise CliError(f"structure {structure} does not apply to a {net.kind} network")
            jobs.append((net, structure))
    return jobs


# -- commands ---------------------------------------------------------------


def cmd_certify(args) -> int:
    cfg = _toy_config(args, load_config(args.config))
    seed = resolve_seed(args.seed, cfg)
    networks, data = _inputs(args, cfg)
    gamma = float(_pick(args, cfg, "gamma", 0) or 0)
    delta = float(_pick(args, cfg, "delta", 0.05))
    structure = _pick(args, cfg, "structure", "all")
    if gamma <= 0 or not 0 < delta < 1:
        raise CliError("need --gamma > 0 and 0 < --delta < 1")
    config = _certify_config(args, cfg, seed)
    out = Path(_pick(args, cfg, "out_dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    for net, s in _jobs(networks, structure):
        try:
            rep = certify(net, data, gamma, delta, s, config)
        except ValueError as exc:
            raise CliError(f"{s}: {exc}") from exc
        (out / f"report_{s}.json").write_text(rep.to_json())
        (out / f"report_{s}.md").write_text(rep.to_markdown())
        reports.append(rep)
        status = "trivial" if rep.trivial_flag else "ok"
        print(f"{s}: bound={rep.final_bound:.6g} kl={rep.kl.total:.6g} [{status}]")
    if len(reports) > 1:
        (out / "comparison.md").write_text(bounds.comparison_markdown(reports))
    failed = [r.structure for r in reports if r.mc_diagnostics and not r.mc_passed]
    if failed:
        print("Monte Carlo diagnostics failed for: " + ", ".join(failed), file=sys.stderr)
        return EXIT_CHECK_FAILED
    if any(r.trivial_flag for r in reports):
        return EXIT_TRIVIAL
    return EXIT_OK


def _kink_free_probes(net: Network, X: np.ndarray, count: int, margin: float = 1e-3):
    keep = []
    for x in X:
        a, ok = x, True
        for W in net.matrices()[:-1]:
            z = W @ a
            if np.min(np.abs(z)) <= margin:
                ok = False
                break
            a = np.maximum(z, 0.0)
        if ok:
            keep.append(x)
        if len(keep) == count:
            break
    return keep


def run_checks(net, data, gamma, delta, structure, config, checks, n_bound=500) -> dict:
    """Run the named verification checks; returns ``{name: result dict}``."""
    from .pacbayes import PosteriorSpec, choose_sigma2, eta_squared
    from .sensitivity import approximate, build

    results = {}
    seed = config.seed
    norm_net, _ = spectral_normalize(net)
    B = data.radius_B
    anchor = config.anchor_index
    if anchor is None:
        anchor = int(np.argmax(np.linalg.norm(data.inputs, axis=1)))
    sens = build(
        norm_net, structure, B,
        anchor_x=data.inputs[anchor] if structure == "lowrank" else None,
        symbol=config.symbol, circ_gain=config.circ_gain,
    )
    beta = bounds._grid_beta(norm_net, structure, config.circ_gain)
    grid = bounds.beta_grid(gamma, B, norm_net.depth, data.size)
    shift = 1.0 if structure == "residual" else 0.0
    approx = [approximate(s, grid.select(beta) - shift) for s in sens]
    sigma2 = choose_sigma2(approx, gamma) * config.sigma2_scale
    eta2 = eta_squared(norm_net.param_sq_norm(), gamma)
    posts = [optimal_posterior(s, eta2) for s in sens]
    n = config.mc_samples
    if "condition" in checks:
        cond = verify.mc_perturbation_condition(norm_net, data, PosteriorSpec(sigma2, eta2, tuple(posts)), sens, gamma, n, seed)
        # the analytic claim under test is the surrogate event; the direct event must hold too
        results["perturbation_condition"] = cond.surrogate.to_dict()
        results["perturbation_condition_direct"] = cond.direct.to_dict()
    if "concentration" in checks:
        results["concentration"] = verify.mc_concentration_block(sens, posts, sigma2, math.log(2.0), n, seed).to_dict()
    if "bound" in checks:
        results["perturbation_bound"] = verify.mc_perturbation_bound(norm_net, data, sens, n_bound, seed).to_dict()
    if "optimality" in checks:
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(3):
            A = rng.standard_normal((5, 5))
            e2 = float(rng.uniform(0.1, 5.0))
            R = verify.oracle_min_D(A, e2)
            closed = np.linalg.inv(np.eye(5) + e2 * A.T @ A)
            worst = max(worst, float(np.linalg.norm(R - closed)))
        ok = worst < 1e-6
        results["optimality"] = {"name": "optimality", "max_frobenius_gap": worst, "pass": ok}
    if "jacobian" in checks and net.kind == "dense":
        probes = _kink_free_probes(norm_net, data.inputs, 10)
        errs = []
        for x in probes:
            for l in range(norm_net.depth):
                J = layer_jacobian(norm_net, x, l)
                F = verify.finite_diff_jacobian(norm_net, x, l)
                errs.append(float(np.linalg.norm(J - F) / max(np.linalg.norm(F), 1e-300)))
        med = float(np.median(errs)) if errs else 0.0
        results["jacobian"] = {"name": "jacobian", "median_rel_error": med, "probes": len(probes), "pass": med < 1e-5}
    if "lemma" in checks and net.kind == "dense":
        results["output_change_lemma"] = verify.check_neyshabur_perturbation(norm_net, data, n_bound, seed).to_dict()
    return results


def cmd_verify(args) -> int:
    cfg = _toy_config(args, load_config(args.config))
    seed = resolve_seed(args.seed, cfg)
    networks, data = _inputs(args, cfg)
    gamma = float(_pick(args, cfg, "gamma", 0) or 0)
    delta = float(_pick(args, cfg, "delta", 0.05))
    if gamma <= 0:
        raise CliError("need --gamma > 0")
    checks = CHECKS if not args.checks else tuple(c.strip() for c in args.checks.split(","))
    unknown = set(checks) - set(CHECKS)
    if unknown:
        raise CliError(f"unknown checks: {', '.join(sorted(unknown))}")
    config = _certify_config(args, cfg, seed, sigma2_scale=float(args.sigma2_scale))
    if config.mc_samples == 0:
        raise CliError("verify needs mc_samples >= 1000")
    summary = {}
    failed = []
    for net, s in _jobs(networks, _pick(args, cfg, "structure", "all")):
        res = run_checks(net, data, gamma, delta, s, config, checks)
        summary[s] = res
        for name, r in res.items():
            flag = "PASS" if r["pass"] else "FAIL"
            print(f"{s}/{name}: {flag}")
            if not r["pass"]:
                failed.append(f"{s}/{name}")
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    if failed:
        print("failing checks: " + ", ".join(failed), file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def generate_network(kind, d, h, K, k=3, n=None, scale=1.0, init="random", noise=0.05, seed=0) -> Network:
    """Seeded network; ``init="random"`` draws ``N(0, scale^2/fan_in)`` entries,
    ``init="aligned"`` starts from coordinate-copying weights (which separate the
    generated blobs) plus ``noise``-sized random entries."""
    if kind not in KINDS:
        raise CliError(f"unknown kind {kind!r}")
    if d < 2:
        raise CliError("need d >= 2")
    rng = np.random.default_rng(seed)
    n = h if n is None else n
    if kind in ("residual", "circulant", "toeplitz") and n != h:
        raise CliError(f"{kind} networks need input dim n == h")
    if K > h:
        raise CliError("K must not exceed h")
    aligned = init == "aligned"
    amp = noise if aligned else scale
    layers = []
    if kind in ("circulant", "toeplitz"):
        size = h if kind == "circulant" else k
        if size > h:
            raise CliError("kernel length k must not exceed h")
        for _ in range(d):
            w = amp * rng.standard_normal(size) / math.sqrt(size)
            if aligned:
                w[0] += 1.0
            layers.append(Layer(kind, w, h))
        return Network(kind, layers, h, K)
    dims = [n] + [h] * (d - 1) + [K]
    for l in range(d):
        rows, cols = dims[l + 1], dims[l]
        W = amp * rng.standard_normal((rows, cols)) / math.sqrt(cols)
        if aligned and not (kind == "residual" and l < d - 1):
            W[np.arange(min(rows, cols)), np.arange(min(rows, cols))] += 1.0
        layers.append(Layer(kind, W))
    return Network(kind, layers, n, K)


def generate_blobs(m, n, sep=12.0, std=1.0, seed=0) -> Dataset:
    """Two Gaussian blobs at ``+/- sep/2 * (e1 - e2)/sqrt(2)``; labels 1 and 2."""
    if n < 2:
        raise CliError("blob data needs n >= 2")
    rng = np.random.default_rng(seed + 1)
    v = np.zeros(n)
    v[0], v[1] = 1.0, -1.0
    v /= math.sqrt(2.0)
    half = m // 2
    X = std * rng.standard_normal((m, n))
    X[:half] += 0.5 * sep * v
    X[half:] -= 0.5 * sep * v
    y = np.r_[np.ones(half, dtype=np.int64), 2 * np.ones(m - half, dtype=np.int64)]
    return Dataset.from_arrays(X, y)


def cmd_gen(args) -> int:
    cfg = load_config(args.config)
    seed = resolve_seed(args.seed, cfg)
    net = generate_network(
        args.kind, args.d, args.h, args.K, k=args.k, n=args.n, scale=args.scale,
        init=args.init, noise=args.noise, seed=seed,
    )
    io.save_network(net, args.net_out)
    if args.data_out:
        data = generate_blobs(args.m, net.input_dim, args.sep, args.std, seed)
        io.save_dataset(data, args.data_out)
        mg = margins(net, data)
        print(f"wrote {args.net_out} and {args.data_out} (B={data.radius_B:.6g}, min margin={mg.min():.6g})")
    else:
        print(f"wrote {args.net_out}")
    return EXIT_OK


def _int_list(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _float_list(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


SWEEP_HEADER = ["d", "h", "k", "K", "rho", "structure", "delta_factor", "final_bound"]


def sweep_rows(kind, ds, hs, Ks, ks, rhos, structures, m, gamma, delta, seed):
    rows = []
    for d in ds:
        for h in hs:
            for K in Ks:
                for k in ks if kind == "toeplitz" else ks[:1]:
                    for rho in rhos if kind == "toeplitz" else rhos[:1]:
                        net = generate_network(kind, d, h, K, k=k, init="aligned", seed=seed)
                        data = generate_blobs(m, h, seed=seed)
                        symbol = ToeplitzSymbol.geometric(rho) if kind == "toeplitz" else ToeplitzSymbol.identity()
                        cfg = CertifyConfig(symbol=symbol, mc_samples=0, seed=seed)
                        for s in structures:
                            rep = certify(net, data, gamma, delta, s, cfg)
                            rows.append([d, h, k, K, rho, s, repr(rep.asymptotic_delta_factor), repr(rep.final_bound)])
    return rows


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    seed = resolve_seed(args.seed, cfg)
    structures = [s for s in args.structures.split(",") if s] if args.structures else structures_for(args.kind)
    for s in structures:
        if s not in STRUCTURES or bounds.NET_KIND[s] != args.kind:
            raise CliError(f"structure {s} does not apply to {args.kind} networks")
    lists = (_int_list(args.d), _int_list(args.h), _int_list(args.K), _int_list(args.k), _float_list(args.rho))
    rows = [] if any(len(v) == 0 for v in lists) else sweep_rows(
        args.kind, *lists, structures, args.m, args.gamma, args.delta, seed
    )
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        w.writerows(rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def _common_inputs(p):
    p.add_argument("--net", nargs="+", help="network JSON file(s)")
    p.add_argument("--data", help="dataset CSV (label,x1,...,xn)")
    p.add_argument("--radius", type=float, help="override the input radius B")
    p.add_argument("--gamma", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--structure", choices=STRUCTURES + ("all",))
    p.add_argument("--mc-samples", dest="mc_samples", type=int)
    p.add_argument("--circ-gain", dest="circ_gain", choices=("literal", "exact"))
    p.add_argument("--symbol", help="Toeplitz symbol coefficients, comma separated")
    p.add_argument("--rho", type=float, help="geometric Toeplitz symbol [1, rho]")
    p.add_argument("--anchor", type=int, help="dataset row used as the low-rank anchor")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--toy", action="store_true", help="use the bundled toy network and dataset")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pacb", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("certify", help="compute bound certificates")
    _common_inputs(p)
    p.add_argument("--out-dir", dest="out_dir", help="directory for report files")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("verify", help="run the verification checks")
    _common_inputs(p)
    p.add_argument("--checks", help=f"comma list from {','.join(CHECKS)}")
    p.add_argument("--sigma2-scale", dest="sigma2_scale", type=float, default=1.0,
                   help="multiply the sampling variance (to test that checks can fail)")
    p.add_argument("--out", help="write the JSON summary here")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gen", help="generate a network and a blob dataset")
    p.add_argument("--kind", choices=KINDS, default="dense")
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--h", type=int, default=16)
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--k", type=int, default=3, help="Toeplitz kernel length")
    p.add_argument("--n", type=int, help="input dim (dense only; default h)")
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--init", choices=("random", "aligned"), default="random")
    p.add_argument("--noise", type=float, default=0.05, help="random part of aligned weights")
    p.add_argument("--m", type=int, default=1000)
    p.add_argument("--sep", type=float, default=12.0)
    p.add_argument("--std", type=float, default=1.0)
    p.add_argument("--net-out", dest="net_out", default="net.json")
    p.add_argument("--data-out", dest="data_out")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("sweep", help="leading factors and bounds over a grid of shapes")
    p.add_argument("--kind", choices=KINDS, default="dense")
    p.add_argument("--structures", help="comma list; default every structure for the kind")
    p.add_argument("--d", default="2,3")
    p.add_argument("--h", default="8,16")
    p.add_argument("--K", default="2")
    p.add_argument("--k", default="3")
    p.add_argument("--rho", default="0")
    p.add_argument("--m", type=int, default=200)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--out", default="sweep.csv")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
