"""Experiment harness: config parsing, dispatch, and report writing.

Usage: ``microloc <experiment> --config <file> [--out <dir>]``.  Configs
are JSON with a versioned schema; unknown keys are rejected.  Exit code 0
means every invariant check in the run passed, 1 names a failing check,
2 reports validation errors.  Output files are written atomically.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

EXPERIMENTS = ("partition-verify", "band-bound", "moyal-order", "cotlar",
               "parametrix", "radon-block", "radon-invert")

SCHEMA_VERSION = 1

_COMMON_KEYS = {"schema_version", "experiment", "seed"}

_SCHEMAS = {
    "partition-verify": {"dim", "metric", "bands", "lattice_step", "bump",
                         "low_freq_cap", "samples"},
    "band-bound": {"grid", "metric", "bands", "lattice_step", "bump",
                   "symbol", "orders", "s", "k_range", "mode", "cutoff"},
    "moyal-order": {"grid", "symbol_a", "symbol_b", "orders_n", "h_list",
                    "cutoff"},
    "cotlar": {"grid", "metric", "bands", "lattice_step", "bump", "symbol",
               "s", "cutoff", "active_bands"},
    "parametrix": {"grid", "metric", "bands", "lattice_step", "bump",
                   "low_freq_cap", "symbol", "m2", "c0", "big_c0", "big_r",
                   "order", "cutoff", "tests"},
    "radon-block": {"grid", "metric", "bands", "lattice_step", "bump",
                    "symbol", "m2", "k_range", "radon", "cutoff"},
    "radon-invert": {"grid", "radon", "phantom", "filter"},
}


class ValidationFailure(Exception):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_json(path: str, obj) -> None:
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_csv(path: str, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for c in row:
            cells.append(f"{c:.12e}" if isinstance(c, float) else str(c))
        lines.append(",".join(cells))
    _atomic_write(path, "\n".join(lines) + "\n")


def _is_pow2(n) -> bool:
    return isinstance(n, int) and n >= 2 and (n & (n - 1)) == 0


def validate_config(cfg: dict, experiment: str) -> list[str]:
    errors = []
    if not isinstance(cfg, dict):
        return ["config root must be a JSON object"]
    if cfg.get("schema_version") != SCHEMA_VERSION:
        errors.append(f"schema_version must be {SCHEMA_VERSION}")
    if cfg.get("experiment") != experiment:
        errors.append(f"config experiment {cfg.get('experiment')!r} does not "
                      f"match requested {experiment!r}")
    allowed = _COMMON_KEYS | _SCHEMAS[experiment]
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        errors.append(f"unknown keys: {unknown}")

    grid = cfg.get("grid")
    if grid is not None:
        if not isinstance(grid, dict):
            errors.append("grid must be an object")
        else:
            dim = grid.get("dim")
            n = grid.get("n_grid")
            if dim not in (1, 2):
                errors.append("grid.dim must be 1 or 2")
            if not _is_pow2(n):
                errors.append("grid.n_grid must be a power of two")
            elif dim == 1 and n > 512:
                errors.append("grid.n_grid exceeds the dim-1 ceiling of 512")
            elif dim == 2 and experiment != "radon-invert" and n > 64:
                errors.append("grid.n_grid exceeds the dim-2 ceiling of 64")
            elif dim == 2 and n > 256:
                errors.append("grid.n_grid exceeds the Radon ceiling of 256")
            if not (isinstance(grid.get("half_width"), (int, float))
                    and grid.get("half_width", 0) > 0):
                errors.append("grid.half_width must be positive")
    if experiment == "moyal-order":
        for n in cfg.get("orders_n", []):
            if not (isinstance(n, int) and 1 <= n <= 6):
                errors.append(f"moyal order {n} outside 1..6")
    if experiment == "parametrix":
        if not (isinstance(cfg.get("order"), int)
                and 1 <= cfg.get("order", 0) <= 3):
            errors.append("parametrix order must lie in 1..3")
    bands = cfg.get("bands")
    if bands is not None and isinstance(bands, dict):
        if bands.get("k_min", 0) > bands.get("k_max", 0):
            errors.append("bands.k_min must be <= bands.k_max")
    ls = cfg.get("lattice_step")
    if ls is not None and not (isinstance(ls, (int, float)) and 0 < ls <= 0.125):
        errors.append("lattice_step must lie in (0, 1/8]")
    return errors


def _build_grid(cfg):
    from .grids import GridSpec
    g = cfg["grid"]
    return GridSpec(dim=g["dim"], half_width=float(g["half_width"]),
                    n_grid=int(g["n_grid"]))


def _build_metric(cfg, dim):
    from .expressions import parse_expression
    from .metric import MetricField, conformal_field, identity_field
    m = cfg.get("metric", {"kind": "identity"})
    if m["kind"] == "identity":
        return identity_field(dim)
    if m["kind"] == "conformal":
        f = parse_expression(m["expr"], dim, with_xi=False)
        return conformal_field(lambda x: f(*x), dim,
                               lambda_min=float(m["lambda_min"]),
                               lambda_max=float(m["lambda_max"]))
    raise ValidationFailure([f"unknown metric kind {m['kind']!r}"])


def _build_partition(cfg, metric):
    from .partition import build_partition
    b = cfg["bands"]
    return build_partition(metric, int(b["k_min"]), int(b["k_max"]),
                           lattice_step=float(cfg.get("lattice_step", 0.125)),
                           bump_kind=cfg.get("bump", {}).get(
                               "kind", "exp-mollified"),
                           low_freq_cap=bool(cfg.get("low_freq_cap", False)))


def _build_symbol(expr, grid):
    from .expressions import parse_expression
    from .grids import sample_on
    return sample_on(grid, parse_expression(expr, grid.dim))


def _build_cutoff(cfg, grid, key="cutoff"):
    from .quantize import make_cutoff
    c = cfg.get(key, {})
    r_one = float(c.get("r_one", 0.5 * grid.half_width))
    r_zero = float(c.get("r_zero", 0.9 * grid.half_width))
    return make_cutoff(grid, r_one, r_zero)


def _run_partition_verify(cfg, outdir):
    import numpy as np

    from .partition import (overlap_scan, pou_deviation, validate_net,
                            verify_localizer_derivatives)
    dim = int(cfg.get("dim", 1))
    metric = _build_metric(cfg, dim)
    part = _build_partition(cfg, metric)
    rng = np.random.default_rng(int(cfg.get("seed", 0)))

    s = cfg.get("samples", {})
    n_x = int(s.get("n_x", 16))
    n_xi = int(s.get("n_xi", 400))
    x_half = float(s.get("x_half_width", np.pi))
    xs = np.linspace(-x_half, x_half, n_x)[:, None] \
        * np.ones(dim)[None, :]
    lo, hi = 2.0 ** part.k_min, 2.0 ** (part.k_max + 1)
    mags = np.exp(rng.uniform(np.log(max(lo, 1e-3)), np.log(hi), n_xi))
    dirs = rng.standard_normal((n_xi, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    # restrict to the effective support: fiber norm inside built annuli
    scale = np.sqrt(metric.lambda_max)
    mags = np.clip(mags, lo, hi / scale * 0.999)
    xis = mags[:, None] * dirs

    nets = {k: validate_net(part.nets[k], dim, part.lattice_step)
            for k in part.bands}
    dev = pou_deviation(part, xs, xis)
    scan = overlap_scan(part, xs, xis)
    deriv_samples = [(xs[i % len(xs)], xis[i]) for i in range(0, n_xi,
                                                              max(1, n_xi // 24))]
    deriv = verify_localizer_derivatives(part, deriv_samples)

    checks = [
        ("net_separation", all(v["separation_ok"] for v in nets.values())),
        ("net_covering", all(v["covering_ok"] for v in nets.values())),
        ("net_packing", all(v["size"] <= v["packing_bound"]
                            for v in nets.values())),
        ("partition_of_unity", dev <= 1e-10),
        ("overlap_bound", scan["max_overlap"] <= scan["overlap_bound"]),
        ("radial_bands", scan["max_radial_bands"] <= 5),
        ("derivative_uniformity", deriv["uniform_spread_ok"]),
    ]
    report = {
        "nets": {str(k): v for k, v in nets.items()},
        "pou_max_deviation": dev,
        "overlap": scan,
        "derivatives": deriv,
    }
    write_json(os.path.join(outdir, "partition_verify.json"), report)
    write_csv(os.path.join(outdir, "overlap_histogram.csv"),
              ["overlap", "count"],
              [[k, v] for k, v in sorted(scan["histogram"].items())])
    return report, checks


def _run_band_bound(cfg, outdir):
    import numpy as np

    from .quantize import band_bound_experiment, fit_log2_slope
    grid = _build_grid(cfg)
    metric = _build_metric(cfg, grid.dim)
    part = _build_partition(cfg, metric)
    a = _build_symbol(cfg["symbol"], grid)
    chi = _build_cutoff(cfg, grid)
    k_lo, k_hi = cfg["k_range"]
    m2 = float(cfg["orders"][1])
    rows = band_bound_experiment(a, part, chi, chi, float(cfg.get("s", 0.0)),
                                 range(int(k_lo), int(k_hi) + 1),
                                 cfg.get("mode", "semiclassical"), m2)
    live = [r for r in rows if not r["skipped"]]
    slope = fit_log2_slope([r["k"] for r in live],
                           [r["norm"] for r in live]) \
        if len(live) >= 2 else float("nan")
    write_csv(os.path.join(outdir, "band_bound.csv"),
              ["k", "j", "norm", "renorm_ratio", "mode"],
              [[r["k"], r["j"], r["norm"], r["renorm_ratio"], r["mode"]]
               for r in rows])
    report = {"rows": rows, "slope": slope}
    write_json(os.path.join(outdir, "band_bound.json"), report)
    checks = [("norms_finite", all(np.isfinite(r["norm"]) for r in live))]
    return report, checks


def _run_moyal_order(cfg, outdir):
    import numpy as np

    from .moyal import MoyalTruncation, composition_residual
    grid = _build_grid(cfg)
    a = _build_symbol(cfg["symbol_a"], grid)
    b = _build_symbol(cfg["symbol_b"], grid)
    chi = _build_cutoff(cfg, grid)
    rows = []
    slopes = {}
    for n in cfg["orders_n"]:
        res = []
        for h in cfg["h_list"]:
            r = composition_residual(a, b, MoyalTruncation(order=n, h=h),
                                     chi, chi)
            rows.append([n, h, r])
            res.append(r)
        hs = np.asarray(cfg["h_list"], dtype=float)
        res = np.asarray(res)
        keep = res > 1e-15
        slopes[str(n)] = float(np.polyfit(np.log(hs[keep]),
                                          np.log(res[keep]), 1)[0]) \
            if keep.sum() >= 2 else float("inf")
    write_csv(os.path.join(outdir, "moyal_order.csv"),
              ["n", "h", "residual"], rows)
    report = {"slopes": slopes}
    write_json(os.path.join(outdir, "moyal_order.json"), report)
    checks = [("residuals_finite",
               all(np.isfinite(r[2]) for r in rows))]
    return report, checks


def _run_cotlar(cfg, outdir):
    import numpy as np

    from .quantize import assemble_block, weyl_quantize
    from .recombine import BlockFamily, cotlar_bounds, recombine_sum
    grid = _build_grid(cfg)
    metric = _build_metric(cfg, grid.dim)
    part = _build_partition(cfg, metric)
    a = _build_symbol(cfg["symbol"], grid)
    chi = _build_cutoff(cfg, grid)
    indices, mats = [], []
    for k in part.bands:
        for j in range(part.nets[k].size):
            blk = assemble_block(a, part, j, k, chi, chi)
            if np.abs(blk.matrix).max() > 1e-14:
                indices.append((j, k))
                mats.append(blk.matrix)
    fam = BlockFamily(indices=indices, matrices=mats, grid=grid,
                      s_in=float(cfg.get("s", 0.0)),
                      s_out=float(cfg.get("s", 0.0)))
    ref_m = chi.ravel()[:, None] * weyl_quantize(a).matrix \
        * chi.ravel()[None, :]
    from .quantize import DiscreteOperator
    report = recombine_sum(fam, DiscreteOperator(matrix=ref_m, grid=grid),
                           active_bands=cfg.get("active_bands"))
    cert = report["certificate"]
    write_json(os.path.join(outdir, "cotlar.json"), {
        "A": cert.a_bound, "B": cert.b_bound, "bound": cert.bound,
        "achieved": cert.achieved,
        "pair_matrix_file": "pair_matrix.csv",
        "relative_discrepancy": report["relative_discrepancy"],
        "tails": report["tails"],
        "blocks": len(fam),
    })
    write_csv(os.path.join(outdir, "pair_matrix.csv"),
              [f"b{i}" for i in range(len(fam))],
              [list(map(float, row)) for row in cert.star_pair_matrix])
    checks = [("cotlar_inequality", cert.ok),
              ("tail_vanishes", report["tails"][-1]["norm"] <= 1e-10)]
    return report["tails"], checks


def _run_parametrix(cfg, outdir):
    import numpy as np

    from .parametrix import (EllipticSymbol, Parametrix, build_parametrix,
                             gaussian_wavepacket, parametrix_residual)
    grid = _build_grid(cfg)
    metric = _build_metric(cfg, grid.dim)
    part = _build_partition(cfg, metric)
    p_sym = _build_symbol(cfg["symbol"], grid)
    p = EllipticSymbol(symbol=p_sym, m2=float(cfg["m2"]),
                       c0=float(cfg.get("c0", 0.5)),
                       big_c0=float(cfg.get("big_c0", 1e6)),
                       big_r=float(cfg.get("big_r", 0.0)), metric=metric)
    chi = _build_cutoff(cfg, grid)
    px = build_parametrix(p, part, int(cfg["order"]), chi, chi, grid)
    t = cfg.get("tests", {})
    sigma = float(t.get("sigma", 0.2))
    tests = [gaussian_wavepacket(grid, t.get("x0", [0.0] * grid.dim),
                                 xi0, sigma)
             for xi0 in t.get("xi0_list", [[8.0] + [0.0] * (grid.dim - 1)])]
    report = parametrix_residual(px, p, tests, grid)
    out = {k: v for k, v in report.items() if k != "rel_errors"}
    out["rel_errors"] = report["rel_errors"]
    out["excluded_patches"] = [list(e) for e in report["excluded_patches"]]
    write_json(os.path.join(outdir, "parametrix.json"), out)
    checks = [("no_rejected_tests", not report["rejected"]),
              ("residuals_finite",
               all(np.isfinite(r) for r in report["rel_errors"]))]
    return report, checks


def _run_radon_block(cfg, outdir):
    import numpy as np

    from .quantize import make_cutoff
    from .radon import RadonConfig, radon_block_experiment
    grid = _build_grid(cfg)
    metric = _build_metric(cfg, grid.dim)
    part = _build_partition(cfg, metric)
    a = _build_symbol(cfg["symbol"], grid)
    r = cfg["radon"]
    rcfg = RadonConfig(grid=grid, n_angles=int(r["n_angles"]),
                       n_offsets=int(r["n_offsets"]))
    chi = _build_cutoff(cfg, grid)
    chi_sino = np.ones((rcfg.n_offsets, rcfg.n_angles))
    k_lo, k_hi = cfg["k_range"]
    rows, slope = radon_block_experiment(a, part, chi_sino, chi, chi,
                                         range(int(k_lo), int(k_hi) + 1),
                                         rcfg, float(cfg["m2"]))
    write_csv(os.path.join(outdir, "radon_block.csv"),
              ["k", "norm", "renorm_ratio"],
              [[r_["k"], r_["norm"], r_["renorm_ratio"]] for r_ in rows
               if not r_["skipped"]])
    write_json(os.path.join(outdir, "radon_block.json"),
               {"rows": rows, "slope": slope})
    live = [r_ for r_ in rows if not r_["skipped"]]
    checks = [("norms_finite", all(np.isfinite(r_["norm"]) for r_ in live))]
    return rows, checks


def _run_radon_invert(cfg, outdir):
    import numpy as np

    from .radon import (RadonConfig, fbp_invert, phantom, radon_adjoint,
                        radon_forward, save_array)
    grid = _build_grid(cfg)
    r = cfg["radon"]
    rcfg = RadonConfig(grid=grid, n_angles=int(r["n_angles"]),
                       n_offsets=int(r["n_offsets"]))
    ph = cfg.get("phantom", "gaussian")
    img = phantom(ph, grid)
    sino = radon_forward(img, rcfg)
    recon = fbp_invert(sino, cfg.get("filter", "ramp"))
    rel = float(np.linalg.norm(recon - img) / np.linalg.norm(img))

    rng = np.random.default_rng(int(cfg.get("seed", 0)))
    f = rng.standard_normal(img.shape)
    g = rng.standard_normal(sino.values.shape)
    from .radon import Sinogram
    lhs = (radon_forward(f, rcfg).values * g).sum() * rcfg.ds * rcfg.dtheta
    rhs = (f * radon_adjoint(Sinogram(values=g, config=rcfg))).sum() \
        * grid.l2_weight()
    defect = abs(lhs - rhs) / max(abs(lhs), 1e-300)

    save_array(os.path.join(outdir, "phantom.bin"), img, grid.half_width)
    save_array(os.path.join(outdir, "sinogram.bin"), sino.values, rcfg.s_max)
    save_array(os.path.join(outdir, "reconstruction.bin"), recon,
               grid.half_width)
    report = {"phantom": ph, "rel_l2_error": rel,
              "adjointness_defect": defect,
              "support_touches_boundary":
                  sino.meta["support_touches_boundary"]}
    write_json(os.path.join(outdir, "radon_invert.json"), report)
    checks = [("adjointness", defect <= 1e-6),
              ("roundtrip", rel <= float(cfg.get("max_rel_error", 0.05))
               if ph != "disc" else True)]
    return report, checks


_RUNNERS = {
    "partition-verify": _run_partition_verify,
    "band-bound": _run_band_bound,
    "moyal-order": _run_moyal_order,
    "cotlar": _run_cotlar,
    "parametrix": _run_parametrix,
    "radon-block": _run_radon_block,
    "radon-invert": _run_radon_invert,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="microloc",
        description="microlocal toolkit experiment harness")
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", default=".")
    args = parser.parse_args(argv)

    threads = os.environ.get("MICROLOC_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)

    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(json.dumps({"errors": [f"cannot read config: {exc}"]}))
        return 2

    errors = validate_config(cfg, args.experiment)
    if errors:
        print(json.dumps({"errors": errors}))
        return 2

    os.makedirs(args.out, exist_ok=True)
    try:
        _, checks = _RUNNERS[args.experiment](cfg, args.out)
    except ValidationFailure as exc:
        print(json.dumps({"errors": exc.errors}))
        return 2
    failed = [name for name, ok in checks if not ok]
    print(json.dumps({"checks": {name: bool(ok) for name, ok in checks},
                      "failed": failed}, sort_keys=True))
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
