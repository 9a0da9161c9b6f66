"""Command-line driver tying the modules into reproducible pipelines.

Outputs: fields as MFLD, images as PGM, tables as CSV (always with a header
row). Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numerical failure.
Runs with identical inputs, flags, and seeds produce byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .atlas import AtlasConfig, estimate_atlas, pixelwise_mean_atlas
from .errors import (
    ConvergenceError,
    DomainError,
    FileFormatError,
    RankError,
    ShapeError,
)
from .fields import (
    DisplacementField,
    Grid,
    compose,
    field_rms_diff,
    identity_field,
    jacobian_determinant,
    neg_jacobian_fraction,
    self_compose_m,
    warp_image,
    warp_labels,
)
from .fileio import (
    read_basis,
    read_field,
    read_pgm,
    read_pgm_labels,
    write_basis,
    write_csv,
    write_field,
    write_pgm,
)
from .latent import decode, decode_root, encode, explained_variance, fit_basis, pca_mode_field
from .lie import LogField, SolverConfig, exp_field, invert, log_field, root_chain, sqrt_field
from .metrics import dice_report, inv_loss, latent_inv_loss, rec_loss
from .registration import RegistrationConfig, icon_loss, register_pair, sim_loss
from .synth import PhantomSpec, RandomFieldSpec, make_phantom, make_subject, random_log_field


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _solver_cfg(args) -> SolverConfig:
    return SolverConfig(
        tolerance=args.tolerance,
        max_iterations=args.max_iterations,
        damping=args.damping,
    )


def _reg_cfg(args) -> RegistrationConfig:
    return RegistrationConfig(
        lambda_sim=args.lambda_sim,
        lambda_reg=args.lambda_reg,
        pyramid_levels=args.levels,
        iterations_per_level=args.iterations,
        step_size=args.step_size,
        update_smoothing_sigma=args.sigma_update,
        field_smoothing_sigma=args.sigma_field,
    )


def _add_solver_flags(p):
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--max-iterations", type=int, default=200)
    p.add_argument("--damping", type=float, default=0.5)


def _add_reg_flags(p):
    p.add_argument("--lambda-sim", type=float, default=1.0)
    p.add_argument("--lambda-reg", type=float, default=1.0)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--iterations", type=int, default=300)
    p.add_argument("--step-size", type=float, default=0.45)
    p.add_argument("--sigma-update", type=float, default=1.0)
    p.add_argument("--sigma-field", type=float, default=0.0)


def _add_common(p):
    p.add_argument("--json-summary", type=Path, default=None, help="write a run manifest")
    p.add_argument("--threads", type=int, default=1, help="accepted for compatibility; results are thread-count-invariant")


def _summary(args, command, inputs, config, metrics):
    if args.json_summary is None:
        return
    manifest = {
        "command": command,
        "version": __version__,
        "inputs": inputs,
        "config": config,
        "metrics": metrics,
    }
    args.json_summary.parent.mkdir(parents=True, exist_ok=True)
    args.json_summary.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def build_parser() -> _Parser:
    parser = _Parser(prog="diffeo2d", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate phantom images and deformed subjects")
    p.add_argument("--kind", default="ring_with_bump",
                   choices=["ring_with_bump", "four_label_phantom", "gaussian_blobs"])
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--subjects", type=int, default=0)
    p.add_argument("--amplitude", type=float, default=3.0)
    p.add_argument("--smoothing", type=float, default=4.0)
    p.add_argument("--depth", type=int, default=6)
    p.add_argument("--out-dir", type=Path, required=True)
    _add_common(p)

    p = sub.add_parser("register", help="inverse-consistent pairwise registration")
    p.add_argument("--a", type=Path, required=True)
    p.add_argument("--b", type=Path, required=True)
    p.add_argument("--out-ab", type=Path, default=None)
    p.add_argument("--out-ba", type=Path, default=None)
    p.add_argument("--loss-csv", type=Path, default=None)
    p.add_argument("--gt-field", type=Path, default=None,
                   help="ground-truth field mapping a to b; adds median "
                        "endpoint error to the summary")
    _add_reg_flags(p)
    _add_common(p)

    for name, help_text in [
        ("invert", "numerical inverse of a field"),
        ("sqrt", "square root of a field"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--field", type=Path, required=True)
        p.add_argument("--out", type=Path, required=True)
        _add_solver_flags(p)
        _add_common(p)

    p = sub.add_parser("log", help="logarithm map via inverse scaling and squaring")
    p.add_argument("--field", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n", type=int, default=6)
    _add_solver_flags(p)
    _add_common(p)

    p = sub.add_parser("exp", help="exponential map via scaling and squaring")
    p.add_argument("--log", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n", type=int, default=6)
    _add_common(p)

    p = sub.add_parser("compose", help="compose two fields (outer o inner)")
    p.add_argument("--outer", type=Path, required=True)
    p.add_argument("--inner", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_common(p)

    p = sub.add_parser("roots", help="chain of successive square roots")
    p.add_argument("--field", type=Path, required=True)
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--residual-csv", type=Path, default=None)
    _add_solver_flags(p)
    _add_common(p)

    p = sub.add_parser("jacobian", help="Jacobian determinant map and folding fraction")
    p.add_argument("--field", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None)
    _add_common(p)

    p = sub.add_parser("fit-basis", help="fit a PCA basis over log fields")
    p.add_argument("--logs", type=Path, nargs="+", required=True)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--no-symmetrize", action="store_true")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--variance-csv", type=Path, default=None)
    _add_common(p)

    p = sub.add_parser("encode", help="project a log field onto a basis")
    p.add_argument("--basis", type=Path, required=True)
    p.add_argument("--log", type=Path, required=True)
    p.add_argument("--out-csv", type=Path, default=None)
    _add_common(p)

    p = sub.add_parser("decode", help="reconstruct a log field (or root) from a code")
    p.add_argument("--basis", type=Path, required=True)
    p.add_argument("--z", type=str, required=True, help="comma-separated code")
    p.add_argument("--m", type=int, default=None,
                   help="power-of-two root: emit the deformation exp(decode(z)/m)")
    p.add_argument("--out", type=Path, required=True)
    _add_common(p)

    p = sub.add_parser("modes", help="deformation at c std devs along a PCA mode")
    p.add_argument("--basis", type=Path, required=True)
    p.add_argument("--mode", type=int, required=True)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--out", type=Path, required=True)
    _add_common(p)

    p = sub.add_parser("losses", help="loss functionals for a pair of fields")
    p.add_argument("--phi-ab", type=Path, required=True)
    p.add_argument("--phi-ba", type=Path, required=True)
    p.add_argument("--a", type=Path, default=None)
    p.add_argument("--b", type=Path, default=None)
    p.add_argument("--basis", type=Path, default=None)
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--out-csv", type=Path, default=None)
    _add_solver_flags(p)
    _add_common(p)

    p = sub.add_parser("atlas", help="iterative atlas estimation")
    p.add_argument("--images", type=Path, required=True, help="directory of PGM images")
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--max-iter", type=int, default=20)
    p.add_argument("--init", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--basis-dim", type=int, default=8)
    p.add_argument("--depth", type=int, default=6)
    p.add_argument("--out-dir", type=Path, required=True)
    _add_reg_flags(p)
    _add_common(p)

    p = sub.add_parser("warp", help="warp an image or label map by a field")
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--field", type=Path, required=True)
    p.add_argument("--labels", action="store_true")
    p.add_argument("--out", type=Path, required=True)
    _add_common(p)

    p = sub.add_parser("dice", help="per-label Dice between two label images")
    p.add_argument("--a", type=Path, required=True)
    p.add_argument("--b", type=Path, required=True)
    p.add_argument("--out-csv", type=Path, default=None)
    _add_common(p)

    p = sub.add_parser("validate", help="root-chain, negation, and latent consistency checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--amplitude", type=float, default=3.0)
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--basis-dim", type=int, default=4)
    p.add_argument("--out-csv", type=Path, required=True)
    _add_solver_flags(p)
    _add_common(p)

    return parser


# ---------------------------------------------------------------------------
# Subcommand bodies


def _cmd_synth(args):
    args.out_dir.mkdir(parents=True, exist_ok=True)
    grid = Grid(args.height, args.width)
    spec = PhantomSpec(kind=args.kind, grid=grid, seed=args.seed)
    image, labels = make_phantom(spec)
    write_pgm(args.out_dir / "image.pgm", image)
    write_pgm(args.out_dir / "labels.pgm", labels)
    for i in range(args.subjects):
        v = random_log_field(
            RandomFieldSpec(
                grid,
                seed=args.seed * 10_000 + i,
                smoothing_sigma=args.smoothing,
                amplitude=args.amplitude,
                exp_depth=args.depth,
            )
        )
        subj = make_subject((image, labels), v, args.depth)
        stem = args.out_dir / f"subject_{i:03d}"
        write_pgm(f"{stem}_image.pgm", subj.image)
        write_pgm(f"{stem}_labels.pgm", subj.labels)
        write_field(f"{stem}_field.mfld", subj.field)
        write_field(f"{stem}_log.mfld", subj.log)
    _summary(
        args, "synth",
        {"kind": args.kind},
        {"seed": args.seed, "subjects": args.subjects, "amplitude": args.amplitude},
        {},
    )
    return 0


def _cmd_register(args):
    a = read_pgm(args.a)
    b = read_pgm(args.b)
    cfg = _reg_cfg(args)
    result = register_pair(a, b, cfg)
    if args.out_ab:
        write_field(args.out_ab, result.phi_ab)
    if args.out_ba:
        write_field(args.out_ba, result.phi_ba)
    if args.loss_csv:
        write_csv(
            args.loss_csv,
            ["iteration", "l_sim", "l_reg", "l_p"],
            result.loss_history,
        )
    last = result.loss_history[-1]
    metrics = {
        "final_l_sim": last[1],
        "final_l_reg": last[2],
        "final_l_p": last[3],
        "final_inverse_consistency_px": result.final_inverse_consistency,
        "neg_jacobian_ab_pct": neg_jacobian_fraction(result.phi_ab),
        "neg_jacobian_ba_pct": neg_jacobian_fraction(result.phi_ba),
    }
    if args.gt_field:
        gt = read_field(args.gt_field)
        # gt maps a onto b, so phi_ba recovers gt and phi_ab its inverse.
        d = result.phi_ba.u - gt.u
        metrics["median_endpoint_error_px"] = float(
            np.median(np.hypot(d[..., 0], d[..., 1]))
        )
    _summary(args, "register", {"a": str(args.a), "b": str(args.b)},
             vars_config(cfg), metrics)
    return 0


def vars_config(cfg):
    return {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}


def _cmd_invert(args):
    sol = invert(read_field(args.field), _solver_cfg(args))
    write_field(args.out, sol.field)
    _summary(args, "invert", {"field": str(args.field)}, vars_config(_solver_cfg(args)),
             {"residual_px": sol.residual, "iterations": sol.iterations})
    return 0


def _cmd_sqrt(args):
    sol = sqrt_field(read_field(args.field), _solver_cfg(args))
    if sol.warning:
        print(f"warning: {sol.warning}", file=sys.stderr)
    write_field(args.out, sol.field)
    _summary(args, "sqrt", {"field": str(args.field)}, vars_config(_solver_cfg(args)),
             {"residual_px": sol.residual, "iterations": sol.iterations})
    return 0


def _cmd_log(args):
    lf = log_field(read_field(args.field), args.n, _solver_cfg(args))
    write_field(args.out, lf)
    _summary(args, "log", {"field": str(args.field)}, {"n": args.n}, {})
    return 0


def _cmd_exp(args):
    field = exp_field(read_field(args.log, as_log=True), args.n)
    write_field(args.out, field)
    _summary(args, "exp", {"log": str(args.log)}, {"n": args.n}, {})
    return 0


def _cmd_compose(args):
    result = compose(read_field(args.outer), read_field(args.inner))
    write_field(args.out, result)
    return 0


def _cmd_roots(args):
    args.out_dir.mkdir(parents=True, exist_ok=True)
    chain = root_chain(read_field(args.field), args.n, _solver_cfg(args))
    for n, root in enumerate(chain.roots):
        write_field(args.out_dir / f"root_{n:02d}.mfld", root)
    if args.residual_csv:
        write_csv(
            args.residual_csv,
            ["level", "solver_residual_px"],
            [(n, r) for n, r in enumerate(chain.residuals)],
        )
    _summary(args, "roots", {"field": str(args.field)}, {"n": args.n},
             {"residuals_px": chain.residuals})
    return 0


def _cmd_jacobian(args):
    field = read_field(args.field)
    det = jacobian_determinant(field)
    frac = neg_jacobian_fraction(field)
    if args.out:
        write_field(args.out, det)
    print(f"neg_jacobian_fraction_pct,{frac!r}")
    _summary(args, "jacobian", {"field": str(args.field)}, {},
             {"neg_jacobian_fraction_pct": frac, "det_min": float(det.values.min())})
    return 0


def _cmd_fit_basis(args):
    logs = [read_field(p, as_log=True) for p in args.logs]
    basis = fit_basis(logs, args.dim, symmetrize=not args.no_symmetrize)
    write_basis(args.out, basis)
    ev = explained_variance(basis)
    if args.variance_csv:
        write_csv(args.variance_csv, ["mode", "explained_variance"],
                  [(k + 1, v) for k, v in enumerate(ev)])
    _summary(args, "fit-basis", {"logs": [str(p) for p in args.logs]},
             {"dim": args.dim, "symmetrize": not args.no_symmetrize},
             {"explained_variance": ev})
    return 0


def _cmd_encode(args):
    basis = read_basis(args.basis)
    z = encode(basis, read_field(args.log, as_log=True))
    line = ",".join(repr(float(v)) for v in z)
    print(line)
    if args.out_csv:
        write_csv(args.out_csv, [f"z{k+1}" for k in range(len(z))], [tuple(z)])
    return 0


def _cmd_decode(args):
    basis = read_basis(args.basis)
    z = np.array([float(tok) for tok in args.z.split(",")])
    if args.m is not None:
        write_field(args.out, decode_root(basis, z, args.m))
    else:
        write_field(args.out, decode(basis, z))
    return 0


def _cmd_modes(args):
    basis = read_basis(args.basis)
    write_field(args.out, pca_mode_field(basis, args.mode, args.scale, args.n))
    return 0


def _cmd_losses(args):
    phi_ab = read_field(args.phi_ab)
    phi_ba = read_field(args.phi_ba)
    cfg = _solver_cfg(args)
    rows = []
    metrics = {}
    metrics["icon_loss"] = icon_loss(phi_ab, phi_ba)
    if args.a and args.b:
        a = read_pgm(args.a)
        b = read_pgm(args.b)
        metrics["sim_loss"] = sim_loss(a, b, phi_ab, phi_ba)
    chain_ab = root_chain(phi_ab, args.n, cfg)
    chain_ba = root_chain(phi_ba, args.n, cfg)
    metrics["rec_loss"] = rec_loss(chain_ab, phi_ab, chain_ba, phi_ba)
    metrics["inv_loss"] = inv_loss(chain_ab, chain_ba)
    if args.basis:
        basis = read_basis(args.basis)
        z_ab = encode(basis, log_field(phi_ab, args.n, cfg))
        z_ba = encode(basis, log_field(phi_ba, args.n, cfg))
        metrics["latent_inv_loss"] = latent_inv_loss(z_ab, z_ba)
    rows = [tuple(metrics.values())]
    if args.out_csv:
        write_csv(args.out_csv, list(metrics.keys()), rows)
    for key, value in metrics.items():
        print(f"{key},{value!r}")
    _summary(args, "losses", {"phi_ab": str(args.phi_ab), "phi_ba": str(args.phi_ba)},
             {"n": args.n}, metrics)
    return 0


def _cmd_atlas(args):
    paths = sorted(args.images.glob("*.pgm"))
    if len(paths) < 2:
        raise UsageError(f"need at least 2 PGM images in {args.images}")
    images = [read_pgm(p) for p in paths]
    cfg = AtlasConfig(
        epsilon=args.epsilon,
        max_outer_iterations=args.max_iter,
        reg_config=_reg_cfg(args),
        basis_dim=args.basis_dim,
        root_depth=args.depth,
    )
    atlas, history = estimate_atlas(images, cfg, init_index=args.init, seed=args.seed)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_pgm(args.out_dir / "atlas.pgm", atlas)
    write_pgm(args.out_dir / "pixelwise_mean.pgm", pixelwise_mean_atlas(images))
    final = history[-1]
    write_csv(
        args.out_dir / "delta.csv",
        ["iteration", "delta"],
        [(k + 1, d) for k, d in enumerate(final.delta_history)],
    )
    _summary(args, "atlas", {"images": [str(p) for p in paths]},
             {"epsilon": args.epsilon, "init": args.init, "seed": args.seed},
             {"iterations": final.iteration, "converged": final.converged,
              "delta_history": final.delta_history})
    return 0


def _cmd_warp(args):
    field = read_field(args.field)
    if args.labels:
        out = warp_labels(read_pgm_labels(args.image), field)
    else:
        out = warp_image(read_pgm(args.image), field)
    write_pgm(args.out, out)
    return 0


def _cmd_dice(args):
    per_label, mean = dice_report(read_pgm_labels(args.a), read_pgm_labels(args.b))
    rows = [(lab, score) for lab, score in per_label.items()] + [("mean", mean)]
    if args.out_csv:
        write_csv(args.out_csv, ["label", "dice"], rows)
    for lab, score in rows:
        print(f"{lab},{score!r}")
    return 0


def _cmd_validate(args):
    """Consistency checks on seeded synthetic fields: per-level root-chain
    reconstruction, field negation vs inversion, and latent negation."""
    grid = Grid(args.height, args.width)
    cfg = _solver_cfg(args)
    fields = []
    logs = []
    for i in range(args.count):
        v = random_log_field(
            RandomFieldSpec(grid, seed=args.seed * 10_000 + i, amplitude=args.amplitude)
        )
        phi = exp_field(v, args.n)
        fields.append(phi)
        logs.append(log_field(phi, args.n, cfg))
    basis = fit_basis(logs, min(args.basis_dim, len(logs)), symmetrize=True)

    rows = []
    ident = identity_field(grid)
    for i, phi in enumerate(fields):
        chain = root_chain(phi, args.n, cfg)
        inv = invert(phi, cfg).field
        neg_exp = exp_field(LogField(grid, -logs[i].v), args.n)
        neg_rms = field_rms_diff(neg_exp, inv)
        z = encode(basis, logs[i])
        z_inv = encode(basis, log_field(inv, args.n, cfg))
        latent_neg = float(np.linalg.norm(z + z_inv))
        dec_inv = decode_root(basis, -z, 1, args.n)
        dec_rms = field_rms_diff(dec_inv, inv)
        for n, root in enumerate(chain.roots):
            recon = field_rms_diff(self_compose_m(root, 2 ** (n + 1)), phi)
            rows.append(
                (i, n, recon, neg_rms, latent_neg, dec_rms)
            )
    write_csv(
        args.out_csv,
        [
            "field_index",
            "level",
            "root_reconstruction_rms_px",
            "negation_vs_inverse_rms_px",
            "latent_negation_norm",
            "decoded_negation_vs_inverse_rms_px",
        ],
        rows,
    )
    worst = {
        "max_root_reconstruction_rms_px": max(r[2] for r in rows),
        "max_negation_vs_inverse_rms_px": max(r[3] for r in rows),
        "max_latent_negation_norm": max(r[4] for r in rows),
        "max_decoded_negation_vs_inverse_rms_px": max(r[5] for r in rows),
    }
    _summary(args, "validate", {}, {"seed": args.seed, "count": args.count,
                                    "amplitude": args.amplitude, "n": args.n}, worst)
    for key, value in worst.items():
        print(f"{key},{value!r}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "register": _cmd_register,
    "invert": _cmd_invert,
    "sqrt": _cmd_sqrt,
    "log": _cmd_log,
    "exp": _cmd_exp,
    "compose": _cmd_compose,
    "roots": _cmd_roots,
    "jacobian": _cmd_jacobian,
    "fit-basis": _cmd_fit_basis,
    "encode": _cmd_encode,
    "decode": _cmd_decode,
    "modes": _cmd_modes,
    "losses": _cmd_losses,
    "atlas": _cmd_atlas,
    "warp": _cmd_warp,
    "dice": _cmd_dice,
    "validate": _cmd_validate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except (DomainError, ShapeError, RankError) as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except (FileFormatError, OSError) as err:
        print(f"io error: {err}", file=sys.stderr)
        return 2
    except ConvergenceError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
