"""Command-line interface.

Subcommands: simulate, train, reconstruct, eval, corrmap, gradcheck,
flops.  Every run is fully determined by its flags plus input files, and
each output directory gets a manifest.json echoing the resolved run spec.
Exit codes: 0 success, 1 usage/configuration error, 2 data or parse
error, 3 verification failure.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .blocks import ModelConfig, build_model
from .complexity import REFERENCE_TARGETS, audit, variant_table
from .errors import (ConfigError, FormatError, MetricUndefinedError,
                     ShapeError, UsageError)
from .io_format import (load_checkpoint, read_checkpoint, read_cube,
                        read_mask, read_measurement, save_checkpoint,
                        write_csv, write_cube, write_mask, write_measurement)
from .loss import focal_spectrum_loss
from .metrics import band_correlation_map, evaluate, near_diagonal_dominance, psnr
from .optics import (NoiseSpec, SensingOperator, forward_sense, random_mask,
                     shift_back_init, synth_scene)
from .train import history_csv_header, history_csv_rows, train
from .verify import gradcheck_battery

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VERIFY = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(EXIT_USAGE)


def _data_dir(path):
    if path is not None:
        return path
    return os.environ.get("LSST_DATA_DIR", ".")


def _write_manifest(out_dir, command, args):
    spec = {"command": command, "version": __version__}
    for k, v in sorted(vars(args).items()):
        if k == "func":
            continue
        spec[k] = v
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(spec, f, indent=2)


def _model_config(args, bands, step):
    return ModelConfig.from_variant(
        args.config,
        channels=args.channels,
        groups=args.groups,
        bands=bands,
        step=step,
        alpha=args.alpha,
    )


def cmd_simulate(args):
    out = args.out
    os.makedirs(out, exist_ok=True)
    scene = synth_scene(args.height, args.width, args.bands, args.seed,
                        blobs=args.blobs)
    mask = random_mask(args.height, args.width, args.mask_density, args.seed)
    op = SensingOperator(mask, args.step, args.bands)
    noise = NoiseSpec("additive-gaussian", args.noise_sigma, args.seed) \
        if args.noise_sigma > 0 else NoiseSpec()
    y = forward_sense(scene, op, noise)
    write_cube(os.path.join(out, "scene.hsc"), scene)
    write_mask(os.path.join(out, "mask.hsc"), mask)
    write_measurement(os.path.join(out, "meas.hsc"), y)
    _write_manifest(out, "simulate", args)
    print(f"wrote scene {scene.shape}, mask {mask.shape}, "
          f"measurement {y.shape} to {out}")
    return EXIT_OK


def cmd_train(args):
    data = _data_dir(args.data_dir)
    scene = read_cube(os.path.join(data, "scene.hsc"))
    mask = read_mask(os.path.join(data, "mask.hsc"))
    bands = scene.shape[2]
    cfg = _model_config(args, bands, args.step)
    op = SensingOperator(mask, cfg.step, cfg.bands)

    out = args.out
    os.makedirs(out, exist_ok=True)
    model = build_model(cfg, args.seed)
    start_step = 0
    if args.resume:
        load_checkpoint(args.resume, model.store, cfg)
        start_step = args.resume_step

    scenes = [scene]
    extra_seeds = np.random.SeedSequence(args.seed).spawn(args.batch)
    for s in extra_seeds[1:]:
        scenes.append(synth_scene(scene.shape[0], scene.shape[1], bands,
                                  seed=s))

    history, _ = train(model, op, scenes, args.steps, lr=args.lr,
                       loss_kind=args.loss, alpha=cfg.alpha,
                       threads=args.threads, start_step=start_step)
    ckpt = os.path.join(out, "checkpoint.lsst")
    save_checkpoint(ckpt, model.store, cfg)
    write_csv(os.path.join(out, "loss_curve.csv"),
              history_csv_header(bands), history_csv_rows(history))
    _write_manifest(out, "train", args)
    first, last = history[0]["loss"], history[-1]["loss"]
    print(f"trained {args.steps} steps: loss {first:.6f} -> {last:.6f}; "
          f"checkpoint at {ckpt}")
    return EXIT_OK


def cmd_reconstruct(args):
    y = read_measurement(args.measurement)
    mask = read_mask(args.mask)
    cfg, arrays = read_checkpoint(args.checkpoint)
    model = build_model(cfg, 0)
    model.store.load_state(arrays)
    op = SensingOperator(mask, cfg.step, cfg.bands)
    recon = model.reconstruct(y, op)
    out = args.out
    os.makedirs(out, exist_ok=True)
    write_cube(os.path.join(out, "recon.hsc"), recon)
    print(f"reconstructed cube {recon.shape} -> {out}/recon.hsc")
    if args.truth:
        truth = read_cube(args.truth)
        report = evaluate(recon, truth)
        baseline, _ = psnr(shift_back_init(y, op), truth)
        payload = report.to_dict()
        payload["shift_back_psnr_db"] = baseline
        with open(os.path.join(out, "metrics.json"), "w") as f:
            json.dump(payload, f, indent=2)
        print(f"psnr {report.psnr:.2f} dB (shift-back baseline "
              f"{baseline:.2f} dB), ssim {report.ssim:.4f}, "
              f"sam {report.sam:.2f} deg")
    _write_manifest(out, "reconstruct", args)
    return EXIT_OK


def cmd_eval(args):
    recon = read_cube(args.recon)
    truth = read_cube(args.truth)
    report = evaluate(recon, truth)
    _, fsl_report = focal_spectrum_loss(recon, truth, args.alpha)
    payload = report.to_dict()
    payload["focal_spectrum_loss"] = fsl_report.total
    print(json.dumps(payload, indent=2))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "metrics.json"), "w") as f:
            json.dump(payload, f, indent=2)
        write_csv(os.path.join(args.out, "band_loss.csv"),
                  ["band", "rmse", "weight"], fsl_report.csv_rows())
        _write_manifest(args.out, "eval", args)
    return EXIT_OK


def cmd_corrmap(args):
    cube = read_cube(args.cube)
    corr = band_correlation_map(cube)
    stat = near_diagonal_dominance(corr)
    print(f"near-diagonal dominance: {stat:.4f} "
          f"(adjacent minus far-pair mean correlation)")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        rows = [[k] + [f"{v:.8f}" for v in corr[k]]
                for k in range(corr.shape[0])]
        write_csv(os.path.join(args.out, "corrmap.csv"),
                  ["band"] + [f"b{j}" for j in range(corr.shape[1])], rows)
        _write_manifest(args.out, "corrmap", args)
    return EXIT_OK


def cmd_gradcheck(args):
    rows = gradcheck_battery(args.scope, args.seed)
    failed = 0
    for name, err, tol in rows:
        ok = err < tol
        failed += 0 if ok else 1
        print(f"{'PASS' if ok else 'FAIL'}  {name:<36} "
              f"max_rel_err={err:.3e}  tol={tol:.0e}")
    print(f"{len(rows) - failed}/{len(rows)} gradient checks passed")
    return EXIT_OK if failed == 0 else EXIT_VERIFY


def cmd_flops(args):
    cfg = _model_config(args, args.bands, args.step)
    checks = audit(cfg, args.audit_size, args.audit_size, seed=args.seed)
    exact = all(checks[k] for k in
                ("params_match", "conv_match", "attention_core_match",
                 "attention_proj_match"))
    print(f"exact-count audit at {args.audit_size}x{args.audit_size}: "
          f"params {checks['params_analytic']} "
          f"(enumerated {checks['params_enumerated']}), attention-core MACs "
          f"{checks['attention_core_analytic']} "
          f"(instrumented {checks['attention_core_instrumented']}) -> "
          f"{'OK' if exact else 'MISMATCH'}")
    print(f"ss-msa vs s-msa cost ratio: 1/{args.groups} "
          f"(group width {args.channels // args.groups} of "
          f"{args.channels} channels)")
    print()
    print(f"{'variant':<8} {'params':>12} {'MACs':>16} {'2xMAC FLOPs':>16} "
          f"{'ref params':>12} {'ref MACs':>16} {'ratios':>12}")
    for row in variant_table(args.channels, args.groups, args.bands,
                             args.step, args.height, args.width):
        print(f"{row['variant']:<8} {row['params']:>12,} {row['macs']:>16,} "
              f"{row['flops_2x']:>16,} {row['ref_params']:>12,.0f} "
              f"{row['ref_macs']:>16,.0f} "
              f"{row['params_ratio']:>6.2f}/{row['macs_ratio']:.2f}")
    print()
    print("reference columns are published totals for the standard "
          "256x256x28 setting; their FLOPs convention counts one "
          "multiply-add per FLOP, so compare them against the MACs column.")
    return EXIT_OK if exact else EXIT_VERIFY


def build_parser():
    p = _Parser(prog="lsst", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="synthesize scene/mask/measurement")
    sim.add_argument("--height", type=int, default=32)
    sim.add_argument("--width", type=int, default=32)
    sim.add_argument("--bands", type=int, default=8)
    sim.add_argument("--step", type=int, default=2)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--blobs", type=int, default=6)
    sim.add_argument("--mask-density", type=float, default=0.5)
    sim.add_argument("--noise-sigma", type=float, default=0.0)
    sim.add_argument("--out", default="data")
    sim.set_defaults(func=cmd_simulate)

    tr = sub.add_parser("train", help="train on a simulated data directory")
    tr.add_argument("data_dir", nargs="?", default=None,
                    help="directory with scene.hsc/mask.hsc "
                         "(default: $LSST_DATA_DIR or .)")
    tr.add_argument("--config", choices=sorted(REFERENCE_TARGETS),
                    default="S")
    tr.add_argument("--channels", type=int, default=8)
    tr.add_argument("--groups", type=int, default=4)
    tr.add_argument("--step", type=int, default=2)
    tr.add_argument("--alpha", type=float, default=0.5)
    tr.add_argument("--loss", choices=("fsl", "rmse"), default="fsl")
    tr.add_argument("--steps", type=int, default=200)
    tr.add_argument("--lr", type=float, default=4e-4)
    tr.add_argument("--batch", type=int, default=1)
    tr.add_argument("--threads", type=int, default=1)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--resume", default=None,
                    help="checkpoint to continue from")
    tr.add_argument("--resume-step", type=int, default=0,
                    help="step number the resumed checkpoint was written at")
    tr.add_argument("--out", default="run")
    tr.set_defaults(func=cmd_train)

    rc = sub.add_parser("reconstruct", help="reconstruct a measurement")
    rc.add_argument("measurement")
    rc.add_argument("mask")
    rc.add_argument("checkpoint")
    rc.add_argument("--truth", default=None)
    rc.add_argument("--out", default="recon")
    rc.set_defaults(func=cmd_reconstruct)

    ev = sub.add_parser("eval", help="metrics of a reconstruction vs truth")
    ev.add_argument("recon")
    ev.add_argument("truth")
    ev.add_argument("--alpha", type=float, default=0.5)
    ev.add_argument("--out", default=None)
    ev.set_defaults(func=cmd_eval)

    cm = sub.add_parser("corrmap", help="pairwise band correlation map")
    cm.add_argument("cube")
    cm.add_argument("--out", default=None)
    cm.set_defaults(func=cmd_corrmap)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    gc.add_argument("--scope", choices=("layer", "block", "model", "all"),
                    default="all")
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=cmd_gradcheck)

    fl = sub.add_parser("flops", help="parameter/MAC audit and variant table")
    fl.add_argument("--config", choices=sorted(REFERENCE_TARGETS),
                    default="S")
    fl.add_argument("--channels", type=int, default=28)
    fl.add_argument("--groups", type=int, default=4)
    fl.add_argument("--bands", type=int, default=28)
    fl.add_argument("--step", type=int, default=2)
    fl.add_argument("--height", type=int, default=256)
    fl.add_argument("--width", type=int, default=256)
    fl.add_argument("--audit-size", type=int, default=32)
    fl.add_argument("--alpha", type=float, default=0.5)
    fl.add_argument("--seed", type=int, default=0)
    fl.set_defaults(func=cmd_flops)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ShapeError, MetricUndefinedError, FileNotFoundError,
            IsADirectoryError, NotADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
