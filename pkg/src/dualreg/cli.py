"""Command-line interface.

Every subcommand exits 0 on success. Failures print one line
``error: <code>: <detail>`` on stderr and exit with status 1 (2 for usage).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .losses import format_report, ssim_index, translation_score
from .metrics import dice, psnr, tre, warp_mask
from .phantom import generate
from .registration import MODES, RegistrationError, register_mode
from .translator import GammaRemapTranslator, IdentityTranslator
from .volume import BinaryMask, DisplacementField, Volume3, normalize_intensity, warp

log = logging.getLogger("dualreg")


class CliError(Exception):
    def __init__(self, code: str, detail: str):
        super().__init__(detail)
        self.code = code
        self.detail = detail


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def _read(path, kind=None):
    path = Path(path)
    if not path.is_file():
        raise CliError("io", f"no such file: {path}")
    obj = io.read_volume(path)
    if kind is not None and not isinstance(obj, kind):
        names = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
        raise CliError("input", f"{path}: expected {names}, got {type(obj).__name__}")
    return obj


def _config(path):
    if path is None:
        return {}
    path = Path(path)
    if not path.is_file():
        raise CliError("io", f"no such file: {path}")
    return io.load_config(path)


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- commands

def cmd_phantom(args):
    spec = io.phantom_spec(_config(args.spec))
    case = generate(spec)
    out = _outdir(args.out)
    io.write_volume(out / "fixed.mha", case.fixed)
    io.write_volume(out / "moving.mha", case.moving)
    io.write_volume(out / "gt_field.mha", case.gt_field)
    for organ in case.masks_fixed:
        io.write_volume(out / f"mask_{organ}_fixed.mha", case.masks_fixed[organ])
        io.write_volume(out / f"mask_{organ}_moving.mha", case.masks_moving[organ])
    io.write_landmarks(out / "landmarks_fixed.csv", case.landmarks_fixed)
    io.write_landmarks(out / "landmarks_moving.csv", case.landmarks_moving)
    (out / "spec.cfg").write_text(io.format_phantom_spec(spec))


def cmd_register(args):
    cfg_text = _config(args.config)
    cfg = io.registration_config(cfg_text)
    translator = io.translator_from(cfg_text)
    moving = _read(args.moving, Volume3)
    fixed = _read(args.fixed, Volume3)
    translated = _read(args.translated, Volume3) if args.translated else None
    res = register_mode(moving, fixed, translator, cfg, args.mode, translated)
    out = _outdir(args.out)
    io.write_volume(out / "phi_o.mha", res.phi_o)
    io.write_volume(out / "phi_s.mha", res.phi_s)
    io.write_volume(out / "phi_os.mha", res.phi_os)
    io.write_volume(out / "moved.mha", res.moved)
    (out / "loss_trace.txt").write_text("".join(line + "\n" for line in res.trace_lines()))
    (out / "fusion_kernel.txt").write_text(io.format_kernel(res.kernel))
    print(f"initial_loss = {float(res.initial_loss)!r}")
    print(f"final_loss = {float(res.final_loss)!r}")


def cmd_warp(args):
    vol = _read(args.input, (Volume3, BinaryMask))
    field = _read(args.field, DisplacementField)
    if args.mask or isinstance(vol, BinaryMask):
        if isinstance(vol, Volume3):
            vol = BinaryMask(vol.data >= 0.5, vol.spacing)
        result = warp_mask(vol, field)
    else:
        result = warp(vol, field)
    io.write_volume(args.out, result)


def cmd_metrics(args):
    name, inputs = args.metric, args.inputs
    expected = {"dice": 2, "psnr": 2, "ssim": 2, "tre": 3}[name]
    if len(inputs) != expected:
        raise CliError("usage", f"metrics {name} takes {expected} inputs, got {len(inputs)}")
    if name == "dice":
        value = dice(_read(inputs[0], BinaryMask), _read(inputs[1], BinaryMask))
    elif name == "psnr":
        value = psnr(_read(inputs[0], Volume3), _read(inputs[1], Volume3), args.peak)
    elif name == "ssim":
        a, b = _read(inputs[0], Volume3), _read(inputs[1], Volume3)
        if a.dims != b.dims:
            raise CliError("input", f"dimension mismatch {a.dims} vs {b.dims}")
        value = ssim_index(a, b)
    else:
        for p in inputs[:2]:
            if not Path(p).is_file():
                raise CliError("io", f"no such file: {p}")
        moving_lm = io.read_landmarks(inputs[0])
        fixed_lm = io.read_landmarks(inputs[1])
        value = tre(moving_lm, fixed_lm, _read(inputs[2], DisplacementField))
    print(f"{name} = {float(value)!r}")


def _volumes_in(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise CliError("io", f"no such directory: {directory}")
    vols = [normalize_intensity(_read(p, Volume3)) for p in sorted(directory.glob("*.mha"))]
    if not vols:
        raise CliError("input", f"no .mha volumes in {directory}")
    return vols


def cmd_translate_score(args):
    cfg = _config(args.config)
    fwd = io.translator_from(cfg, "translator")
    if "backward" in cfg:
        bwd = io.translator_from(cfg, "backward")
    elif isinstance(fwd, IdentityTranslator):
        bwd = IdentityTranslator()
    elif isinstance(fwd, GammaRemapTranslator) and fwd.table is None:
        bwd = GammaRemapTranslator(1.0 / fwd.gamma)
    else:
        raise CliError("config", "backward.* keys are required unless the forward translator is identity or a plain gamma")
    report = translation_score(fwd, bwd, _volumes_in(args.ct), _volumes_in(args.mr),
                               io.translation_weights(cfg), io.mind_params(cfg))
    sys.stdout.write(format_report(report))


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dualreg", description="Dual-stream multimodal deformable registration")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom", help="generate a synthetic phantom case")
    p.add_argument("--spec", help="phantom config (phantom.* keys); defaults when omitted")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("register", help="register a moving volume to a fixed volume")
    p.add_argument("--moving", required=True)
    p.add_argument("--fixed", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--translated", help="precomputed translated moving volume")
    p.add_argument("--mode", choices=MODES, default="dual")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("warp", help="warp a volume or mask with a displacement field")
    p.add_argument("--input", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mask", action="store_true", help="treat the input as a mask (threshold 0.5)")
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("metrics", help="dice A B | tre MOVING.csv FIXED.csv FIELD | psnr A B | ssim A B")
    p.add_argument("metric", choices=("dice", "tre", "psnr", "ssim"))
    p.add_argument("inputs", nargs="+")
    p.add_argument("--peak", type=float, default=1.0)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("translate-score", help="score a translator pair on CT and MR volumes")
    p.add_argument("--config")
    p.add_argument("--ct", required=True)
    p.add_argument("--mr", required=True)
    p.set_defaults(func=cmd_translate_score)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
        args.func(args)
    except CliError as exc:
        print(f"error: {exc.code}: {exc.detail}", file=sys.stderr)
        return 2 if exc.code == "usage" else 1
    except io.ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 1
    except io.FormatError as exc:
        print(f"error: format: {exc}", file=sys.stderr)
        return 1
    except RegistrationError as exc:
        print(f"error: numerical: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: input: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
