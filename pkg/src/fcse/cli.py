"""
Command-line interface: ``fcse <command> [options]``.

Exit status is 0 on success, 1 on usage errors and 2 on data or numeric
errors. Every file output is written atomically.
"""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import AudioClip, atomic_write_bytes, read_wav, resample_to, write_wav
from .dsp import FramingConfig, compute_norm_stats, mix_at_snr
from .errors import FcseError, InputError, SpecError
from .metrics import METRICS, metric_rows_csv
from .nn import ModelSpec, build_model, kernel_len_from_ms, stack_spec
from .pipeline import (
    Checkpoint,
    denoise,
    evaluate_enhancement,
    load_checkpoint,
    load_clips,
    load_manifest,
    prepare_pairs,
    prepare_pairs_from_clips,
    save_checkpoint,
)
from .train import TrainConfig, finetune, train

log = logging.getLogger("fcse")

SWEEP_MAX_EPOCHS = 30
SWEEP_PATIENCE = 5
SWEEP_HEADER = (
    "arch_id", "depth", "filters", "kernel_ms", "activation",
    "param_count", "train_mse", "val_mse", "best_epoch", "status",
)
MATRIX_HEADER = (
    "train_snr_db", "test_snr_db", "snr_in_db", "snr_out_db", "snr_gain_db",
    "si_sdr_in_db", "si_sdr_out_db",
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --- architecture and grid files -------------------------------------------

def parse_arch(text: str, frame_len: int = 320, sample_rate_hz: int = 16000) -> ModelSpec:
    """Parse ``conv <filters> <kernel_ms> [prelu|relu]`` lines ending in ``output <kernel_ms>``."""
    hidden: list[tuple[int, int]] = []
    activations: set[str] = set()
    output_kernel = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].split()
        if not line:
            continue
        if output_kernel is not None:
            raise SpecError(f"arch line {lineno}: nothing may follow the output layer")
        try:
            if line[0] == "conv" and len(line) in (3, 4):
                activations.add(line[3] if len(line) == 4 else "prelu")
                hidden.append((int(line[1]), kernel_len_from_ms(float(line[2]), sample_rate_hz)))
            elif line[0] == "output" and len(line) == 2:
                output_kernel = kernel_len_from_ms(float(line[1]), sample_rate_hz)
            else:
                raise SpecError(f"arch line {lineno}: cannot parse {raw.strip()!r}")
        except ValueError as exc:
            raise SpecError(f"arch line {lineno}: {exc}") from exc
    if output_kernel is None:
        raise SpecError("arch file must end with an 'output <kernel_ms>' line")
    if len(activations) > 1:
        raise SpecError("mixing activations across layers is not supported")
    return stack_spec(frame_len, hidden, output_kernel, activations.pop() if activations else "prelu")


def format_arch(depth: int, filters: int, kernel_ms: float, activation: str) -> str:
    lines = [f"conv {filters} {kernel_ms:g} {activation}" for _ in range(depth)]
    return "\n".join(lines + [f"output {kernel_ms:g}"]) + "\n"


@dataclass(frozen=True)
class GridCell:
    depth: int
    filters: int
    kernel_ms: float
    activation: str

    @property
    def arch_id(self) -> str:
        return f"d{self.depth}-f{self.filters}-k{self.kernel_ms:g}-{self.activation}"

    def spec(self, frame_len: int = 320, sample_rate_hz: int = 16000) -> ModelSpec:
        k = kernel_len_from_ms(self.kernel_ms, sample_rate_hz)
        return stack_spec(frame_len, [(self.filters, k)] * self.depth, k, self.activation)


def parse_grid(text: str) -> list[GridCell]:
    """Each line is ``depths filters kernel_ms activations``; fields may be comma lists."""
    cells: list[GridCell] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        fields = raw.split("#", 1)[0].split()
        if not fields:
            continue
        if len(fields) != 4:
            raise SpecError(f"grid line {lineno}: expected 'depth filters kernel_ms activation'")
        try:
            depths = [int(v) for v in fields[0].split(",")]
            filters = [int(v) for v in fields[1].split(",")]
            kernels = [float(v) for v in fields[2].split(",")]
        except ValueError as exc:
            raise SpecError(f"grid line {lineno}: {exc}") from exc
        acts = fields[3].split(",")
        for d, f, k, a in itertools.product(depths, filters, kernels, acts):
            cells.append(GridCell(d, f, k, a))
    return cells


# --- helpers -----------------------------------------------------------------

def _csv_text(header, rows, preamble: str = "") -> str:
    buf = io.StringIO()
    buf.write(preamble)
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _fmt(value) -> str:
    if isinstance(value, float):
        if math.isinf(value):
            return "+inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def _train_config(args, max_epochs=None, patience=None) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch,
        max_epochs=args.max_epochs if max_epochs is None else max_epochs,
        patience=args.patience if patience is None else patience,
        shuffle_seed=args.seed,
    )


def _frames(batch):
    return batch.frames.astype(np.float32)


# --- commands ----------------------------------------------------------------

def cmd_mix(args) -> int:
    clean = read_wav(args.clean)
    noise = resample_to(read_wav(args.noise), clean.sample_rate_hz)
    mixture, scale = mix_at_snr(clean, noise, args.snr_db, seed=args.seed)
    peak = float(np.max(np.abs(mixture.samples)))
    if peak > 1.0:
        log.warning("mixture peaks at %.3f and will clip on write", peak)
    write_wav(mixture, args.out)
    print(f"noise_scale={scale:.10g}")
    return 0


def cmd_train(args) -> int:
    cfg = FramingConfig.from_ms(args.frame_ms, args.rate)
    spec = parse_arch(Path(args.arch).read_text(), cfg.frame_len, cfg.sample_rate_hz)
    train_m = load_manifest(args.train_manifest)
    val_m = load_manifest(args.val_manifest)
    clean, noise = load_clips(train_m, cfg.sample_rate_hz)
    stats = compute_norm_stats(clean)
    tn, tc = prepare_pairs_from_clips(clean, noise, train_m.snr_db, cfg, stats, train_m.noise_seed)
    vn, vc = prepare_pairs(val_m, cfg, stats)
    model = build_model(spec, seed=args.seed)
    print(f"model: {len(spec.layers)} layers, {model.param_count():,} parameters")
    print(f"data: {len(tn)} training frames, {len(vn)} validation frames")

    log_buf = io.StringIO()
    model, report = train(
        model, (_frames(tn), _frames(tc)), (_frames(vn), _frames(vc)),
        _train_config(args), log_stream=log_buf,
    )
    save_checkpoint(model, stats, cfg, args.out, snr_db=train_m.snr_db, seed=args.seed)
    log_path = args.log or f"{args.out}.log.csv"
    atomic_write_bytes(log_path, log_buf.getvalue().encode())
    if report.epochs_run:
        print(f"best epoch {report.best_epoch}: val_mse={report.best_val_mse:.6g} "
              f"(initial {report.initial_val_mse:.6g}); stopped by {report.stop_reason}")
    return 0


def cmd_finetune(args) -> int:
    ckpt = load_checkpoint(args.model)
    manifest = load_manifest(args.manifest)
    noisy, clean = prepare_pairs(manifest, ckpt.framing, ckpt.stats)
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch, shuffle_seed=args.seed)
    model = finetune(ckpt.model, (_frames(noisy), _frames(clean)), args.epochs, cfg)
    save_checkpoint(model, ckpt.stats, ckpt.framing, args.out, snr_db=ckpt.snr_db, seed=ckpt.seed)
    print(f"fine-tuned {args.epochs} epochs on {len(noisy)} frames")
    return 0


def cmd_denoise(args) -> int:
    ckpt = load_checkpoint(args.model)
    noisy = resample_to(read_wav(args.input), ckpt.framing.sample_rate_hz)
    out = denoise(ckpt, noisy)
    write_wav(out, args.out)
    print(f"wrote {len(out)} samples ({out.duration_s:.3f} s); "
          f"{ckpt.framing.hop} samples trimmed from each end")
    return 0


def _align(ref: AudioClip, est: AudioClip) -> np.ndarray:
    diff = len(ref) - len(est)
    if diff < 0 or diff % 2:
        raise InputError(
            f"cannot align reference ({len(ref)} samples) with estimate ({len(est)} samples)"
        )
    offset = diff // 2
    return ref.samples[offset:offset + len(est)]


def cmd_eval(args) -> int:
    ref = read_wav(args.ref)
    est = read_wav(args.deg)
    if ref.sample_rate_hz != est.sample_rate_hz:
        raise InputError("reference and estimate sample rates differ")
    names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = [m for m in names if m not in METRICS]
    if unknown:
        raise UsageError(f"unknown metrics {unknown}; choose from {sorted(METRICS)}")
    ref_samples = _align(ref, est)
    rows = []
    for name in names:
        fn = METRICS[name]
        if name == "segmental_snr_db":
            value = fn(ref_samples, est.samples, FramingConfig.from_ms(20, ref.sample_rate_hz))
        else:
            value = fn(ref_samples, est.samples)
        rows.append((name, value, args.ref, args.deg))
    sys.stdout.write(metric_rows_csv(rows))
    return 0


def _parse_snrs(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad SNR list {text!r}") from exc


def cmd_eval_matrix(args) -> int:
    """Train at each training SNR and test each model at every test SNR."""
    cfg = FramingConfig.from_ms(args.frame_ms, args.rate)
    spec = parse_arch(Path(args.arch).read_text(), cfg.frame_len, cfg.sample_rate_hz)
    train_m = load_manifest(args.train_manifest)
    val_m = load_manifest(args.val_manifest)
    test_m = load_manifest(args.test_manifest)
    tr_clean, tr_noise = load_clips(train_m, cfg.sample_rate_hz)
    va_clean, va_noise = load_clips(val_m, cfg.sample_rate_hz)
    te_clean, te_noise = load_clips(test_m, cfg.sample_rate_hz)
    stats = compute_norm_stats(tr_clean)
    rows = []
    for train_snr in _parse_snrs(args.train_snrs):
        tn, tc = prepare_pairs_from_clips(tr_clean, tr_noise, train_snr, cfg, stats, train_m.noise_seed)
        vn, vc = prepare_pairs_from_clips(va_clean, va_noise, train_snr, cfg, stats, val_m.noise_seed)
        model, report = train(
            build_model(spec, seed=args.seed),
            (_frames(tn), _frames(tc)), (_frames(vn), _frames(vc)), _train_config(args),
        )
        print(f"trained at {train_snr:g} dB: best val_mse {report.best_val_mse:.6g}", file=sys.stderr)
        ckpt = Checkpoint(model, stats, cfg, train_snr, args.seed)
        for test_snr in _parse_snrs(args.test_snrs):
            res = evaluate_enhancement(ckpt, te_clean, te_noise, test_snr, test_m.noise_seed)
            rows.append([_fmt(train_snr), _fmt(test_snr)] + [_fmt(res[k]) for k in MATRIX_HEADER[2:]])
    text = _csv_text(MATRIX_HEADER, rows)
    atomic_write_bytes(args.out_csv, text.encode())
    sys.stdout.write(text)
    return 0


def run_sweep(cells, train_pairs, val_pairs, cfg: FramingConfig, tcfg: TrainConfig, seed: int):
    """Train every grid cell under one budget; a failing cell yields a 'failed' row."""
    rows = []
    for cell in cells:
        row = [cell.arch_id, cell.depth, cell.filters, f"{cell.kernel_ms:g}", cell.activation]
        try:
            spec = cell.spec(cfg.frame_len, cfg.sample_rate_hz)
            row.append(spec.param_count())
            model, report = train(build_model(spec, seed=seed), train_pairs, val_pairs, tcfg)
            row += [repr(report.train_mse[report.best_epoch]) if report.epochs_run else "",
                    repr(report.best_val_mse) if report.epochs_run else "",
                    report.best_epoch, "ok"]
        except (FcseError, ValueError, FloatingPointError) as exc:
            log.warning("sweep cell %s failed: %s", cell.arch_id, exc)
            row = row[:6] + [""] * (6 - len(row[:6]))
            row += ["", "", "", f"failed: {exc}"]
        rows.append(row)
    return rows


def cmd_sweep(args) -> int:
    cfg = FramingConfig.from_ms(args.frame_ms, args.rate)
    cells = parse_grid(Path(args.grid).read_text())
    tcfg = _train_config(args)
    preamble = (f"# budget: max_epochs={tcfg.max_epochs} patience={tcfg.patience} "
                f"lr={tcfg.learning_rate:g} batch={tcfg.batch_size} seed={args.seed}\n")
    rows = []
    if cells:
        train_m = load_manifest(args.train_manifest)
        val_m = load_manifest(args.val_manifest)
        clean, noise = load_clips(train_m, cfg.sample_rate_hz)
        stats = compute_norm_stats(clean)
        tn, tc = prepare_pairs_from_clips(clean, noise, train_m.snr_db, cfg, stats, train_m.noise_seed)
        vn, vc = prepare_pairs(val_m, cfg, stats)
        rows = run_sweep(cells, (_frames(tn), _frames(tc)), (_frames(vn), _frames(vc)), cfg, tcfg, args.seed)
    text = _csv_text(SWEEP_HEADER, rows, preamble)
    atomic_write_bytes(args.out_csv, text.encode())
    sys.stdout.write(text)
    return 0


# --- argument parsing --------------------------------------------------------

def _add_training_flags(p, max_epochs=1000, patience=20):
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--max-epochs", type=int, default=max_epochs)
    p.add_argument("--patience", type=int, default=patience)
    p.add_argument("--seed", type=int, default=0)


def _add_framing_flags(p):
    p.add_argument("--frame-ms", type=float, default=20.0)
    p.add_argument("--rate", type=int, default=16000, help="working sample rate in Hz")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fcse", description="Fully convolutional waveform speech enhancement")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("mix", help="mix clean speech and noise at a target SNR")
    p.add_argument("--clean", required=True)
    p.add_argument("--noise", required=True)
    p.add_argument("--snr-db", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="random noise offset (default: start)")
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("train", help="train a model with early stopping")
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--val-manifest", required=True)
    p.add_argument("--arch", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None, help="CSV training log (default: <out>.log.csv)")
    _add_training_flags(p)
    _add_framing_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="fine-tune a trained model on a new speaker")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("denoise", help="enhance a WAV file with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("eval", help="score an estimate against a reference")
    p.add_argument("--ref", required=True)
    p.add_argument("--deg", required=True)
    p.add_argument("--metrics", default="snr_db,si_sdr_db,segmental_snr_db,mse")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("eval-matrix", help="cross-SNR train/test evaluation")
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--val-manifest", required=True)
    p.add_argument("--test-manifest", required=True)
    p.add_argument("--arch", required=True)
    p.add_argument("--train-snrs", default="5,0,-5")
    p.add_argument("--test-snrs", default="5,0,-5")
    p.add_argument("--out-csv", required=True)
    _add_training_flags(p)
    _add_framing_flags(p)
    p.set_defaults(func=cmd_eval_matrix)

    p = sub.add_parser("sweep", help="train a grid of architectures under a shared budget")
    p.add_argument("--grid", required=True)
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--val-manifest", required=True)
    p.add_argument("--out-csv", required=True)
    _add_training_flags(p, SWEEP_MAX_EPOCHS, SWEEP_PATIENCE)
    _add_framing_flags(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"fcse {args.command}: {exc}", file=sys.stderr)
        return 1
    except (FcseError, OSError, ValueError, FloatingPointError) as exc:
        print(f"fcse {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
