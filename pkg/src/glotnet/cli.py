"""Command-line front end: extract, train, synth, eval.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import sys
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dsp, evaluation, features, generate, glottal, model
from .config import ConfigError, ToolkitConfig, apply_overrides

log = logging.getLogger("glotnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
FEATURE_SUFFIX = ".feat"
EXCITATION_SUFFIX = ".exc.wav"


class DataError(RuntimeError):
    pass


class UsageError(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers


def split_of(name: str, valid_ratio: float, test_ratio: float) -> str:
    """Deterministic train/valid/test assignment from a hash of the basename."""
    h = int(hashlib.sha1(name.encode("utf-8")).hexdigest()[:8], 16) / 2**32
    if h < test_ratio:
        return "test"
    if h < test_ratio + valid_ratio:
        return "valid"
    return "train"


def stream_seed(seed: int, name: str) -> int:
    return (int(seed) * 1_000_003 + zlib.crc32(name.encode("utf-8"))) % 2**32


def feature_config(cfg: ToolkitConfig) -> features.FeatureConfig:
    fo = cfg.features
    g = glottal.GlottalConfig(vt_order=fo.vt_order, source_order=fo.source_order, frame_shift=fo.frame_shift,
                              preemphasis=fo.preemphasis, sample_rate=fo.sample_rate)
    return features.FeatureConfig(glottal=g, pitch=features.PitchConfig(f_min=fo.f_min, f_max=fo.f_max))


def corpus_names(cfg: ToolkitConfig, pattern: str = "*.wav") -> list:
    return sorted(p.stem for p in Path(cfg.paths.corpus_dir).glob(pattern))


def feature_file(cfg, name) -> Path:
    return Path(cfg.paths.feature_dir) / f"{name}{FEATURE_SUFFIX}"


def excitation_file(cfg, name) -> Path:
    return Path(cfg.paths.feature_dir) / f"{name}{EXCITATION_SUFFIX}"


def _extract_one(args):
    path, cfg_dict = args
    cfg = ToolkitConfig.from_dict(cfg_dict)
    try:
        x, sr = dsp.read_wav(path)
    except Exception as err:  # unreadable or malformed file
        return path, None, f"unreadable: {err}"
    if sr != cfg.features.sample_rate:
        return path, None, f"sample rate {sr} != {cfg.features.sample_rate}"
    if x.size < cfg.features.frame_shift:
        return path, None, "too short"
    track, gif = features.extract_features(x, feature_config(cfg))
    name = Path(path).stem
    features.save_features(feature_file(cfg, name), track)
    dsp.write_wav(excitation_file(cfg, name), gif.excitation, sr)
    return path, track.n_frames, None


# ---------------------------------------------------------------------------
# commands


def cmd_extract(cfg: ToolkitConfig, pattern: str = "*.wav") -> int:
    files = sorted(Path(cfg.paths.corpus_dir).glob(pattern))
    if not files:
        raise DataError(f"no files match {pattern!r} in {cfg.paths.corpus_dir}")
    Path(cfg.paths.feature_dir).mkdir(parents=True, exist_ok=True)
    jobs = [(str(f), cfg.to_dict()) for f in files]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            results = list(pool.map(_extract_one, jobs))
    else:
        results = [_extract_one(j) for j in jobs]
    done, frames = 0, 0
    for path, n, reason in results:
        if reason:
            log.warning("skipping %s: %s", path, reason)
        else:
            done += 1
            frames += n
    print(f"extracted {done}/{len(files)} utterances, {frames} frames")
    if done == 0:
        raise DataError("no utterance could be processed")
    return EXIT_OK


def _load_dataset(cfg: ToolkitConfig, names, mode: str, mean=None, std=None):
    missing = [n for n in names if not feature_file(cfg, n).exists()
               or (mode == "glotnet" and not excitation_file(cfg, n).exists())]
    if missing:
        raise DataError("missing features for: " + ", ".join(missing))
    tracks = [features.load_features(feature_file(cfg, n)) for n in names]
    if mean is None:
        mean, std = features.normalization_stats(tracks)
    data = []
    for n, tr in zip(names, tracks):
        if mode == "glotnet":
            sig, _ = dsp.read_wav(excitation_file(cfg, n))
        else:
            sig, _ = dsp.read_wav(Path(cfg.paths.corpus_dir) / f"{n}.wav")
        sig = sig[: tr.n_frames * tr.frame_shift]
        cond = features.build_conditioning(tr, cfg.features.context, n_samples=sig.size, mean=mean, std=std)
        data.append(model.Utterance(n, sig, cond))
    return data, (mean, std)


def checkpoint_path(cfg: ToolkitConfig, mode: str) -> Path:
    return Path(cfg.paths.checkpoint_dir) / f"{mode}.ckpt"


def cmd_train(cfg: ToolkitConfig, mode: str, resume: bool = False) -> int:
    names = corpus_names(cfg)
    if not names:
        raise DataError(f"no WAV files in {cfg.paths.corpus_dir}")
    split = {n: split_of(n, cfg.split.valid_ratio, cfg.split.test_ratio) for n in names}
    train_names = [n for n in names if split[n] == "train"]
    valid_names = [n for n in names if split[n] == "valid"]
    if not train_names:
        raise DataError("training split is empty")
    train_set, norm = _load_dataset(cfg, train_names, mode)
    valid_set, _ = _load_dataset(cfg, valid_names, mode, *norm) if valid_names else ([], None)
    domain = "excitation" if mode == "glotnet" else "waveform"
    mcfg = model.WaveNetConfig.from_dict({
        **cfg.model.to_dict(), "target_domain": domain, "seed": cfg.seed,
        "conditioning_dim": train_set[0].conditioning.dim,
    })
    opts = model.TrainOptions(**{**cfg.training.__dict__, "seed": cfg.seed})
    path = checkpoint_path(cfg, mode)
    path.parent.mkdir(parents=True, exist_ok=True)
    previous = None
    if resume and path.exists():
        previous = model.load_checkpoint(path)
        log.info("resuming from %s at epoch %d", path, previous.metadata.get("epoch", 0))
    history = []
    ckpt = model.train(model.build_model(mcfg), train_set, opts, valid_set, norm, previous, path, history)
    m = ckpt.metadata
    first = f"{history[0]:.4f}" if history else "-"
    best = f"{m['best_val']:.4f}" if m.get("best_val") is not None else "-"
    print(f"trained {mode}: epochs={m['epoch']} steps={m['step']} best_epoch={m.get('best_epoch')} "
          f"best_val_nll={best} first_loss={first} final_loss={m.get('train_loss', float('nan')):.4f} -> {path}")
    return EXIT_OK


def cmd_synth(cfg: ToolkitConfig, ckpt_path, names=None, split: str = "test", baseline: bool = False,
              excitation: bool = False, out_dir=None) -> int:
    ckpt_path = Path(ckpt_path)
    if not ckpt_path.exists():
        raise DataError(f"checkpoint {ckpt_path} not found")
    try:
        ckpt = model.load_checkpoint(ckpt_path)
    except (ValueError, OSError, KeyError) as err:
        raise DataError(f"cannot load checkpoint: {err}") from err
    if not names:
        all_names = corpus_names(cfg) or sorted(p.name[: -len(FEATURE_SUFFIX)] for p in Path(cfg.paths.feature_dir).glob("*" + FEATURE_SUFFIX))
        names = [n for n in all_names if split == "all" or split_of(n, cfg.split.valid_ratio, cfg.split.test_ratio) == split]
    if not names:
        raise DataError(f"no utterances selected (split={split})")
    missing = [n for n in names if not feature_file(cfg, n).exists()]
    if missing:
        raise DataError("missing features for: " + ", ".join(missing))
    tracks = [features.load_features(feature_file(cfg, n)) for n in names]
    mean, std = ckpt.norm_mean, ckpt.norm_std
    conds = [features.build_conditioning(t, cfg.features.context, mean=mean, std=std) for t in tracks]
    expected = ckpt.config.conditioning_dim
    if conds[0].dim != expected:
        raise DataError(f"conditioning dimension mismatch: checkpoint expects {expected}, features give "
                        f"{conds[0].dim} ({tracks[0].dim} x {2 * cfg.features.context + 1} with context "
                        f"{cfg.features.context})")
    out_dir = Path(out_dir) if out_dir else Path(cfg.paths.output_dir) / ckpt_path.stem
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = [stream_seed(cfg.seed, n) for n in names]
    stats = {}
    signals = generate.generate_batch(ckpt.model("best"), conds, seeds, stats=stats)
    log.info("generation: %.0f samples/s", stats["samples_per_second"])
    glot = ckpt.config.target_domain == "excitation"
    for n, tr, sig in zip(names, tracks, signals):
        if glot:
            speech = generate.synthesize_glotnet(sig, tr, cfg.features.preemphasis)
            if excitation:
                (out_dir / "excitation").mkdir(exist_ok=True)
                dsp.write_wav(out_dir / "excitation" / f"{n}.wav", sig, tr.sample_rate)
        else:
            speech = sig
        dsp.write_wav(out_dir / f"{n}.wav", speech, tr.sample_rate)
        if baseline:
            (out_dir / "baseline").mkdir(exist_ok=True)
            y = generate.baseline_vocoder(tr, stream_seed(cfg.seed, n), cfg.features.preemphasis)
            dsp.write_wav(out_dir / "baseline" / f"{n}.wav", y, tr.sample_rate)
    print(f"synthesized {len(names)} utterances ({stats['samples']} samples, "
          f"{stats['samples_per_second']:.0f} samples/s) -> {out_dir}")
    return EXIT_OK


def cmd_eval(cfg: ToolkitConfig, ref_dir, syn_dir, out=None) -> int:
    ref_dir, syn_dir = Path(ref_dir), Path(syn_dir)
    refs = {p.stem: p for p in sorted(ref_dir.glob("*.wav"))}
    syns = {p.stem: p for p in sorted(syn_dir.glob("*.wav"))}
    for n in sorted(set(refs) ^ set(syns)):
        log.warning("no matching pair for %s, skipped", n)
    common = sorted(set(refs) & set(syns))
    if not common:
        raise DataError(f"no matching utterances between {ref_dir} and {syn_dir}")
    pitch = feature_config(cfg).pitch
    reports = []
    for n in common:
        x, _ = dsp.read_wav(refs[n])
        y, _ = dsp.read_wav(syns[n])
        ffile = feature_file(cfg, n)
        ref_vuv = features.load_features(ffile).vuv if ffile.exists() else None
        reports.append(evaluation.evaluate_pair(x, y, ref_vuv, name=n, pitch=pitch))
    stem = Path(out) if out else syn_dir / "metrics"
    stem.parent.mkdir(parents=True, exist_ok=True)
    paths = evaluation.write_report(reports, stem)
    sys.stdout.write(evaluation.format_report(reports))
    print(f"report -> {paths['txt']}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def _global_flags(p, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", type=Path, default=d, help="JSON config file")
    p.add_argument("--seed", type=int, default=d, help="overrides the config seed")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", default=d if suppress else [],
                   help="override a config entry, e.g. training.lr=5e-4")
    p.add_argument("--verbose", action="store_true", default=d if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="glotnet", description="Glottal excitation WaveNet vocoder toolkit")
    _global_flags(parser, False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("extract", parents=[common], help="extract features and excitation")
    p.add_argument("--glob", default="*.wav", help="file pattern inside the corpus directory")
    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--mode", choices=("glotnet", "wavenet"), default="glotnet")
    p.add_argument("--resume", action="store_true")
    p = sub.add_parser("synth", parents=[common], help="copy-synthesis from natural features")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--utterances", nargs="*", default=None)
    p.add_argument("--split", choices=("train", "valid", "test", "all"), default="test")
    p.add_argument("--baseline", action="store_true", help="also write the reference vocoder output")
    p.add_argument("--excitation", action="store_true", help="also write generated excitation")
    p.add_argument("--out", default=None)
    p = sub.add_parser("eval", parents=[common], help="objective metrics")
    p.add_argument("--ref", required=True)
    p.add_argument("--syn", required=True)
    p.add_argument("--out", default=None, help="report path stem")
    sub.add_parser("config", parents=[common], help="print the effective configuration")
    return parser


def load_config(args) -> ToolkitConfig:
    cfg = ToolkitConfig.load(args.config) if args.config else ToolkitConfig()
    cfg = apply_overrides(cfg, args.set)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        cfg = load_config(args)
        started = time.perf_counter()
        if args.command == "extract":
            code = cmd_extract(cfg, args.glob)
        elif args.command == "train":
            code = cmd_train(cfg, args.mode, args.resume)
        elif args.command == "synth":
            code = cmd_synth(cfg, args.checkpoint, args.utterances, args.split, args.baseline, args.excitation, args.out)
        elif args.command == "eval":
            code = cmd_eval(cfg, args.ref, args.syn, args.out)
        else:
            sys.stdout.write(cfg.dumps())
            code = EXIT_OK
        log.debug("%s finished in %.1f s", args.command, time.perf_counter() - started)
        return code
    except (ConfigError, UsageError) as err:
        log.error("%s", err)
        return EXIT_USAGE
    except DataError as err:
        log.error("%s", err)
        return EXIT_DATA
    except (model.NumericError, FloatingPointError) as err:
        log.error("numeric failure: %s", err)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
