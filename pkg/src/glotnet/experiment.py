"""Desk-scale copy-synthesis comparison: GlotNet vs WaveNet on one speaker.

Both models see identical conditioning and training options; only the
target differs (glottal excitation vs speech waveform). After training,
every training utterance is regenerated from its natural features and
scored against the original.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import corpus, evaluation, features, generate, model

log = logging.getLogger(__name__)


@dataclass
class OverfitConfig:
    n_utterances: int = 60
    duration: float = 2.0  # seconds; 60 x 2 s = 2 minutes
    corpus_seed: int = 0
    context: int = 4
    seed: int = 0
    model: dict = field(default_factory=dict)  # tiny_config overrides
    train: model.TrainOptions = field(
        default_factory=lambda: model.TrainOptions(epochs=10_000, lr=3e-3, segment_length=2000, batch_size=8,
                                                   ema_decay=0.995, time_limit=1200.0, log_every=25)
    )


@dataclass
class PreparedCorpus:
    names: list
    audio: list
    tracks: list
    excitation: list
    conditioning: list
    norm: tuple


def prepare(cfg: OverfitConfig) -> PreparedCorpus:
    data = corpus.make_corpus(cfg.n_utterances, cfg.duration, cfg.corpus_seed)
    names, audio, tracks, exc = [], [], [], []
    for name, x in data:
        tr, gif = features.extract_features(x)
        names.append(name)
        audio.append(x)
        tracks.append(tr)
        exc.append(gif.excitation)
    mean, std = features.normalization_stats(tracks)
    cond = [features.build_conditioning(t, cfg.context, n_samples=x.size, mean=mean, std=std)
            for t, x in zip(tracks, audio)]
    return PreparedCorpus(names, audio, tracks, exc, cond, (mean, std))


def train_one(prep: PreparedCorpus, cfg: OverfitConfig, domain: str, history=None):
    mcfg = model.tiny_config(
        conditioning_dim=prep.conditioning[0].dim, target_domain=domain, seed=cfg.seed, **cfg.model
    )
    targets = prep.excitation if domain == "excitation" else prep.audio
    data = [model.Utterance(n, s, c) for n, s, c in zip(prep.names, targets, prep.conditioning)]
    opts = model.TrainOptions(**{**cfg.train.__dict__, "seed": cfg.seed})
    return model.train(model.build_model(mcfg), data, opts, norm=prep.norm, history=history)


def white_noise_like(x, rng) -> np.ndarray:
    return rng.standard_normal(x.size) * np.sqrt(np.mean(np.square(x)))


def run(cfg: OverfitConfig | None = None) -> dict:
    cfg = cfg or OverfitConfig()
    t0 = time.perf_counter()
    prep = prepare(cfg)
    log.info("prepared %d utterances in %.0f s", len(prep.names), time.perf_counter() - t0)
    seeds = [cfg.seed + i for i in range(len(prep.names))]
    results = {"train_seconds": {}, "final_loss": {}, "steps": {}, "gen_rate": {}}
    speech = {}
    for domain, label in (("excitation", "glotnet"), ("waveform", "wavenet")):
        t1 = time.perf_counter()
        ckpt = train_one(prep, cfg, domain)
        results["train_seconds"][label] = time.perf_counter() - t1
        results["final_loss"][label] = ckpt.metadata.get("train_loss")
        results["steps"][label] = ckpt.metadata.get("step")
        stats = {}
        out = generate.generate_batch(ckpt.model("best"), prep.conditioning, seeds, stats=stats)
        results["gen_rate"][label] = stats["samples_per_second"]
        if domain == "excitation":
            out = [generate.synthesize_glotnet(e, tr) for e, tr in zip(out, prep.tracks)]
        speech[label] = out
    rng = np.random.default_rng(cfg.seed)
    speech["noise"] = [white_noise_like(x, rng) for x in prep.audio]
    speech["baseline"] = [generate.baseline_vocoder(tr, seed=s) for tr, s in zip(prep.tracks, seeds)]
    reports = {}
    for label, outs in speech.items():
        reports[label] = [
            evaluation.evaluate_pair(x, y, reference_vuv=tr.vuv, name=n)
            for n, x, y, tr in zip(prep.names, prep.audio, outs, prep.tracks)
        ]
    results["reports"] = reports
    results["aggregate"] = {k: evaluation.aggregate(v) for k, v in reports.items()}
    results["speech"] = speech
    results["prepared"] = prep
    return results


def summary(results: dict) -> str:
    lines = []
    for label, agg in results["aggregate"].items():
        parts = [f"{m}={agg[m]['median']:.3f}" if agg[m]["median"] is not None else f"{m}=-" for m in evaluation.METRICS]
        lines.append(f"{label:<9} median " + " ".join(parts))
    for label in ("glotnet", "wavenet"):
        lines.append(
            f"{label:<9} steps={results['steps'][label]} loss={results['final_loss'][label]:.3f} "
            f"train={results['train_seconds'][label]:.0f}s gen={results['gen_rate'][label]:.0f} samples/s"
        )
    return "\n".join(lines)
