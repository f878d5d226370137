"""Open-set comparison of training systems on synthetic speakers.

Speakers are split into a training pool and disjoint held-out speakers;
each system is trained on the pool and evaluated by cosine scoring of
held-out trials. Every random choice derives from the per-run seed.
"""
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .evaluation import between_class_variance, eer, min_dcf, nontarget_stats, score_trials
from .interreg import sep_energy
from .losses import AnnealConfig, MarginConfig
from .synth import SpeakerSpec, generate, make_trials, split_speakers
from .trainer import TrainingConfig, TrainingDiverged, extract_embeddings, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BenchmarkConfig:
    n_train_speakers: int = 32
    n_test_speakers: int = 32
    frames_dim: int = 16
    utts_per_speaker: int = 16
    frames_per_utt: tuple[int, int] = (10, 30)
    within_spread: float = 1.0
    between_spread: float = 1.0
    n_nontarget: int = 20000  # every target pair is used
    training: TrainingConfig = field(
        default_factory=lambda: TrainingConfig(emb_dim=16, epochs=20, P=16, K=4)
    )
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)


SYSTEMS = {
    "softmax": dict(loss="softmax"),
    "am": dict(margin=MarginConfig(m3=0.2)),
    "am+inter": dict(margin=MarginConfig(m3=0.2), lambda_inter=0.01),
}


@dataclass(frozen=True)
class SystemResult:
    eer: float
    min_dcf: float
    sep_energy: float
    sb: float
    nontarget_mean: float
    nontarget_std: float
    final_loss: float
    diverged: bool = False


def make_split(cfg, seed):
    spec = SpeakerSpec(
        n_speakers=cfg.n_train_speakers + cfg.n_test_speakers,
        frames_dim=cfg.frames_dim,
        frames_per_utt=cfg.frames_per_utt,
        utts_per_speaker=cfg.utts_per_speaker,
        within_spread=cfg.within_spread,
        between_spread=cfg.between_spread,
        seed=seed,
    )
    train_set, test_set = split_speakers(generate(spec), cfg.n_train_speakers)
    n_target = sum(math.comb(len(m), 2) for m in test_set.by_speaker().values())
    trials = make_trials(test_set, n_target, cfg.n_nontarget, seed=seed)
    return train_set, test_set, trials


def run_system(train_set, test_set, trials, train_cfg):
    try:
        res = train(train_set, train_cfg)
    except TrainingDiverged as e:
        log.warning("training diverged: %s", e)
        nan = float("nan")
        return SystemResult(nan, nan, nan, nan, nan, nan, math.inf, diverged=True)
    emb = extract_embeddings(test_set, res.params)
    scores = score_trials(emb, trials)
    nt_mean, nt_std = nontarget_stats(scores)
    return SystemResult(
        eer=eer(scores),
        min_dcf=min_dcf(scores),
        sep_energy=sep_energy(res.W),
        sb=between_class_variance(emb.vectors, [u.speaker_id for u in test_set.utterances]),
        nontarget_mean=nt_mean,
        nontarget_std=nt_std,
        final_loss=res.log[-1].loss if res.log else float("nan"),
    )


def run(cfg=BenchmarkConfig(), systems=None):
    """``{system: [SystemResult per seed]}`` for the named training overrides."""
    systems = SYSTEMS if systems is None else systems
    out = {name: [] for name in systems}
    for seed in cfg.seeds:
        train_set, test_set, trials = make_split(cfg, seed)
        for name, overrides in systems.items():
            tcfg = replace(cfg.training, seed=seed, **overrides)
            out[name].append(run_system(train_set, test_set, trials, tcfg))
            log.info("seed %d %s: %s", seed, name, out[name][-1])
    return out


def paired_improvement(before, after):
    """Mean and standard error of ``before - after`` across seeds."""
    d = np.asarray(before, dtype=np.float64) - np.asarray(after, dtype=np.float64)
    return float(d.mean()), float(d.std(ddof=1) / math.sqrt(d.size))


def annealing_probe(cfg=BenchmarkConfig(), margin=MarginConfig(m2=0.4)):
    """Final training loss per seed with and without the loss-blend ramp."""
    annealed = dict(margin=margin)
    abrupt = dict(margin=margin, anneal=replace(cfg.training.anneal, ramp_epochs=0))
    return run(cfg, {"annealed": annealed, "no-anneal": abrupt})


def format_table(results, columns=("eer", "min_dcf", "sep_energy", "sb", "nontarget_mean", "nontarget_std")):
    """Mean over seeds per system, one row each."""
    head = "system " + " ".join(columns)
    rows = [head]
    for name, runs in results.items():
        vals = [np.mean([getattr(r, c) for r in runs]) for c in columns]
        rows.append(name + " " + " ".join(f"{v:.6g}" for v in vals))
    return "\n".join(rows) + "\n"


__all__ = [
    "AnnealConfig",
    "BenchmarkConfig",
    "SYSTEMS",
    "SystemResult",
    "annealing_probe",
    "format_table",
    "make_split",
    "paired_improvement",
    "run",
    "run_system",
]
