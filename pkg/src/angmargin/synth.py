"""Synthetic multi-speaker data standing in for acoustic features.

Each speaker has a center on a sphere of radius ``between_spread`` in frame
space; an utterance is a variable-length run of frames scattered around
that center with isotropic Gaussian noise of std ``within_spread``.

All randomness comes from ``numpy.random.Generator`` over PCG64, seeded
explicitly, so a (spec, seed) pair reproduces the same data on any platform.
"""
from dataclasses import asdict, dataclass, field
from math import comb
from typing import NamedTuple

import numpy as np


@dataclass(frozen=True)
class SpeakerSpec:
    n_speakers: int = 8
    frames_dim: int = 16
    frames_per_utt: tuple[int, int] = (10, 30)  # inclusive range
    utts_per_speaker: int = 10
    within_spread: float = 1.0
    between_spread: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "frames_per_utt", tuple(int(v) for v in self.frames_per_utt))
        lo, hi = self.frames_per_utt
        if self.n_speakers < 2:
            raise ValueError("n_speakers must be >= 2")
        if self.frames_dim < 2:
            raise ValueError("frames_dim must be >= 2")
        if self.utts_per_speaker < 2:
            raise ValueError("utts_per_speaker must be >= 2")
        if not 1 <= lo <= hi:
            raise ValueError(f"frames_per_utt must be a nonempty range of positive ints, got {self.frames_per_utt}")
        if self.within_spread < 0 or self.between_spread <= 0:
            raise ValueError("spreads must be nonnegative (within) and positive (between)")

    def to_dict(self):
        d = asdict(self)
        d["frames_per_utt"] = list(self.frames_per_utt)
        return d


@dataclass(eq=False)
class Utterance:
    utt_id: str
    speaker_id: str
    frames: np.ndarray  # (n_frames, frames_dim)

    def __eq__(self, other):
        if not isinstance(other, Utterance):
            return NotImplemented
        return (
            self.utt_id == other.utt_id
            and self.speaker_id == other.speaker_id
            and self.frames.shape == other.frames.shape
            and np.array_equal(self.frames, other.frames)
        )


@dataclass(eq=False)
class Dataset:
    utterances: list[Utterance]
    frames_dim: int
    spec: SpeakerSpec | None = None
    _index: dict = field(default=None, init=False, repr=False)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.frames_dim == other.frames_dim
            and self.spec == other.spec
            and self.utterances == other.utterances
        )

    def __len__(self):
        return len(self.utterances)

    def __getitem__(self, utt_id):
        if self._index is None:
            self._index = {u.utt_id: u for u in self.utterances}
        try:
            return self._index[utt_id]
        except KeyError:
            raise KeyError(f"unknown utterance id {utt_id!r}") from None

    def __contains__(self, utt_id):
        try:
            self[utt_id]
        except KeyError:
            return False
        return True

    def speakers(self):
        return sorted({u.speaker_id for u in self.utterances})

    def by_speaker(self):
        groups = {}
        for i, u in enumerate(self.utterances):
            groups.setdefault(u.speaker_id, []).append(i)
        return {s: groups[s] for s in sorted(groups)}


class Trial(NamedTuple):
    target: bool
    utt_a: str
    utt_b: str


def generate(spec):
    rng = np.random.default_rng(spec.seed)
    F = spec.frames_dim
    directions = rng.standard_normal((spec.n_speakers, F))
    centers = spec.between_spread * directions / np.linalg.norm(directions, axis=1, keepdims=True)
    lo, hi = spec.frames_per_utt
    utts = []
    for s, center in enumerate(centers):
        spk = f"spk{s:04d}"
        for u in range(spec.utts_per_speaker):
            n = int(rng.integers(lo, hi + 1))
            frames = center + spec.within_spread * rng.standard_normal((n, F))
            utts.append(Utterance(f"{spk}-{u:03d}", spk, frames))
    return Dataset(utts, F, spec)


def split_speakers(dataset, n_first):
    """Split by speaker: the first ``n_first`` speakers (sorted id) vs the rest."""
    speakers = dataset.speakers()
    if not 0 < n_first < len(speakers):
        raise ValueError(f"cannot split {len(speakers)} speakers at {n_first}")
    first = set(speakers[:n_first])
    a = [u for u in dataset.utterances if u.speaker_id in first]
    b = [u for u in dataset.utterances if u.speaker_id not in first]
    return Dataset(a, dataset.frames_dim, dataset.spec), Dataset(b, dataset.frames_dim, dataset.spec)


def make_trials(dataset, n_target, n_nontarget, seed):
    """Draw distinct verification pairs; no utterance is paired with itself.

    Raises ``ValueError`` when the dataset has fewer distinct pairs of a
    kind than requested.
    """
    if n_target < 0 or n_nontarget < 0:
        raise ValueError("trial counts must be nonnegative")
    groups = dataset.by_speaker()
    ids = [u.utt_id for u in dataset.utterances]
    sizes = [len(v) for v in groups.values()]
    avail_target = sum(comb(n, 2) for n in sizes)
    avail_nontarget = comb(len(ids), 2) - avail_target
    if n_target > avail_target:
        raise ValueError(f"requested {n_target} target trials, only {avail_target} distinct pairs exist")
    if n_nontarget > avail_nontarget:
        raise ValueError(
            f"requested {n_nontarget} nontarget trials, only {avail_nontarget} distinct pairs exist"
        )

    rng = np.random.default_rng(seed)
    members = list(groups.values())
    multi = [m for m in members if len(m) >= 2]
    multi_w = np.array([comb(len(m), 2) for m in multi], dtype=np.float64)
    spk_of = {}
    for s, m in enumerate(members):
        for i in m:
            spk_of[i] = s

    def draw_target():
        m = multi[rng.choice(len(multi), p=multi_w / multi_w.sum())]
        a, b = rng.choice(len(m), size=2, replace=False)
        return m[a], m[b]

    def draw_nontarget():
        while True:
            a, b = rng.choice(len(ids), size=2, replace=False)
            if spk_of[a] != spk_of[b]:
                return int(a), int(b)

    def all_target():
        return [(i, j) for m in multi for k, i in enumerate(m) for j in m[k + 1:]]

    def all_nontarget():
        return [(i, j) for i in range(len(ids)) for j in range(i + 1, len(ids)) if spk_of[i] != spk_of[j]]

    trials = []
    for count, avail, draw, enumerate_all, label in (
        (n_target, avail_target, draw_target, all_target, True),
        (n_nontarget, avail_nontarget, draw_nontarget, all_nontarget, False),
    ):
        if count == 0:
            continue
        if 2 * count > avail:
            # rejection sampling stalls near exhaustion; enumerate instead
            pool = enumerate_all()
            pick = rng.choice(len(pool), size=count, replace=False)
            pairs = [pool[k] for k in pick]
        else:
            seen, pairs = set(), []
            while len(pairs) < count:
                a, b = draw()
                key = (min(a, b), max(a, b))
                if key not in seen:
                    seen.add(key)
                    pairs.append((a, b))
        trials.extend(Trial(label, ids[a], ids[b]) for a, b in pairs)

    order = rng.permutation(len(trials))
    return [trials[k] for k in order]
