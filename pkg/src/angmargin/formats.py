"""Line-oriented text formats for datasets, trials, embeddings, scores and arrays.

Floats are written with ``repr`` (shortest round-trip form), so reading a
written file reproduces the in-memory values exactly.

Formats::

    dataset     #dataset <n_utts> <frames_dim>
                #spec <json | null>
                <utt_id> <speaker_id> <n_frames>
                <f_1> ... <f_dim>              (n_frames rows)
    trials      #trials <n>                    (optional header)
                <0|1> <utt_a> <utt_b>
    embeddings  <count> <dim>
                <utt_id> <v_1> ... <v_dim>
    scores      #scores <n>
                <score> <utt_a> <utt_b>
    arrays      #array <name> <shape...>
                rows of values (one row for 1-D arrays)
"""
import json
from dataclasses import dataclass

import numpy as np

from .synth import Dataset, SpeakerSpec, Trial, Utterance


class FormatError(ValueError):
    def __init__(self, path, lineno, msg):
        self.path, self.lineno = str(path), lineno
        super().__init__(f"{path}:{lineno}: {msg}")


@dataclass(eq=False)
class EmbeddingSet:
    ids: list[str]
    vectors: np.ndarray  # (count, dim)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.ids):
            raise ValueError(f"{len(self.ids)} ids do not match vectors of shape {self.vectors.shape}")
        self._row = {k: i for i, k in enumerate(self.ids)}
        if len(self._row) != len(self.ids):
            raise ValueError("duplicate embedding ids")

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.ids)

    def __contains__(self, utt_id):
        return utt_id in self._row

    def __getitem__(self, utt_id):
        try:
            return self.vectors[self._row[utt_id]]
        except KeyError:
            raise KeyError(f"no embedding for utterance {utt_id!r}") from None

    def __eq__(self, other):
        if not isinstance(other, EmbeddingSet):
            return NotImplemented
        return (
            self.ids == other.ids
            and self.vectors.shape == other.vectors.shape
            and np.array_equal(self.vectors, other.vectors)
        )


def _fmt(values):
    return " ".join(repr(float(v)) for v in values)


def _lines(path):
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            yield lineno, line.rstrip("\n")


def _floats(path, lineno, tokens, n=None):
    if n is not None and len(tokens) != n:
        raise FormatError(path, lineno, f"expected {n} values, got {len(tokens)}")
    try:
        return [float(t) for t in tokens]
    except ValueError as e:
        raise FormatError(path, lineno, str(e)) from None


def _int(path, lineno, token, what):
    try:
        v = int(token)
    except ValueError:
        raise FormatError(path, lineno, f"bad {what} {token!r}") from None
    if v < 0:
        raise FormatError(path, lineno, f"negative {what} {v}")
    return v


# -- dataset -----------------------------------------------------------------

def write_dataset(path, dataset):
    spec = json.dumps(dataset.spec.to_dict(), sort_keys=True) if dataset.spec else "null"
    with open(path, "w") as f:
        f.write(f"#dataset {len(dataset.utterances)} {dataset.frames_dim}\n")
        f.write(f"#spec {spec}\n")
        for u in dataset.utterances:
            f.write(f"{u.utt_id} {u.speaker_id} {u.frames.shape[0]}\n")
            for row in u.frames:
                f.write(_fmt(row) + "\n")


def read_dataset(path):
    it = _lines(path)
    try:
        lineno, head = next(it)
    except StopIteration:
        raise FormatError(path, 1, "empty file, expected '#dataset' header") from None
    tok = head.split()
    if len(tok) != 3 or tok[0] != "#dataset":
        raise FormatError(path, lineno, "expected '#dataset <n_utts> <frames_dim>'")
    n_utts = _int(path, lineno, tok[1], "utterance count")
    dim = _int(path, lineno, tok[2], "frames_dim")

    lineno, line = next(it, (lineno + 1, ""))
    if not line.startswith("#spec "):
        raise FormatError(path, lineno, "expected '#spec <json>' line")
    try:
        raw = json.loads(line[len("#spec "):])
        spec = None if raw is None else SpeakerSpec(**raw)
    except (ValueError, TypeError) as e:
        raise FormatError(path, lineno, f"bad spec: {e}") from None

    utts = []
    for lineno, line in it:
        if not line.strip():
            continue
        tok = line.split()
        if len(tok) != 3:
            raise FormatError(path, lineno, "expected '<utt_id> <speaker_id> <n_frames>'")
        n = _int(path, lineno, tok[2], "frame count")
        rows = []
        for _ in range(n):
            try:
                lineno, row = next(it)
            except StopIteration:
                raise FormatError(path, lineno + 1, f"truncated utterance {tok[0]}") from None
            rows.append(_floats(path, lineno, row.split(), dim))
        frames = np.array(rows, dtype=np.float64).reshape(n, dim)
        utts.append(Utterance(tok[0], tok[1], frames))
    if len(utts) != n_utts:
        raise FormatError(path, lineno, f"header declares {n_utts} utterances, found {len(utts)}")
    return Dataset(utts, dim, spec)


# -- trials ------------------------------------------------------------------

def write_trials(path, trials):
    with open(path, "w") as f:
        f.write(f"#trials {len(trials)}\n")
        for t in trials:
            f.write(f"{int(t.target)} {t.utt_a} {t.utt_b}\n")


def read_trials(path, known_ids=None):
    """Read a trial list; the header is optional. ``known_ids`` enables id checks."""
    trials, declared, header_line = [], None, 0
    for lineno, line in _lines(path):
        if line.startswith("#"):
            tok = line.split()
            if tok[0] == "#trials" and len(tok) == 2:
                declared, header_line = _int(path, lineno, tok[1], "trial count"), lineno
            continue
        if not line.strip():
            continue
        tok = line.split()
        if len(tok) != 3 or tok[0] not in ("0", "1"):
            raise FormatError(path, lineno, "expected '<0|1> <utt_a> <utt_b>'")
        if known_ids is not None:
            for u in tok[1:]:
                if u not in known_ids:
                    raise FormatError(path, lineno, f"unknown utterance id {u!r}")
        trials.append(Trial(tok[0] == "1", tok[1], tok[2]))
    if declared is not None and declared != len(trials):
        raise FormatError(path, header_line, f"header declares {declared} trials, found {len(trials)}")
    return trials


# -- embeddings --------------------------------------------------------------

def write_embeddings(path, emb):
    with open(path, "w") as f:
        f.write(f"{len(emb)} {emb.dim}\n")
        for k, v in zip(emb.ids, emb.vectors):
            f.write(f"{k} {_fmt(v)}\n")


def read_embeddings(path):
    it = _lines(path)
    lineno, head = next(it, (1, ""))
    tok = head.split()
    if len(tok) != 2:
        raise FormatError(path, lineno, "expected '<count> <dim>' header")
    count = _int(path, lineno, tok[0], "count")
    dim = _int(path, lineno, tok[1], "dim")
    ids, rows = [], []
    for lineno, line in it:
        if not line.strip():
            continue
        tok = line.split()
        rows.append(_floats(path, lineno, tok[1:], dim))
        ids.append(tok[0])
    if len(ids) != count:
        raise FormatError(path, lineno, f"header declares {count} embeddings, found {len(ids)}")
    if len(set(ids)) != len(ids):
        raise FormatError(path, lineno, "duplicate embedding ids")
    return EmbeddingSet(ids, np.array(rows, dtype=np.float64).reshape(count, dim))


# -- scores ------------------------------------------------------------------

def write_scores(path, scores):
    """``scores`` is a :class:`~angmargin.evaluation.ScoreSet` carrying its pairs."""
    if scores.pairs is None:
        raise ValueError("score set has no utterance pairs to write")
    with open(path, "w") as f:
        f.write(f"#scores {len(scores.pairs)}\n")
        for s, (a, b) in zip(scores.scores, scores.pairs):
            f.write(f"{float(s)!r} {a} {b}\n")


def read_scores(path, trials=None):
    """Read a score file. With ``trials``, pairs are checked line by line and
    labels attached; otherwise the labels stay unknown (``None``)."""
    from .evaluation import ScoreSet

    values, pairs, declared, header_line = [], [], None, 0
    for lineno, line in _lines(path):
        if line.startswith("#"):
            tok = line.split()
            if tok[0] == "#scores" and len(tok) == 2:
                declared, header_line = _int(path, lineno, tok[1], "score count"), lineno
            continue
        if not line.strip():
            continue
        tok = line.split()
        if len(tok) != 3:
            raise FormatError(path, lineno, "expected '<score> <utt_a> <utt_b>'")
        (s,) = _floats(path, lineno, tok[:1])
        if trials is not None:
            k = len(pairs)
            if k >= len(trials):
                raise FormatError(path, lineno, f"more scores than the {len(trials)} trials")
            if (trials[k].utt_a, trials[k].utt_b) != (tok[1], tok[2]):
                raise FormatError(path, lineno, f"pair {tok[1]} {tok[2]} does not match trial {k + 1}")
        values.append(s)
        pairs.append((tok[1], tok[2]))
    if declared is not None and declared != len(values):
        raise FormatError(path, header_line, f"header declares {declared} scores, found {len(values)}")
    labels = None
    if trials is not None:
        if len(trials) != len(values):
            raise FormatError(path, lineno if values else 1, f"{len(values)} scores for {len(trials)} trials")
        labels = np.array([t.target for t in trials], dtype=bool)
    return ScoreSet(np.array(values, dtype=np.float64), labels, pairs)


# -- named arrays ------------------------------------------------------------

def write_arrays(path, arrays):
    with open(path, "w") as f:
        for name, a in arrays.items():
            a = np.asarray(a, dtype=np.float64)
            if a.ndim not in (1, 2):
                raise ValueError(f"array {name!r} must be 1-D or 2-D")
            f.write(f"#array {name} {' '.join(map(str, a.shape))}\n")
            for row in np.atleast_2d(a):
                f.write(_fmt(row) + "\n")


def read_arrays(path):
    out = {}
    it = _lines(path)
    for lineno, line in it:
        if not line.strip():
            continue
        tok = line.split()
        if tok[0] != "#array" or len(tok) not in (3, 4):
            raise FormatError(path, lineno, "expected '#array <name> <shape...>'")
        shape = tuple(_int(path, lineno, t, "dimension") for t in tok[2:])
        n_rows, n_cols = (1, shape[0]) if len(shape) == 1 else shape
        rows = []
        for _ in range(n_rows):
            try:
                lineno, row = next(it)
            except StopIteration:
                raise FormatError(path, lineno + 1, f"truncated array {tok[1]}") from None
            rows.append(_floats(path, lineno, row.split(), n_cols))
        out[tok[1]] = np.array(rows, dtype=np.float64).reshape(shape)
    return out
