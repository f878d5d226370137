"""Experiment driver: one subcommand per pipeline stage.

Every stage reads and writes the plain-text formats of :mod:`angmargin.formats`
so intermediate artifacts can be inspected. Settings come from a flat YAML
``key: value`` file (``--config``) overridden by per-key flags; the resolved
settings are written to ``<out-dir>/config.yaml`` before any work starts.
"""
import argparse
import logging
import math
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import yaml

from .evaluation import (
    DcfConfig,
    between_class_variance,
    det_points,
    eer,
    format_det,
    format_report,
    min_dcf,
    nontarget_stats,
    score_trials,
)
from .formats import (
    FormatError,
    read_arrays,
    read_dataset,
    read_embeddings,
    read_scores,
    read_trials,
    write_arrays,
    write_dataset,
    write_embeddings,
    write_scores,
    write_trials,
)
from .interreg import sep_energy
from .losses import AnnealConfig, MarginConfig
from .synth import SpeakerSpec, generate, make_trials, split_speakers
from .trainer import TrainingConfig, TrainingDiverged, extract_embeddings, format_log, train

log = logging.getLogger("angmargin")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # data
    n_speakers: int = 16
    n_train_speakers: int = 8
    frames_dim: int = 16
    frames_per_utt: tuple[int, int] = (10, 30)
    utts_per_speaker: int = 10
    within_spread: float = 1.0
    between_spread: float = 1.0
    n_target: int | None = None  # None: every target pair of the held-out speakers
    n_nontarget: int = 2000
    # training
    emb_dim: int = 512
    hidden: tuple[int, ...] = (64, 64)
    epochs: int = 10
    lr_init: float = 0.1
    lr_final: float = 0.001
    milestones: tuple[int, ...] | None = None
    momentum: float = 0.9
    P: int = 8
    K: int = 4
    loss: str = "angular"
    m1: float = 1.0
    m2: float = 0.0
    m3: float = 0.0
    lambda_inter: float = 0.0
    lambda_base: float = 1000.0
    lambda_min: float = 5.0
    gamma: float = 1e-4
    ramp_epochs: float = 5.0
    head_init_std: float = 0.1
    # scoring
    p_target: float = 0.01
    c_miss: float = 1.0
    c_fa: float = 1.0
    seed: int = 0

    def speaker_spec(self):
        return SpeakerSpec(
            n_speakers=self.n_speakers,
            frames_dim=self.frames_dim,
            frames_per_utt=self.frames_per_utt,
            utts_per_speaker=self.utts_per_speaker,
            within_spread=self.within_spread,
            between_spread=self.between_spread,
            seed=self.seed,
        )

    def margin(self):
        return MarginConfig(self.m1, self.m2, self.m3)

    def training_config(self):
        return TrainingConfig(
            emb_dim=self.emb_dim,
            hidden=self.hidden,
            epochs=self.epochs,
            lr_init=self.lr_init,
            lr_final=self.lr_final,
            milestones=self.milestones,
            momentum=self.momentum,
            P=self.P,
            K=self.K,
            loss=self.loss,
            margin=self.margin(),
            lambda_inter=self.lambda_inter,
            anneal=AnnealConfig(self.lambda_base, self.lambda_min, self.gamma, self.ramp_epochs),
            head_init_std=self.head_init_std,
            seed=self.seed,
        )

    def dcf_config(self):
        return DcfConfig(self.p_target, self.c_miss, self.c_fa)

    def validate(self):
        if not 2 <= self.n_train_speakers <= self.n_speakers - 2:
            raise ConfigError("n_train_speakers must leave >= 2 speakers on each side of the split")
        self.speaker_spec()
        self.training_config()
        self.dcf_config()
        return self

    def dump(self):
        d = {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}
        return yaml.safe_dump(d, sort_keys=True, default_flow_style=None)


FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name, value):
    """Check a YAML (or flag) value against the type of field ``name``."""
    kind = FIELDS[name].type
    if value is None and "None" in str(kind):
        return None
    if isinstance(value, bool):
        raise ConfigError(f"{name}: expected a number, got {value!r}")
    if kind is int or kind == "int" or str(kind).startswith("int"):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"{name}: expected a finite number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string, got {value!r}")
        return value
    # integer tuples
    if not isinstance(value, (list, tuple)) or not all(
        isinstance(v, int) and not isinstance(v, bool) for v in value
    ):
        raise ConfigError(f"{name}: expected a list of integers, got {value!r}")
    return tuple(value)


def _parse_flag(name, text):
    if text.lower() in ("none", "null"):
        return _coerce(name, None)
    kind = str(FIELDS[name].type)
    if "tuple" in kind:
        try:
            return _coerce(name, [int(t) for t in text.split(",") if t.strip()])
        except ValueError:
            raise ConfigError(f"--{name}: expected comma-separated integers, got {text!r}") from None
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError:
        value = text
    if FIELDS[name].type is str:
        value = text
    return _coerce(name, value)


def load_config(path):
    """Parse a flat YAML mapping; errors name the file and line."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror}") from None
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise FormatError(path, mark.line + 1 if mark else 1, f"invalid YAML: {getattr(e, 'problem', e)}") from None
    if node is None:
        return {}
    if not isinstance(node, yaml.MappingNode):
        raise FormatError(path, node.start_mark.line + 1, "config must be a flat 'key: value' mapping")
    out = {}
    for key_node, _ in node.value:
        key, line = key_node.value, key_node.start_mark.line + 1
        if key not in FIELDS:
            raise FormatError(path, line, f"unknown key {key!r}")
        if key in out:
            raise FormatError(path, line, f"duplicate key {key!r}")
        try:
            out[key] = _coerce(key, data[key])
        except ConfigError as e:
            raise FormatError(path, line, str(e)) from None
    return out


def resolve_config(args):
    values = load_config(args.config) if getattr(args, "config", None) else {}
    for name in FIELDS:
        text = getattr(args, "set_" + name, None)
        if text is not None:
            values[name] = _parse_flag(name, text)
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    try:
        return RunConfig(**values).validate()
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(f"invalid configuration: {e}") from None


def _out_dir(args, cfg=None):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg is not None:
        (out / "config.yaml").write_text(cfg.dump())
    return out


# -- stages ---------------------------------------------------------------------

def cmd_gen(cfg, out):
    """Dataset split into training and held-out speakers, plus held-out trials."""
    train_set, test_set, trials = generate_split(cfg)
    write_dataset(out / "train.txt", train_set)
    write_dataset(out / "test.txt", test_set)
    write_trials(out / "trials.txt", trials)
    return train_set, test_set, trials


def generate_split(cfg):
    train_set, test_set = split_speakers(generate(cfg.speaker_spec()), cfg.n_train_speakers)
    n_target = cfg.n_target
    if n_target is None:
        n_target = sum(math.comb(len(m), 2) for m in test_set.by_speaker().values())
    return train_set, test_set, make_trials(test_set, n_target, cfg.n_nontarget, seed=cfg.seed)


def cmd_train(cfg, dataset_path, out):
    res = train(read_dataset(dataset_path), cfg.training_config())
    write_arrays(out / "params.txt", res.params)
    write_arrays(out / "weights.txt", {"W": res.W})
    (out / "train_log.txt").write_text(format_log(res.log))
    return res


def cmd_extract(params_path, dataset_path, out):
    emb = extract_embeddings(read_dataset(dataset_path), load_params(params_path))
    write_embeddings(out / "embeddings.txt", emb)
    return emb


def load_params(path):
    params = read_arrays(path)
    need = {"head_A", "head_b", "A0", "b0"}
    if not need <= set(params):
        raise FormatError(path, 1, f"missing encoder arrays {sorted(need - set(params))}")
    return params


def cmd_score(embeddings_path, trials_path, out):
    emb = read_embeddings(embeddings_path)
    trials = read_trials(trials_path, known_ids=set(emb.ids))
    scores = score_trials(emb, trials)
    write_scores(out / "scores.txt", scores)
    return scores


def cmd_eval(scores_path, trials_path, dcf, out, embeddings_path=None, dataset_path=None):
    """Report line and DET export. S_b is added when embeddings and their
    dataset (for speaker labels) are given."""
    scores = read_scores(scores_path, read_trials(trials_path))
    sb = None
    if embeddings_path is not None:
        sb = cmd_sb(embeddings_path, dataset_path)
    report = format_report(eer(scores), min_dcf(scores, dcf), sb, *nontarget_stats(scores)) + "\n"
    (out / "report.txt").write_text(report)
    (out / "det.txt").write_text(format_det(det_points(scores)))
    return report


def cmd_sep(weights_path):
    arrays = read_arrays(weights_path)
    if "W" not in arrays:
        raise FormatError(weights_path, 1, "no array named 'W'")
    return sep_energy(arrays["W"])


def cmd_sb(embeddings_path, dataset_path):
    emb = read_embeddings(embeddings_path)
    dataset = read_dataset(dataset_path)
    missing = [i for i in emb.ids if i not in dataset]
    if missing:
        raise ConfigError(f"{embeddings_path}: id {missing[0]!r} not in {dataset_path}")
    return between_class_variance(emb.vectors, [dataset[i].speaker_id for i in emb.ids])


SWEEP_COLUMNS = ("eer", "mindcf", "sb", "nontarget_mean", "nontarget_std", "sep_energy")


def cmd_sweep(cfg, key, values, out):
    """Full pipeline per value of one margin key; returns the comparative table."""
    data = out / "data"
    data.mkdir(exist_ok=True)
    cmd_gen(cfg, data)
    rows = [" ".join((key,) + SWEEP_COLUMNS)]
    for v in values:
        run_cfg = replace(cfg, **{key: v}).validate()
        run = out / f"{key}={v!r}"
        run.mkdir(exist_ok=True)
        (run / "config.yaml").write_text(run_cfg.dump())
        cmd_train(run_cfg, data / "train.txt", run)
        cmd_extract(run / "params.txt", data / "test.txt", run)
        cmd_score(run / "embeddings.txt", data / "trials.txt", run)
        report = cmd_eval(run / "scores.txt", data / "trials.txt", run_cfg.dcf_config(), run,
                          run / "embeddings.txt", data / "test.txt")
        metrics = dict(f.split("=") for f in report.split())
        metrics["sep_energy"] = f"{cmd_sep(run / 'weights.txt'):.6g}"
        rows.append(" ".join([repr(v)] + [metrics[c] for c in SWEEP_COLUMNS]))
    table = "\n".join(rows) + "\n"
    (out / "sweep.txt").write_text(table)
    return table


# -- argument parsing -----------------------------------------------------------

def _add_config_flags(p):
    p.add_argument("--config", help="flat YAML key: value file")
    g = p.add_argument_group("configuration keys (override --config)")
    for name in FIELDS:
        if name != "seed":
            g.add_argument("--" + name.replace("_", "-"), dest="set_" + name, metavar="V")


def build_parser():
    parser = argparse.ArgumentParser(prog="angmargin", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate train/held-out datasets and trials")
    _add_config_flags(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("train", help="train encoder and class weights")
    _add_config_flags(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("extract", help="embed every utterance of a dataset")
    p.add_argument("--params", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("score", help="cosine-score a trial list")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("eval", help="EER, minDCF, score moments and DET points")
    _add_config_flags(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--trials", required=True, help="trial list giving the labels")
    p.add_argument("--embeddings", help="with --dataset, adds S_b to the report")
    p.add_argument("--dataset")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("sep", help="print the separation energy of class weights")
    p.add_argument("--weights", required=True)

    p = sub.add_parser("sb", help="print the between-class variance of embeddings")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--dataset", required=True, help="dataset providing speaker labels")

    p = sub.add_parser("sweep", help="full pipeline over a list of margin values")
    _add_config_flags(p)
    p.add_argument("--margin-key", choices=("m1", "m2", "m3"), default="m3")
    p.add_argument("--values", type=float, nargs="+", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    return parser


def run(args):
    if args.command == "gen":
        cfg = resolve_config(args)
        cmd_gen(cfg, _out_dir(args, cfg))
    elif args.command == "train":
        cfg = resolve_config(args)
        cmd_train(cfg, args.dataset, _out_dir(args, cfg))
    elif args.command == "extract":
        cmd_extract(args.params, args.dataset, _out_dir(args))
    elif args.command == "score":
        cmd_score(args.embeddings, args.trials, _out_dir(args))
    elif args.command == "eval":
        if (args.embeddings is None) != (args.dataset is None):
            raise ConfigError("--embeddings and --dataset go together")
        cfg = resolve_config(args)
        out = _out_dir(args, cfg)
        sys.stdout.write(cmd_eval(args.scores, args.trials, cfg.dcf_config(), out, args.embeddings, args.dataset))
    elif args.command == "sep":
        print(repr(cmd_sep(args.weights)))
    elif args.command == "sb":
        print(repr(cmd_sb(args.embeddings, args.dataset)))
    elif args.command == "sweep":
        cfg = resolve_config(args)
        values = [int(v) if args.margin_key == "m1" and float(v).is_integer() else v for v in args.values]
        sys.stdout.write(cmd_sweep(cfg, args.margin_key, values, _out_dir(args, cfg)))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        run(args)
    except FileNotFoundError as e:
        print(f"angmargin: error: {e.filename}: no such file", file=sys.stderr)
        return 1
    except (FormatError, ConfigError, TrainingDiverged, ValueError, KeyError, OSError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"angmargin: error: {msg}".splitlines()[0], file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
