"""Command-line pipelines: ingest, split, train, project, rank, eval, analyses.

Every option is a flat configuration key. Values come from the defaults,
then ``--config FILE`` (``key=value`` lines), then ``key=value`` arguments
and ``--key value`` flags. Exit codes: 0 success, 1 runtime error, 2 input
error.
"""
from __future__ import annotations

import argparse
import functools
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import baselines, checkpoint, coldstart, evaluation, models, synthetic
from .graph import DataFormatError, load_dataset, make_split, mask_cold, read_split, write_split

log = logging.getLogger("gravityrank")

COMMANDS = ("ingest", "split", "train", "project", "rank", "eval",
            "sweep-lambda", "analyze-masses", "export-embedding")
# keys that determine the data, split and masking; checked against checkpoints
DATA_KEYS = ("nodes", "edges", "features", "split", "split_ratios", "seed")
TRAIN_KEYS = tuple(f.name for f in fields(models.TrainConfig))
# keys that never change results
UNHASHED_KEYS = ("out", "force")
# path-valued keys, hashed by file content so relocating inputs keeps the hash
FILE_KEYS = ("nodes", "edges", "features", "split", "checkpoint")


class ConfigError(ValueError):
    pass


@functools.lru_cache(maxsize=64)
def _digest_cached(path, mtime_ns, size):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def _file_digest(path):
    if not path or not Path(path).is_file():
        return path
    st = Path(path).stat()
    return _digest_cached(str(Path(path).resolve()), st.st_mtime_ns, st.st_size)


@dataclass
class RunConfig:
    nodes: str = ""
    edges: str = ""
    features: str = ""
    split: str = ""
    split_ratios: str = "0.8,0.1,0.1"
    seed: int = 0
    model: str = "gravity_ae"
    d: int = 32
    d_hidden: int = 64
    epochs: int = 300
    lr: float = 0.05
    lam: float = 5.0
    precision: str = "float64"
    fixed_mass_source: str = "none"
    lambda_in_training: bool = True
    eps_dist: float = models.EPS_DIST
    max_nodes: int = 30000
    baseline: str = ""
    knn_pool: int = 200
    part: str = "test"
    candidates: str = "all"
    ks: str = "20,100,200"
    runs: int = 1
    lambdas: str = "1,5,20"
    betweenness_lengths: str = "inverse"
    checkpoint: str = ""
    out: str = "out"
    force: bool = False

    def hash(self, keys=None):
        d = asdict(self)
        keys = keys if keys is not None else [k for k in d if k not in UNHASHED_KEYS]
        d = {k: _file_digest(d[k]) if k in FILE_KEYS else d[k] for k in keys}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def data_hash(self):
        return self.hash(DATA_KEYS)

    def train_config(self, **overrides):
        kw = {k: getattr(self, k) for k in TRAIN_KEYS}
        kw["fixed_mass_source"] = None if self.fixed_mass_source in ("", "none") else self.fixed_mass_source
        kw.update(overrides)
        try:
            return models.TrainConfig(**kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def k_list(self):
        return tuple(int(k) for k in str(self.ks).split(",") if k.strip())

    def dump(self):
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_ALIASES = {"Ks": "ks", "K": "ks", "lambda": "lam"}


def _coerce(key, value):
    key = _ALIASES.get(key, key).replace("-", "_")
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown configuration key {key!r}")
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return key, int(value)
        if kind == "float":
            return key, float(value)
        if kind == "bool":
            if isinstance(value, bool):
                return key, value
            low = str(value).strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(value)
            return key, low in ("1", "true", "yes")
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    return key, str(value)


def parse_pairs(items):
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        key, value = _coerce(k.strip(), v.strip())
        out[key] = value
    return out


def read_config_file(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such config file: {path}")
    lines = [ln.strip() for ln in path.read_text().splitlines()]
    return parse_pairs([ln for ln in lines if ln and not ln.startswith("#")])


def build_config(args_pairs, flag_pairs, config_file=None):
    values = {}
    if config_file:
        values.update(read_config_file(config_file))
    values.update(parse_pairs(args_pairs))
    values.update(parse_pairs(flag_pairs))
    return RunConfig(**values)


# ---------------------------------------------------------------- pipeline pieces

def load_data(cfg):
    paths = (cfg.nodes, cfg.edges, cfg.features)
    if not any(paths):
        paths = synthetic.sample_paths()
    elif not all(paths):
        raise ConfigError("nodes, edges and features must be given together")
    return load_dataset(*paths)


def get_split(cfg, graph, meta):
    if cfg.split:
        return read_split(cfg.split, meta.index())
    try:
        ratios = tuple(float(r) for r in cfg.split_ratios.split(","))
        return make_split(graph.n, ratios, cfg.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


class Pipeline:
    """Loaded data, split and masked view for one configuration."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.graph, self.attrs, self.meta = load_data(cfg)
        self.split = get_split(cfg, self.graph, self.meta)
        self.masked = mask_cold(self.graph, self.split)
        if cfg.part not in ("valid", "test"):
            raise ConfigError("part must be 'valid' or 'test'")
        if cfg.candidates not in coldstart.CANDIDATE_POLICIES:
            raise ConfigError(f"candidates must be one of {coldstart.CANDIDATE_POLICIES}")
        self.queries = self.split.part(cfg.part)
        self.truth = self.masked.truth_for(self.queries)

    def train(self, seed=None, **overrides):
        tc = self.cfg.train_config(**overrides)
        if seed is not None:
            tc = replace(tc, seed=seed)
        return models.train(self.masked, self.attrs, tc, self.meta)

    def rank_model(self, model, k, decoder=None):
        system = coldstart.project(model, self.masked, self.attrs, self.queries)
        return coldstart.rank_queries(system, self.queries, k, self.cfg.candidates, decoder)

    def rank_baseline(self, name, k, seed):
        return baselines.baseline_rankings(name, self.masked, self.attrs, self.meta,
                                           self.queries, k, seed, self.cfg.knn_pool)


def _out_dir(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _header(cfg):
    return f"# config_hash={cfg.hash()}\n"


def _write_tsv(path, cfg, rows, columns=None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_header(cfg))
        if columns:
            fh.write("#" + "\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(str(x) for x in row) + "\n")


def _write_ranked(path, cfg, ranked, ids):
    tmp = Path(str(path) + ".part")
    coldstart.write_ranked(tmp, ranked, ids)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_header(cfg))
        fh.write(tmp.read_text())
    tmp.unlink()


def _write_json(path, cfg, payload):
    payload = dict(payload)
    payload["config_hash"] = cfg.hash()
    payload["config"] = {k: v for k, v in asdict(cfg).items() if k not in UNHASHED_KEYS}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_model(cfg):
    if not cfg.checkpoint:
        raise ConfigError("a checkpoint is required (checkpoint=PATH)")
    if not Path(cfg.checkpoint).exists():
        raise FileNotFoundError(f"no such checkpoint: {cfg.checkpoint}")
    model, header = checkpoint.load_checkpoint(cfg.checkpoint)
    stored = header.get("extra", {}).get("data_hash")
    if stored != cfg.data_hash() and not cfg.force:
        raise ConfigError(
            f"checkpoint data hash {stored} does not match configuration {cfg.data_hash()}; "
            "pass --force to override")
    return model


# ---------------------------------------------------------------- commands

def cmd_ingest(cfg):
    graph, attrs, meta = load_data(cfg)
    out = _out_dir(cfg)
    _write_tsv(out / "ids.tsv", cfg, enumerate(meta.ids), ["dense_id", "external_id"])
    deg = graph.out_degrees()
    summary = {"n": graph.n, "edges": graph.num_edges, "f": attrs.cols,
               "out_degree_min": int(deg.min()), "out_degree_max": int(deg.max())}
    _write_json(out / "dataset.json", cfg, summary)
    print(json.dumps(summary))


def cmd_split(cfg):
    graph, _, meta = load_data(cfg)
    split = get_split(cfg, graph, meta)
    out = _out_dir(cfg)
    write_split(out / "split.tsv", split, meta.ids)
    print(f"warm={len(split.warm_ids)} valid={len(split.valid_ids)} test={len(split.test_ids)}")


def _train_and_save(pipe, out, seed=None, **overrides):
    cfg = pipe.cfg
    model = pipe.train(seed, **overrides)
    checkpoint.save_checkpoint(out / "checkpoint.npz", model, cfg.hash(),
                               {"data_hash": cfg.data_hash()})
    rows = [(e, repr(t), repr(r), repr(k)) for e, (t, r, k) in enumerate(model.trace.as_array())]
    _write_tsv(out / "loss_trace.tsv", cfg, rows, ["epoch", "total", "reconstruction", "kl"])
    return model


def cmd_train(cfg):
    pipe = Pipeline(cfg)
    out = _out_dir(cfg)
    model = _train_and_save(pipe, out)
    (out / "config.txt").write_text(_header(cfg) + cfg.dump())
    print(f"trained {cfg.model}: loss {model.trace.total[0]:.5f} -> {model.trace.total[-1]:.5f}")


def cmd_project(cfg):
    pipe = Pipeline(cfg)
    model = _load_model(cfg)
    system = coldstart.project(model, pipe.masked, pipe.attrs, pipe.queries)
    _export_rows(_out_dir(cfg) / "embedding_cold.tsv", cfg, pipe, system, system.cold_ids)


def cmd_rank(cfg):
    pipe = Pipeline(cfg)
    model = _load_model(cfg)
    ranked = pipe.rank_model(model, max(cfg.k_list))
    _write_ranked(_out_dir(cfg) / "ranked.tsv", cfg, ranked, pipe.meta.ids)


def _rank_source(pipe, k):
    cfg = pipe.cfg
    if cfg.baseline:
        if cfg.baseline not in baselines.BASELINES:
            raise ConfigError(f"unknown baseline {cfg.baseline!r}")
        return lambda seed: pipe.rank_baseline(cfg.baseline, k, seed)
    if cfg.checkpoint:
        model = _load_model(cfg)
        return lambda seed: pipe.rank_model(model, k)
    return lambda seed: pipe.rank_model(pipe.train(seed), k)


def run_eval(cfg, pipe=None):
    """Evaluate and return ``(report, last_ranked)``."""
    pipe = pipe or Pipeline(cfg)
    if cfg.checkpoint and cfg.runs != 1:
        raise ConfigError("a checkpoint gives exactly one run; set runs=1")
    ks = cfg.k_list
    source = _rank_source(pipe, max(ks))
    last = {}

    def tracked(seed):
        last["ranked"] = source(seed)
        return last["ranked"]

    report = evaluation.evaluate(tracked, pipe.truth, ks, cfg.runs, cfg.seed)
    report.meta.update({"method": cfg.baseline or cfg.model, "part": cfg.part,
                        "candidates": cfg.candidates})
    return report, last["ranked"], pipe


def cmd_eval(cfg):
    report, ranked, pipe = run_eval(cfg)
    out = _out_dir(cfg)
    _write_json(out / "report.json", cfg, report.to_dict())
    _write_ranked(out / "ranked.tsv", cfg, ranked, pipe.meta.ids)
    print(report.table())


def cmd_sweep_lambda(cfg):
    pipe = Pipeline(cfg)
    out = _out_dir(cfg)
    lambdas = [float(x) for x in cfg.lambdas.split(",") if x.strip()]
    ks = cfg.k_list
    table = {}
    for lam in lambdas:
        sub = replace(cfg, lam=lam)
        pipe.cfg = sub
        report, ranked, _ = run_eval(sub, pipe)
        profile = evaluation.popularity_bias_profile(ranked, pipe.meta, k=20)
        tag = f"{lam:g}"
        _write_json(out / f"report_lambda{tag}.json", sub, report.to_dict())
        _write_tsv(out / f"profile_lambda{tag}.tsv", sub,
                   ((pipe.meta.ids[q], r) for q, r in zip(profile.queries, profile.min_rank)),
                   ["query_id", "min_popularity_rank"])
        table[tag] = {"ndcg": {str(k): report.mean("ndcg", k) for k in ks},
                      "profile_median": profile.median,
                      "profile_quartiles": [float(x) for x in profile.quartiles]}
        print(f"lambda={tag}: " + " ".join(f"NDCG@{k}={report.mean('ndcg', k):.2f}" for k in ks)
              + f" median_min_rank={profile.median:g}")
    pipe.cfg = cfg
    _write_json(out / "sweep.json", cfg, {"lambdas": table})


def cmd_analyze_masses(cfg):
    pipe = Pipeline(cfg)
    model = _load_model(cfg)
    if not model.config.model.startswith("gravity"):
        raise ConfigError("mass analysis needs a gravity checkpoint")
    masses = model.output[:, -1]
    measures = evaluation.node_measures(pipe.masked, pipe.meta, cfg.betweenness_lengths)
    table = evaluation.mass_correlations(masses, measures)
    path = _out_dir(cfg) / "correlations.tsv"
    path.write_text(_header(cfg) + table.to_tsv())
    print(table.to_tsv(), end="")


def _export_rows(path, cfg, pipe, system, node_ids):
    rows = system.rows(node_ids)
    width = system.output.shape[1]
    cols = ["id"] + [f"z{c}" for c in range(width - 1)] + (
        ["mass"] if system.decoder.has_mass else [f"z{width - 1}"])
    _write_tsv(path, cfg, ((pipe.meta.ids[i], *(repr(float(v)) for v in system.output[r]))
                           for i, r in zip(node_ids, rows)), cols)


def cmd_export_embedding(cfg):
    pipe = Pipeline(cfg)
    model = _load_model(cfg)
    system = coldstart.project(model, pipe.masked, pipe.attrs, pipe.queries)
    _export_rows(_out_dir(cfg) / "embedding.tsv", cfg, pipe, system, system.index_map)


HANDLERS = {
    "ingest": cmd_ingest, "split": cmd_split, "train": cmd_train,
    "project": cmd_project, "rank": cmd_rank, "eval": cmd_eval,
    "sweep-lambda": cmd_sweep_lambda, "analyze-masses": cmd_analyze_masses,
    "export-embedding": cmd_export_embedding,
}


def _parser():
    p = argparse.ArgumentParser(prog="gravityrank", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("pairs", nargs="*", help="key=value configuration overrides")
    p.add_argument("--config", help="file of key=value lines")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _split_flags(argv):
    """Pull ``--key value`` / ``--key=value`` / bare ``--flag`` pairs out of argv."""
    rest, pairs = [], []
    i = 0
    while i < len(argv):
        a = argv[i]
        if a.startswith("--") and a not in ("--config", "--verbose", "--help") and not a.startswith("--config="):
            name = a[2:]
            if "=" in name:
                pairs.append(name)
            elif _FIELD_TYPES.get(_ALIASES.get(name, name).replace("-", "_")) == "bool" and (
                    i + 1 >= len(argv) or argv[i + 1].startswith("-") or "=" in argv[i + 1]):
                pairs.append(f"{name}=true")
            elif i + 1 < len(argv):
                pairs.append(f"{name}={argv[i + 1]}")
                i += 1
            else:
                pairs.append(f"{name}=")
        else:
            rest.append(a)
        i += 1
    return rest, pairs


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    rest, flag_pairs = _split_flags(argv)
    args = _parser().parse_args(rest)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args.pairs, flag_pairs, args.config)
        HANDLERS[args.command](cfg)
    except (ConfigError, DataFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
