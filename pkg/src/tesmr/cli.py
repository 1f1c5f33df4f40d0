"""Command-line entry point wiring the pipeline stages through files.

Configuration is a flat ``key = value`` text file with dotted section names;
``--set key=value`` overrides individual entries.  Stages communicate only
via the dataset directory, the summary cache, embedding files and
checkpoints, so any stage's outputs can be produced externally.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .core import Hyperparams
from .encode import encode_texts, make_encoder, read_embeddings, write_embeddings
from .evaluate import MetricsReport, evaluate_outputs, format_table, make_report
from .experiments import (
    content_texts,
    run_mp_baseline,
    run_variant,
    sweep,
    sweep_rows_to_csv,
    variant_spec,
)
from .ingest import SplitConfig, build_dataset, load_dataset, load_interactions, \
    load_recipes, save_dataset, stats
from .propagate import normalize, propagate
from .summarize import ChatClient, SummaryCache, summarize_dataset
from .train import TrainSettings, fit, forward, load_checkpoint, save_checkpoint


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Resolved configuration; every key validated against the known set."""

    raw_recipes: str = ""
    raw_interactions: str = ""
    dataset_dir: str = "dataset"
    cache_dir: str = "cache"
    output_dir: str = "out"
    summarizer: str = "fallback"          # fallback | service
    encoder: str = "fallback"             # fallback | service | file
    encoder_dim: int = 384
    users_emb: str = ""                   # written by encode, read by train
    recipes_emb: str = ""
    llm_url: str = ""
    llm_key: str = ""
    llm_model: str = ""
    emb_url: str = ""
    emb_model: str = ""
    review_cap: int = 20
    temperature: float = 0.0
    jobs: int = 4
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    min_interactions: int = 3
    split_seed: int = 0
    hp: Hyperparams = field(default_factory=Hyperparams)
    variant: str = "full"
    eval_ks: tuple[int, ...] = (10, 20)
    eval_split: str = "test"
    deterministic: bool = True
    ablate_variants: tuple[str, ...] = ("full", "minus_T1", "minus_T2", "minus_T3", "minus_R")
    ablate_seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    sweep_taus: tuple[float, ...] = (0.3, 0.5, 0.7)
    sweep_lambdas: tuple[float, ...] = (0.1, 0.2, 0.3, 0.5)
    sweep_layers: tuple[int, ...] = (1, 2, 3)
    sweep_seeds: tuple[int, ...] = (0,)


_HP_KEYS = {"dim": int, "k": int, "tau": float, "lambda_cl": float, "lambda_reg": float,
            "lr": float, "train_batch": int, "eval_batch": int, "epochs": int,
            "patience": int, "seed": int}

_KEYS: dict[str, tuple[str, object]] = {
    "raw.recipes": ("raw_recipes", str),
    "raw.interactions": ("raw_interactions", str),
    "paths.dataset_dir": ("dataset_dir", str),
    "paths.cache_dir": ("cache_dir", str),
    "paths.output_dir": ("output_dir", str),
    "backend.summarizer": ("summarizer", str),
    "backend.encoder": ("encoder", str),
    "backend.encoder_dim": ("encoder_dim", int),
    "backend.users_emb": ("users_emb", str),
    "backend.recipes_emb": ("recipes_emb", str),
    "backend.llm_url": ("llm_url", str),
    "backend.llm_key": ("llm_key", str),
    "backend.llm_model": ("llm_model", str),
    "backend.emb_url": ("emb_url", str),
    "backend.emb_model": ("emb_model", str),
    "summarize.review_cap": ("review_cap", int),
    "summarize.temperature": ("temperature", float),
    "summarize.jobs": ("jobs", int),
    "split.ratios": ("split_ratios", "floats"),
    "split.min_interactions": ("min_interactions", int),
    "split.seed": ("split_seed", int),
    "variant": ("variant", str),
    "eval.k": ("eval_ks", "ints"),
    "eval.split": ("eval_split", str),
    "train.deterministic": ("deterministic", "bool"),
    "ablate.variants": ("ablate_variants", "strs"),
    "ablate.seeds": ("ablate_seeds", "ints"),
    "sweep.taus": ("sweep_taus", "floats"),
    "sweep.lambdas": ("sweep_lambdas", "floats"),
    "sweep.layers": ("sweep_layers", "ints"),
    "sweep.seeds": ("sweep_seeds", "ints"),
}


def _convert(key: str, value: str, kind):
    try:
        if kind is str:
            return value
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        if kind == "bool":
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
            raise ValueError(value)
        if kind == "ints":
            return tuple(int(x) for x in value.split(",") if x.strip())
        if kind == "floats":
            return tuple(float(x) for x in value.split(",") if x.strip())
        if kind == "strs":
            return tuple(x.strip() for x in value.split(",") if x.strip())
    except ValueError as exc:
        raise UsageError(f"config key {key!r}: cannot parse value {value!r}") from exc
    raise AssertionError(kind)


def parse_config_text(text: str, cfg: RunConfig | None = None) -> RunConfig:
    cfg = cfg or RunConfig()
    hp_kw = {f.name: getattr(cfg.hp, f.name) for f in fields(Hyperparams)}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected 'key = value', got {raw_line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key.startswith("hp."):
            short = key[3:]
            if short not in _HP_KEYS:
                raise UsageError(f"config line {lineno}: unknown key {key!r}")
            name = "K" if short == "k" else short
            hp_kw[name] = _convert(key, value, _HP_KEYS[short])
        elif key in _KEYS:
            attr, kind = _KEYS[key]
            setattr(cfg, attr, _convert(key, value, kind))
        else:
            raise UsageError(f"config line {lineno}: unknown key {key!r}")
    cfg.hp = Hyperparams(**hp_kw)
    if len(cfg.split_ratios) != 3:
        raise UsageError("split.ratios must have exactly three values")
    return cfg


def load_config(path: str | None, sets: list[str]) -> RunConfig:
    cfg = RunConfig()
    if path:
        p = Path(path)
        if not p.exists():
            raise UsageError(f"config file not found: {path}")
        cfg = parse_config_text(p.read_text(encoding="utf-8"), cfg)
    for item in sets or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        cfg = parse_config_text(item, cfg)
    return cfg


def config_dict(cfg: RunConfig) -> dict:
    out = {}
    for key, (attr, _) in _KEYS.items():
        val = getattr(cfg, attr)
        out[key] = list(val) if isinstance(val, tuple) else val
    for short in _HP_KEYS:
        name = "K" if short == "k" else short
        out[f"hp.{short}"] = getattr(cfg.hp, name)
    return out


def _version_string() -> str:
    try:
        desc = subprocess.run(["git", "describe", "--always", "--dirty"],
                              capture_output=True, text=True, timeout=5,
                              cwd=Path(__file__).resolve().parent)
        if desc.returncode == 0 and desc.stdout.strip():
            return f"tesmr-{__version__}+{desc.stdout.strip()}"
    except OSError:
        pass
    return f"tesmr-{__version__}"


class OutputLock:
    """One process per output directory."""

    def __init__(self, out_dir: Path):
        self.path = out_dir / ".lock"
        self.fd = None

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(f"output dir is locked by another run: {self.path}") from None
        os.write(self.fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        if self.fd is not None:
            os.close(self.fd)
            self.path.unlink(missing_ok=True)
        return False


def write_run_json(cfg: RunConfig, out_dir: Path, command: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"command": command, "version": _version_string(), "config": config_dict(cfg)}
    with open(out_dir / "run.json", "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")


def _client(cfg: RunConfig) -> ChatClient | None:
    url = cfg.llm_url or os.environ.get("TESMR_LLM_URL", "")
    if cfg.summarizer != "service":
        return None
    if not url:
        raise RuntimeError("backend.summarizer = service but no LLM URL configured "
                           "(backend.llm_url or TESMR_LLM_URL)")
    return ChatClient(url=url,
                      model=cfg.llm_model or os.environ.get("TESMR_LLM_MODEL", "default"),
                      api_key=cfg.llm_key or os.environ.get("TESMR_LLM_KEY") or None,
                      temperature=cfg.temperature)


def _encoder(cfg: RunConfig, path: str = ""):
    return make_encoder(cfg.encoder, dim=cfg.encoder_dim,
                        url=cfg.emb_url or None, model=cfg.emb_model or None,
                        path=path or None)


def _emb_paths(cfg: RunConfig) -> tuple[Path, Path]:
    users = Path(cfg.users_emb) if cfg.users_emb else Path(cfg.output_dir) / "users.emb"
    recipes = Path(cfg.recipes_emb) if cfg.recipes_emb else Path(cfg.output_dir) / "recipes.emb"
    return users, recipes


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------

def cmd_ingest(cfg: RunConfig) -> int:
    if not cfg.raw_recipes or not cfg.raw_interactions:
        raise RuntimeError("ingest requires raw.recipes and raw.interactions paths")
    recipes = load_recipes(cfg.raw_recipes)
    interactions = load_interactions(cfg.raw_interactions, recipes)
    split = SplitConfig(ratios=tuple(cfg.split_ratios),
                        min_interactions=cfg.min_interactions, rng_seed=cfg.split_seed)
    dataset = build_dataset(recipes, interactions, split)
    save_dataset(dataset, cfg.dataset_dir)
    st = stats(dataset)
    print(f"ingested: {st.n_users} users, {st.n_recipes} recipes, "
          f"{st.n_interactions} interactions, {st.n_ingredients} ingredients, "
          f"sparsity {st.sparsity:.2f}%")
    if recipes.warning_count or interactions.warning_count:
        print(f"warnings: {recipes.warning_count} recipe lines, "
              f"{interactions.warning_count} interaction rows skipped")
    return 0


def cmd_summarize(cfg: RunConfig) -> int:
    dataset = load_dataset(cfg.dataset_dir)
    cache = SummaryCache(cfg.cache_dir)
    client = _client(cfg)
    pairs, users = summarize_dataset(dataset, cache=cache, client=client, jobs=cfg.jobs,
                                     cap=cfg.review_cap)
    by_source: dict[str, int] = {}
    for item in pairs + users:
        by_source[item.source] = by_source.get(item.source, 0) + 1
    print(f"summarized {len(pairs)} recipes and {len(users)} users "
          f"({', '.join(f'{k}={v}' for k, v in sorted(by_source.items()))})")
    return 0


def cmd_encode(cfg: RunConfig) -> int:
    dataset = load_dataset(cfg.dataset_dir)
    spec = variant_spec(cfg.variant)
    raw = bool(spec.overrides.get("raw_content", False))
    cache = SummaryCache(cfg.cache_dir)
    client = _client(cfg)
    user_texts, recipe_texts = content_texts(
        dataset, raw=raw, with_reviews=spec.overrides.get("with_reviews", True),
        cache=cache, client=client, jobs=cfg.jobs, cap=cfg.review_cap)
    users_path, recipes_path = _emb_paths(cfg)
    if cfg.encoder == "file":
        user0 = encode_texts(_encoder(cfg, str(users_path)), user_texts)
        recipe0 = encode_texts(_encoder(cfg, str(recipes_path)), recipe_texts)
    else:
        enc = _encoder(cfg)
        user0 = encode_texts(enc, user_texts)
        recipe0 = encode_texts(enc, recipe_texts)
    users_path.parent.mkdir(parents=True, exist_ok=True)
    recipes_path.parent.mkdir(parents=True, exist_ok=True)
    write_embeddings(user0, users_path)
    write_embeddings(recipe0, recipes_path)
    print(f"wrote {users_path} ({user0.shape[0]}x{user0.shape[1]}) and "
          f"{recipes_path} ({recipe0.shape[0]}x{recipe0.shape[1]})")
    return 0


def _load_content(cfg: RunConfig, dataset) -> tuple[np.ndarray, np.ndarray]:
    users_path, recipes_path = _emb_paths(cfg)
    if not users_path.exists() or not recipes_path.exists():
        raise RuntimeError(
            f"missing embeddings: run `tesmr encode` first (expected {users_path} "
            f"and {recipes_path})")
    user0 = read_embeddings(users_path)
    recipe0 = read_embeddings(recipes_path)
    if user0.shape[0] != dataset.n_users:
        raise RuntimeError(f"{users_path}: {user0.shape[0]} rows != {dataset.n_users} users")
    if recipe0.shape[0] != dataset.n_recipes:
        raise RuntimeError(f"{recipes_path}: {recipe0.shape[0]} rows != "
                           f"{dataset.n_recipes} recipes")
    return user0, recipe0


def cmd_train(cfg: RunConfig) -> int:
    out_dir = Path(cfg.output_dir)
    with OutputLock(out_dir):
        dataset = load_dataset(cfg.dataset_dir)
        spec = variant_spec(cfg.variant)
        hp = cfg.hp.replace(K=spec.overrides["K"]) if "K" in spec.overrides else cfg.hp
        settings = TrainSettings(
            use_content=spec.overrides.get("use_content", True),
            use_learn=spec.overrides.get("use_learn", True),
            propagate_content=spec.overrides.get("propagate_content", True))
        adj = normalize(dataset.graph_train)
        content = None
        if settings.use_content:
            user0, recipe0 = _load_content(cfg, dataset)
            if settings.propagate_content:
                prop = propagate(adj, user0, recipe0, hp.K)
                content = (prop.user_final, prop.recipe_final)
            else:
                content = (user0, recipe0)
        result = fit(dataset, content, hp, settings, adj=adj)
        write_run_json(cfg, out_dir, "train")
        save_checkpoint(out_dir / "checkpoint.bin", result.state)
        with open(out_dir / "train_log.csv", "w", encoding="utf-8") as f:
            f.write("epoch,loss,bpr_s,bpr_l,cl,reg,val_recall20\n")
            for row in result.log:
                f.write(f"{row.epoch},{row.loss:.6f},{row.bpr_s:.6f},{row.bpr_l:.6f},"
                        f"{row.cl:.6f},{row.reg:.6f},{row.val_recall20:.6f}\n")
        status = "diverged" if result.diverged else f"best epoch {result.best_epoch}"
        print(f"trained variant {cfg.variant} ({status}); checkpoint at "
              f"{out_dir / 'checkpoint.bin'}")
        return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    out_dir = Path(cfg.output_dir)
    ckpt = out_dir / "checkpoint.bin"
    if not ckpt.exists():
        raise RuntimeError(f"missing checkpoint: run `tesmr train` first (expected {ckpt})")
    dataset = load_dataset(cfg.dataset_dir)
    spec = variant_spec(cfg.variant)
    hp = cfg.hp.replace(K=spec.overrides["K"]) if "K" in spec.overrides else cfg.hp
    settings = TrainSettings(
        use_content=spec.overrides.get("use_content", True),
        use_learn=spec.overrides.get("use_learn", True),
        propagate_content=spec.overrides.get("propagate_content", True))
    adj = normalize(dataset.graph_train)
    content = (None, None)
    if settings.use_content:
        user0, recipe0 = _load_content(cfg, dataset)
        if settings.propagate_content:
            prop = propagate(adj, user0, recipe0, hp.K)
            content = (prop.user_final, prop.recipe_final)
        else:
            content = (user0, recipe0)
    state = load_checkpoint(ckpt)
    outputs = forward(state, adj, content[0], content[1], hp, settings)
    metrics = evaluate_outputs(outputs, dataset, split=cfg.eval_split, ks=cfg.eval_ks,
                               eval_batch=cfg.hp.eval_batch)
    report = make_report({cfg.hp.seed: metrics}, ks=cfg.eval_ks,
                         config={"variant": cfg.variant, "split": cfg.eval_split,
                                 **{f"hp.{k}": v for k, v in config_dict(cfg).items()
                                    if k.startswith("hp.")}})
    with open(out_dir / "report.json", "w", encoding="utf-8") as f:
        f.write(report.to_json(include_timing=not cfg.deterministic))
    print(format_table([(cfg.variant, report.mean)], cfg.eval_ks))
    return 0


def cmd_mp_baseline(cfg: RunConfig) -> int:
    dataset = load_dataset(cfg.dataset_dir)
    report = run_mp_baseline(dataset, encoder=_encoder(cfg), K=cfg.hp.K, ks=cfg.eval_ks,
                             split=cfg.eval_split, eval_batch=cfg.hp.eval_batch)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "mp_report.json", "w", encoding="utf-8") as f:
        f.write(report.to_json(include_timing=not cfg.deterministic))
    print(format_table([("mp_baseline", report.mean)], cfg.eval_ks))
    return 0


def cmd_ablate(cfg: RunConfig) -> int:
    dataset = load_dataset(cfg.dataset_dir)
    cache = SummaryCache(cfg.cache_dir)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for name in cfg.ablate_variants:
        report = run_variant(name, dataset, cfg.hp, seeds=tuple(cfg.ablate_seeds),
                             encoder=_encoder(cfg), cache=cache, client=_client(cfg),
                             ks=cfg.eval_ks, split=cfg.eval_split)
        with open(out_dir / f"report_{name}.json", "w", encoding="utf-8") as f:
            f.write(report.to_json(include_timing=not cfg.deterministic))
        rows.append((name, report.mean))
    print(format_table(rows, cfg.eval_ks))
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    dataset = load_dataset(cfg.dataset_dir)
    cache = SummaryCache(cfg.cache_dir)
    rows = sweep(dataset, cfg.hp, taus=cfg.sweep_taus, lambdas=cfg.sweep_lambdas,
                 layers=cfg.sweep_layers, seeds=cfg.sweep_seeds,
                 encoder=_encoder(cfg), cache=cache)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "sweep.csv"
    csv_path.write_text(sweep_rows_to_csv(rows), encoding="utf-8")
    ndcgs = [r["ndcg20"] for r in rows]
    if ndcgs and min(ndcgs) > 0:
        gap = 100.0 * (max(ndcgs) - min(ndcgs)) / max(ndcgs)
        print(f"wrote {csv_path} ({len(rows)} rows); best-worst NDCG@20 gap {gap:.2f}%")
    else:
        print(f"wrote {csv_path} ({len(rows)} rows)")
    return 0


def cmd_report(cfg: RunConfig, paths: list[str]) -> int:
    rows = []
    ks = cfg.eval_ks
    for path in paths:
        p = Path(path)
        if not p.exists():
            raise RuntimeError(f"report not found: {path}")
        rep = MetricsReport.from_json(p.read_text(encoding="utf-8"))
        ks = rep.ks
        rows.append((rep.config.get("variant", p.stem), rep.mean))
    if not rows:
        raise RuntimeError("no report files given")
    print(format_table(rows, ks))
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="tesmr", description=__doc__)
    parser.add_argument("--version", action="version", version=_version_string())
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("ingest", "summarize", "encode", "train", "evaluate", "mp-baseline",
                 "ablate", "sweep", "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config entry (repeatable)")
        if name == "report":
            p.add_argument("paths", nargs="*", help="report JSON files to tabulate")
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args.config, args.set)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    handlers = {
        "ingest": cmd_ingest,
        "summarize": cmd_summarize,
        "encode": cmd_encode,
        "train": cmd_train,
        "evaluate": cmd_evaluate,
        "mp-baseline": cmd_mp_baseline,
        "ablate": cmd_ablate,
        "sweep": cmd_sweep,
    }
    try:
        if args.command == "report":
            return cmd_report(cfg, args.paths)
        return handlers[args.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
