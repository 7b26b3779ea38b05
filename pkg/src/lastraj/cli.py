"""Command-line entry point: ``lastraj {gen-data,train,eval,verify-theory}``.

Every command reads a flat config file, writes its outputs under ``--out``
and finishes with one JSON run manifest listing checksums of what it wrote.
Exit codes: 0 success, 1 config/validation/integrity error, 2 numerical
abort, 3 certification failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import Config
from .errors import LastrajError, NumericalAbort
from .experiment import split_dataset
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.models import Generator, ModelConfig, build_models, item_meta_from_dataset, model_config_from_dataset
from .sampling import SamplerConfig
from .synthworld import WorldConfig, build_world, generate_dataset
from .theory.certify import run_sweep
from .training import LossProfile, TrainerConfig, evaluate_generator, train
from .trajectory import load_dataset, make_dataset, write_dataset

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CERTIFY = 0, 1, 2, 3


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    started: str
    finished: str = ""
    version: str = __version__
    outputs: dict = field(default_factory=dict)

    def record(self, name: str, path) -> None:
        path = Path(path)
        self.outputs[name] = {"path": path.name, "sha256": sha256_file(path)}

    def write(self, out_dir) -> Path:
        self.finished = _now()
        path = Path(out_dir) / f"{self.command}_manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _write_text(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


# ---------------------------------------------------------------------------
# config readers

def world_config(cfg: Config) -> WorldConfig:
    means = cfg.get_floats("world.regime_means")
    weights = cfg.get_floats("world.regime_weights")
    dwell = cfg.get_floats("world.regime_dwell", ",".join("1" for _ in means))
    if not len(means) == len(weights) == len(dwell):
        raise LastrajError("world.regime_means, world.regime_weights and world.regime_dwell differ in length")
    return WorldConfig(
        item_count=cfg.get_int("world.item_count"),
        floors=cfg.get_int("world.floors"),
        categories=cfg.get_int("world.categories"),
        regimes=tuple(zip(means, weights, dwell)),
        dwell_scale=cfg.get_floats("world.dwell_scale"),
        inter_mean=cfg.get_float("world.inter_mean", 1.0),
        b_bound=cfg.get_float("world.b_bound"),
        t_max=cfg.get_int("world.t_max"),
        context_width=cfg.get_int("world.context_width"),
        length_spread=cfg.get_float("world.length_spread", 0.1),
        context_strength=cfg.get_float("world.context_strength", 0.8),
        seed=cfg.get_int("world.seed"),
    )


def trainer_config(cfg: Config) -> TrainerConfig:
    bpe = cfg.get_int("train.batches_per_epoch", 0)
    default_anneal = TrainerConfig().anneal
    return TrainerConfig(
        epochs=cfg.get_int("train.epochs"),
        patience=cfg.get_int("train.patience"),
        batch_size=cfg.get_int("train.batch_size"),
        lr=cfg.get_float("train.lr"),
        tau_init=cfg.get_float("train.tau_init"),
        tau_min=cfg.get_float("train.tau_min"),
        anneal=cfg.get_float("train.anneal", repr(default_anneal)),
        seed=cfg.get_int("train.seed"),
        batches_per_epoch=bpe or None,
    )


def sampler_config(cfg: Config) -> SamplerConfig:
    return SamplerConfig(
        strategy=cfg.get_str("sampler.strategy"),
        k_buckets=cfg.get_int("sampler.k_buckets"),
        batch_size=cfg.get_int("sampler.batch_size"),
        seed=cfg.get_int("sampler.seed"),
        uniform_weights=cfg.get_bool("sampler.uniform_weights", False),
    )


def load_split(cfg: Config):
    dataset = load_dataset(cfg.get_path("data.path"))
    shuffle = cfg.get_str("split.shuffle_seed", "none")
    shuffle_seed = None if shuffle.lower() == "none" else int(shuffle)
    return split_dataset(dataset, cfg.get_float("split.test_fraction", 0.2), shuffle_seed)


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(cfg: Config, out: Path, log) -> int:
    manifest = RunManifest("gen-data", cfg.resolved(), cfg.get_int("data.seed"), _now())
    world_cfg = world_config(cfg)
    n = cfg.get_int("data.n")
    process = build_world(world_cfg)
    dataset = generate_dataset(process, n, np.random.default_rng(cfg.get_int("data.seed")))
    out.mkdir(parents=True, exist_ok=True)
    data_path = out / cfg.get_str("data.file", "dataset.jsonl")
    try:
        write_dataset(dataset, data_path)
    except OSError as exc:
        raise OSError(f"cannot write {data_path}: {exc.strerror or exc}") from exc
    world_path = _write_text(out / "world_config.json", world_cfg.to_json() + "\n")
    manifest.record("dataset", data_path)
    manifest.record("world_config", world_path)
    manifest.write(out)
    log(f"wrote {n} trajectories to {data_path}")
    return EXIT_OK


def cmd_train(cfg: Config, out: Path, log) -> int:
    manifest = RunManifest("train", cfg.resolved(), cfg.get_int("train.seed"), _now())
    train_set, _ = load_split(cfg)
    tcfg = trainer_config(cfg)
    scfg = sampler_config(cfg)
    profile = LossProfile.make(cfg.get_str("train.profile"), cfg.get_float("train.lambda_time"))
    hidden = cfg.get_int("model.hidden")
    model_cfg = model_config_from_dataset(
        train_set, hidden=hidden, disc_hidden=cfg.get_int("model.disc_hidden", hidden),
        d_embed=cfg.get_int("model.d_embed", 32), latent=cfg.get_int("model.latent", 16))
    out.mkdir(parents=True, exist_ok=True)
    models = build_models(model_cfg, item_meta_from_dataset(train_set), tcfg.seed)
    result = train(train_set, scfg, tcfg, profile, models=models, dump_dir=out, log=log)
    gen_path, gen_manifest = save_checkpoint(out / "generator.ckpt", result.generator.params.state())
    disc_path, disc_manifest = save_checkpoint(out / "discriminator.ckpt", result.discriminator.params.state())
    model_path = _write_text(out / "model_config.json", json.dumps(asdict(model_cfg), sort_keys=True) + "\n")
    history_path = _write_text(out / "history.csv", result.history.to_csv())
    for name, path in (("generator", gen_path), ("generator_manifest", gen_manifest),
                       ("discriminator", disc_path), ("discriminator_manifest", disc_manifest),
                       ("model_config", model_path), ("history", history_path)):
        manifest.record(name, path)
    manifest.write(out)
    log(f"{len(result.history)} updates, checkpoints in {out}")
    return EXIT_OK


def cmd_eval(cfg: Config, out: Path, log) -> int:
    seed = cfg.get_int("eval.seed")
    manifest = RunManifest("eval", cfg.resolved(), seed, _now())
    train_set, test_set = load_split(cfg)
    ckpt_dir = cfg.get_path("eval.checkpoint_dir")
    model_cfg = ModelConfig(**json.loads((ckpt_dir / "model_config.json").read_text(encoding="utf-8")))
    state = load_checkpoint(ckpt_dir / "generator.ckpt")
    gen = Generator(model_cfg, item_meta_from_dataset(train_set), np.random.default_rng(0))
    gen.params.load_state(state)
    tau = cfg.get_float("train.tau_min")
    report, generated = evaluate_generator(gen, test_set, tau, seed, train_set.meta)
    out.mkdir(parents=True, exist_ok=True)
    report_path = _write_text(out / "ks_report.csv", report.to_csv())
    gen_path = write_dataset(make_dataset(generated, t_max=train_set.t_max, b_bound=train_set.b_bound,
                                          item_count=train_set.item_count), out / "generated.jsonl")
    manifest.record("ks_report", report_path)
    manifest.record("generated", gen_path)
    manifest.write(out)
    log(report.to_text())
    return EXIT_OK


def cmd_verify_theory(cfg: Config, out: Path, log) -> int:
    seed = cfg.get_int("theory.seed")
    manifest = RunManifest("verify-theory", cfg.resolved(), seed, _now())
    result = run_sweep(
        cfg.get_int("theory.seed_count"),
        seed=seed,
        t_max_ceiling=cfg.get_int("theory.t_max_ceiling"),
        b_ceiling=cfg.get_float("theory.b_ceiling"),
        max_support=cfg.get_int("theory.max_support", 6),
        rhs_scale=0.5 if cfg.get_bool("theory.debug_halve_rhs", False) else 1.0,
        lemmas=cfg.get_bool("theory.lemmas", True),
        ipm=cfg.get_bool("theory.ipm", True),
    )
    out.mkdir(parents=True, exist_ok=True)
    csv_path = _write_text(out / "certification.csv", result.to_csv())
    summary_path = _write_text(out / "certification_summary.txt", "\n".join(result.summary_lines()) + "\n")
    manifest.record("certification", csv_path)
    manifest.record("summary", summary_path)
    manifest.write(out)
    for line in result.summary_lines():
        log(line)
    return EXIT_OK if result.all_hold else EXIT_CERTIFY


COMMANDS = {
    "gen-data": (cmd_gen_data, ("data.seed",)),
    "train": (cmd_train, ("train.seed", "sampler.seed")),
    "eval": (cmd_eval, ("eval.seed",)),
    "verify-theory": (cmd_verify_theory, ("theory.seed",)),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lastraj", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"lastraj {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="flat 'section.key = value' config file")
        p.add_argument("--seed", type=int, default=None, help="overrides the command's seed keys")
        p.add_argument("--out", default="out", help="output directory (default: out)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    def log(message):
        print(message, flush=True)

    handler, seed_keys = COMMANDS[args.command]
    try:
        cfg = Config.load(args.config)
        if args.seed is not None:
            for key in seed_keys:
                cfg.set(key, args.seed)
        return handler(cfg, Path(args.out), log)
    except NumericalAbort as exc:
        print(f"error: {exc} (diagnostics: {exc.dump_path})", file=sys.stderr)
        return EXIT_NUMERIC
    except (LastrajError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
