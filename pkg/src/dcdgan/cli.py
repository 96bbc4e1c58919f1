"""Command-line pipeline: train, finetune, sample, evaluate, levelset.

Every command reads an optional JSON config (``--config``) whose ``seed`` is
the only source of randomness. Outputs go to ``--out``; a command holds
``<out>/.lock`` while it runs so two invocations never share a directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluation, persist, synth
from .dcd import DcdConfig, dcd_finetune
from .nn import spectral_normalize
from .numcore import make_rng
from .sampler import PRESETS, RUNNABLE_PRESETS, LangevinConfig, run_chain
from .wgan import TrainConfig, train

# streams for the sampling command, disjoint from the training ones
STREAM_SAMPLE_LATENT = 4
STREAM_SAMPLE_CHAIN = 5
SAVE_POWER_ITERS = 50

SECTIONS = {"seed", "dataset", "mixture", "out", "train", "dcd", "sample", "presets", "levelset"}


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"config field {field_name!r}: {message}")
        self.field = field_name


@dataclass
class ExperimentConfig:
    seed: int | None = None
    dataset: str = "ring8"
    mixture: dict | None = None
    out: str = "run"
    train: dict = field(default_factory=dict)
    dcd: dict = field(default_factory=dict)
    sample: dict = field(default_factory=dict)
    presets: dict = field(default_factory=dict)
    levelset: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "expected a JSON object")
        unknown = set(raw) - SECTIONS
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.seed is not None and (isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0):
            raise ConfigError("seed", f"expected a non-negative integer, got {self.seed!r}")
        if self.dataset not in (*synth.PRESETS, "custom"):
            raise ConfigError("dataset", f"expected one of {sorted(synth.PRESETS)} or 'custom', got {self.dataset!r}")
        if self.dataset == "custom" and self.mixture is None:
            raise ConfigError("mixture", "required when dataset is 'custom'")
        for name in ("train", "dcd", "sample", "presets", "levelset"):
            if not isinstance(getattr(self, name), dict):
                raise ConfigError(name, "expected an object")
        for name, body in self.presets.items():
            _build(LangevinConfig, body, f"presets.{name}")
        self.spec()
        self.train_config()
        self.dcd_config()
        self.sample_settings()

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("seed", "missing; pass it in the config or with --seed")
        return self.seed

    def spec(self) -> synth.MixtureSpec:
        if self.dataset == "custom":
            try:
                return synth.MixtureSpec.from_dict(self.mixture)
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError("mixture", str(exc)) from None
        return synth.PRESETS[self.dataset]()

    def preset(self, name: str, where: str) -> LangevinConfig:
        if name in self.presets:
            return _build(LangevinConfig, self.presets[name], f"presets.{name}")
        if name in RUNNABLE_PRESETS:
            return PRESETS[name]
        if name in PRESETS:
            raise ConfigError(where, f"preset {name!r} is recorded for documentation only; runnable: {list(RUNNABLE_PRESETS)}")
        raise ConfigError(where, f"unknown preset {name!r}")

    def train_config(self) -> TrainConfig:
        _no_local_seed(self.train, "train")
        return _build(TrainConfig, {**self.train, "seed": self.seed or 0}, "train")

    def dcd_config(self) -> DcdConfig:
        body = dict(self.dcd)
        if "preset" in body and "chain" in body:
            raise ConfigError("dcd.preset", "give either a preset or a chain, not both")
        chain = self.preset(body.pop("preset"), "dcd.preset") if "preset" in body else None
        _no_local_seed(body, "dcd")
        cfg = _build(DcdConfig, {**body, "seed": self.seed or 0}, "dcd")
        return dataclasses.replace(cfg, chain=chain) if chain is not None else cfg

    def sample_settings(self) -> tuple[LangevinConfig, int]:
        body = dict(self.sample)
        unknown = set(body) - {"preset", "n"}
        if unknown:
            raise ConfigError(f"sample.{sorted(unknown)[0]}", "unknown field")
        n = body.get("n", 10_000)
        if isinstance(n, bool) or not isinstance(n, int) or n < 0:
            raise ConfigError("sample.n", f"expected a non-negative integer, got {n!r}")
        return self.preset(body.get("preset", "latent"), "sample.preset"), n

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        # where the files go does not change what is in them
        d = self.to_dict()
        d.pop("out")
        return persist.config_hash(d)


def _no_local_seed(body, where):
    if isinstance(body, dict) and "seed" in body:
        raise ConfigError(f"{where}.seed", "the seed is set once, at the top level")


def _build(cls, body, where):
    if not isinstance(body, dict):
        raise ConfigError(where, "expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(body) - names
    if unknown:
        raise ConfigError(f"{where}.{sorted(unknown)[0]}", "unknown field")
    try:
        return cls(**body)
    except (TypeError, ValueError) as exc:
        msg = str(exc)
        hit = next((n for n in sorted(names, key=len, reverse=True) if msg.startswith(n)), None)
        raise ConfigError(f"{where}.{hit}" if hit else where, msg) from None


def load_config(path: str | None, seed: int | None = None, out: str | None = None) -> ExperimentConfig:
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError("--config", f"cannot read {path} ({exc.strerror})") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("--config", f"{path} is not valid JSON ({exc.msg} at line {exc.lineno})") from None
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "expected a JSON object")
    if seed is not None:
        raw = {**raw, "seed": seed}
    if out is not None:
        raw = {**raw, "out": out}
    return ExperimentConfig.from_dict(raw)


class OutputError(RuntimeError):
    pass


@contextmanager
def locked_dir(path):
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        fd = os.open(path / ".lock", os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise OutputError(f"output directory {path} is in use (remove {path / '.lock'} if no other run is active)") from None
    except OSError as exc:
        raise OutputError(f"output directory {path} is not writable ({exc.strerror})") from None
    os.close(fd)
    try:
        yield path
    finally:
        (path / ".lock").unlink(missing_ok=True)


def _metadata(cfg: ExperimentConfig, stage: str, iterations: int) -> dict:
    return {"stage": stage, "seed": cfg.seed, "iterations": iterations, "config_hash": cfg.fingerprint(), "dataset": cfg.dataset}


# -- commands ---------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.seed, args.out)
    cfg.require_seed()
    tcfg = cfg.train_config()
    with locked_dir(cfg.out) as out:
        generator, critic, log = train(cfg.spec(), tcfg)
        spectral_normalize(critic, SAVE_POWER_ITERS)
        meta = _metadata(cfg, "train", tcfg.iterations)
        persist.save_checkpoint(out / "generator.json", generator, meta)
        persist.save_checkpoint(out / "critic.json", critic, meta)
        persist.write_csv(
            out / "train_log.csv",
            ["iteration", "critic_loss", "generator_loss", "elapsed"],
            ([r["iteration"], r["critic_loss"], r["generator_loss"], r["elapsed"]] for r in log.rows()),
        )
        persist.atomic_write(out / "config.json", json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n")
    print(f"wrote {out / 'generator.json'}, {out / 'critic.json'}, {out / 'train_log.csv'}")
    return 0


def cmd_finetune(args) -> int:
    cfg = load_config(args.config, args.seed, args.out)
    cfg.require_seed()
    dcfg = cfg.dcd_config()
    if args.preset is not None:
        dcfg = dataclasses.replace(dcfg, chain=cfg.preset(args.preset, "--preset"))
    out = Path(cfg.out)
    generator, _ = persist.load_checkpoint(args.generator or out / "generator.json", "generator")
    critic, _ = persist.load_checkpoint(args.critic or out / "critic.json", "critic")
    with locked_dir(out):
        tuned, log = dcd_finetune(generator, critic, cfg.spec(), dcfg)
        if dcfg.iterations > 0:
            spectral_normalize(tuned, SAVE_POWER_ITERS)
        persist.save_checkpoint(out / "critic_dcd.json", tuned, _metadata(cfg, "finetune", dcfg.iterations))
        persist.write_csv(
            out / "dcd_log.csv",
            ["iteration", "L", "mean_d_real", "mean_d_chain", "acceptance"],
            ([r["iteration"], r["L"], r["mean_d_real"], r["mean_d_chain"], r["acceptance"]] for r in log.rows()),
        )
    print(f"wrote {out / 'critic_dcd.json'}, {out / 'dcd_log.csv'} ({len(log)} iterations)")
    return 0


def draw_samples(generator, critic, chain: LangevinConfig, n: int, seed: int, keep_trajectory: bool = False):
    """Latents from the sampling stream, refined by ``chain``; returns the chain state."""
    z = make_rng(seed, STREAM_SAMPLE_LATENT).standard_normal((n, 2))
    rng = make_rng(seed, STREAM_SAMPLE_CHAIN)
    if chain.space == "latent":
        return run_chain(critic, z, chain, rng, generator=generator, keep_trajectory=keep_trajectory)
    return run_chain(critic, generator(z), chain, rng, keep_trajectory=keep_trajectory)


def cmd_sample(args) -> int:
    cfg = load_config(args.config, args.seed, args.out)
    seed = cfg.require_seed()
    chain, n = cfg.sample_settings()
    if args.preset is not None:
        chain = cfg.preset(args.preset, "--preset")
    if args.n is not None:
        if args.n < 0:
            raise ConfigError("--n", "must be >= 0")
        n = args.n
    out = Path(cfg.out)
    generator, _ = persist.load_checkpoint(args.generator or out / "generator.json", "generator")
    critic_path = args.critic or (out / "critic_dcd.json" if (out / "critic_dcd.json").exists() else out / "critic.json")
    critic, _ = persist.load_checkpoint(critic_path, "critic")
    with locked_dir(out):
        samples_path = out / (args.name or "samples.csv")
        if n == 0:
            persist.write_csv(samples_path, ["x0", "x1"], [])
            state = None
        else:
            state = draw_samples(generator, critic, chain, n, seed, keep_trajectory=args.trajectory)
            persist.write_csv(samples_path, ["x0", "x1"], state.samples.tolist())
        if args.trajectory:
            persist.write_csv(samples_path.with_name(samples_path.stem + "_trajectory.csv"), TRAJECTORY_HEADER, _trajectory_rows(state, chain))
    print(f"wrote {samples_path} ({n} samples, critic {critic_path})")
    return 0


TRAJECTORY_HEADER = ["chain", "step", "x0", "x1", "D", "accepted"]


def _trajectory_rows(state, chain: LangevinConfig):
    if state is None:
        return
    # a MALA rejection returns the previous state exactly, so "moved" is "accepted";
    # unadjusted chains keep every move, and step 0 is the initial state
    track = state.latents if state.latents is not None else state.positions
    for step, (pos, val) in enumerate(zip(state.positions, state.values)):
        if step and chain.mh_correction:
            moved = np.any(track[step] != track[step - 1], axis=1)
        else:
            moved = np.ones(len(pos), dtype=bool)
        for i in range(len(pos)):
            yield [i, step, pos[i, 0], pos[i, 1], val[i], int(moved[i])]


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config, args.seed, args.out)
    if args.dataset is not None:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "dataset": args.dataset})
    out = Path(cfg.out)
    samples_path = args.samples or out / "samples.csv"
    _, samples = persist.read_csv(samples_path, ["x0", "x1"])
    if len(samples) == 0:
        raise persist.CsvFormatError(f"{samples_path}: no samples to evaluate")
    report = evaluation.mode_report(cfg.spec(), samples, args.hq_sigmas)
    with locked_dir(out):
        report_path = out / (args.name or "mode_report.json")
        persist.atomic_write(report_path, report.to_json())
    print(report.to_json(), end="")
    return 0


def cmd_levelset(args) -> int:
    cfg = load_config(args.config, args.seed, args.out)
    body = dict(cfg.levelset)
    ranges = body.get("ranges", [[-3.0, 3.0], [-3.0, 3.0]])
    if args.ranges is not None:
        ranges = [args.ranges[:2], args.ranges[2:]]
    resolution = args.resolution if args.resolution is not None else body.get("resolution", 101)
    try:
        (xmin, xmax), (ymin, ymax) = ranges
    except (TypeError, ValueError):
        raise ConfigError("levelset.ranges", f"expected [[xmin, xmax], [ymin, ymax]], got {ranges!r}") from None
    if not (xmin < xmax and ymin < ymax):
        raise ConfigError("levelset.ranges", f"min must be below max on both axes, got {ranges!r}")
    res = (resolution, resolution) if isinstance(resolution, int) else tuple(resolution)
    if len(res) != 2 or min(res) < 2:
        raise ConfigError("levelset.resolution", f"need at least 2 points per axis, got {resolution!r}")
    out = Path(cfg.out)
    critic_path = args.critic or out / "critic.json"
    critic, _ = persist.load_checkpoint(critic_path, "critic")
    grid = evaluation.level_grid(critic, ((xmin, xmax), (ymin, ymax)), res)
    stem = args.name or "levelset"
    with locked_dir(out):
        pts = grid.points()
        persist.write_csv(out / f"{stem}.csv", ["x", "y", "value"], np.column_stack([pts, grid.values.ravel()]).tolist())
        persist.write_ppm(out / f"{stem}.ppm", grid.values, note=f"critic {critic_path}; x in [{xmin}, {xmax}], y in [{ymin}, {ymax}]")
    print(f"wrote {out / (stem + '.csv')}, {out / (stem + '.ppm')}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcdgan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory (default: config 'out', else ./run)")
        return p

    common(sub.add_parser("train", help="pre-train generator and critic")).set_defaults(func=cmd_train)

    p = common(sub.add_parser("finetune", help="contrastive-divergence fine-tune of the critic"))
    p.add_argument("--generator", help="generator checkpoint (default <out>/generator.json)")
    p.add_argument("--critic", help="critic checkpoint (default <out>/critic.json)")
    p.add_argument("--preset", help="Langevin preset for the inner chain")
    p.set_defaults(func=cmd_finetune)

    p = common(sub.add_parser("sample", help="generator samples refined by Langevin dynamics"))
    p.add_argument("--generator", help="generator checkpoint (default <out>/generator.json)")
    p.add_argument("--critic", help="critic checkpoint (default <out>/critic_dcd.json, else critic.json)")
    p.add_argument("--preset", help="Langevin preset (default from config, else 'latent')")
    p.add_argument("--n", type=int, help="number of samples")
    p.add_argument("--name", help="output file name (default samples.csv)")
    p.add_argument("--trajectory", action="store_true", help="also write every chain state")
    p.set_defaults(func=cmd_sample)

    p = common(sub.add_parser("evaluate", help="mode coverage report for a samples CSV"))
    p.add_argument("--samples", help="samples CSV (default <out>/samples.csv)")
    p.add_argument("--dataset", help="mixture preset, overriding the config")
    p.add_argument("--hq-sigmas", type=float, default=evaluation.HQ_SIGMAS)
    p.add_argument("--name", help="report file name (default mode_report.json)")
    p.set_defaults(func=cmd_evaluate)

    p = common(sub.add_parser("levelset", help="critic values on a lattice as CSV and PPM"))
    p.add_argument("--critic", help="critic checkpoint (default <out>/critic.json)")
    p.add_argument("--ranges", type=float, nargs=4, metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
    p.add_argument("--resolution", type=int)
    p.add_argument("--name", help="output file stem (default levelset)")
    p.set_defaults(func=cmd_levelset)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"dcdgan {args.command}: invalid config: {exc}", file=sys.stderr)
        return 2
    except (persist.CheckpointError, persist.CsvFormatError, OutputError, OSError, FloatingPointError) as exc:
        print(f"dcdgan {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
