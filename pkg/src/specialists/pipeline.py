"""Staged experiment pipeline with persisted artifacts and one master seed.

Stages: generate -> train-base -> confusions -> cluster -> augment-train ->
eval, plus run-all which chains everything and writes a summary. Every stage
reads a flat `key = value` config and the artifacts of earlier stages, never
the wall clock, so re-running any stage reproduces its outputs byte for
byte. Per-stage seeds are derived as

    stage_seed = (master_seed + crc32(stage_name)) mod 2**32

so one stage can be re-run in isolation without disturbing the others.
Logs go to stderr; data goes to files only.
"""

import argparse
import math
import sys
import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path

from .augment import (
    ATTACH_POINTS,
    AUGMENTED_TAG,
    AugmentationSpec,
    augment,
    load_augmented,
    save_augmented,
    train_augmented,
)
from .confusion import (
    MODES,
    codetection_matrix,
    confusion_matrix,
    load_confusion,
    save_confusion,
    symmetrize,
    top_k,
)
from .dataset import SplitSpec, generate_synthetic, load_dataset, save_dataset, split
from .errors import (
    ConfigError,
    ConvergenceError,
    InputError,
    MissingArtifactError,
    ParseError,
)
from .evaluate import ComparisonTable, compare, evaluate_model
from .network import (
    MODEL_TAG,
    TrainConfig,
    init_network,
    load_network,
    mlp_specs,
    save_network,
    sgd_train,
)
from .partition import (
    SpectralConfig,
    load_partition,
    partition_quality,
    randomized_control,
    save_partition,
    spectral_cluster,
)

SUMMARY_TAG = "summary v1"
LOSS_TRACE_TAG = "loss v1"

EXIT_CONFIG_ERROR = 2
EXIT_MISSING_ARTIFACT = 3
EXIT_NUMERICAL_FAILURE = 4


@dataclass
class PipelineConfig:
    # synthetic dataset
    num_labels: int = 60
    planted_groups: int = 6
    feature_dim: int = 32
    examples_per_label: int = 200
    confusability: float = 0.7
    train_fraction: float = 0.7
    holdout_fraction: float = 0.15
    test_fraction: float = 0.15
    # base architecture (trunk feeds the generalist stack, then the classifier)
    trunk_dims: list[int] = field(default_factory=lambda: [1024, 1024])
    generalist_dims: list[int] = field(default_factory=lambda: [16, 16])
    # base training
    base_learning_rate: float = 0.002
    base_momentum: float = 0.9
    base_batch_size: int = 64
    base_epochs: int = 15
    # augmented training
    augmented_learning_rate: float = 0.002
    augmented_momentum: float = 0.9
    augmented_batch_size: int = 64
    augmented_epochs: int = 15
    # confusion statistics; top_k = 0 means ceil(num_labels / 6)
    modes: list[str] = field(default_factory=lambda: ["confusion", "codetection"])
    top_k: int = 0
    # spectral clustering
    spectral_groups: int = 6
    degree_epsilon: float = 1e-12
    # specialist heads
    head_dims: list[int] = field(default_factory=lambda: [8, 8])
    attach: str = "trunk"
    # evaluation; k_eval = 0 means min(50, num_labels)
    k_eval: int = 0
    # reproducibility and artifact placement
    master_seed: int = 0
    out_dir: str = "runs/desk"

    @property
    def resolved_top_k(self) -> int:
        return self.top_k if self.top_k else math.ceil(self.num_labels / 6)

    @property
    def resolved_k_eval(self) -> int:
        return self.k_eval if self.k_eval else min(50, self.num_labels)

    def validate(self) -> None:
        counts = (
            "num_labels planted_groups feature_dim examples_per_label "
            "base_batch_size augmented_batch_size spectral_groups"
        ).split()
        for name in counts:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        fracs = (self.train_fraction, self.holdout_fraction, self.test_fraction)
        if any(f <= 0 for f in fracs):
            raise ConfigError(
                "train_fraction, holdout_fraction and test_fraction must be positive"
            )
        if abs(sum(fracs) - 1.0) > 1e-12:
            raise ConfigError(
                "train_fraction + holdout_fraction + test_fraction must sum to 1, "
                f"got {sum(fracs)!r}"
            )
        if not 0.0 <= self.confusability <= 1.0:
            raise ConfigError(f"confusability must be in [0, 1], got {self.confusability}")
        if self.planted_groups > self.num_labels:
            raise ConfigError("planted_groups must not exceed num_labels")
        if not self.trunk_dims or any(d < 1 for d in self.trunk_dims):
            raise ConfigError(f"trunk_dims must be nonempty positive, got {self.trunk_dims}")
        if any(d < 1 for d in self.generalist_dims):
            raise ConfigError(f"generalist_dims must be positive, got {self.generalist_dims}")
        if not self.head_dims or any(d < 1 for d in self.head_dims):
            raise ConfigError(f"head_dims must be nonempty positive, got {self.head_dims}")
        if self.base_epochs < 0 or self.augmented_epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.base_learning_rate < 0 or self.augmented_learning_rate < 0:
            raise ConfigError("learning rates must be >= 0")
        for m in (self.base_momentum, self.augmented_momentum):
            if not 0.0 <= m < 1.0:
                raise ConfigError(f"momentum must be in [0, 1), got {m}")
        if not self.modes or any(m not in MODES for m in self.modes):
            raise ConfigError(f"modes must be a nonempty subset of {MODES}, got {self.modes}")
        if len(set(self.modes)) != len(self.modes):
            raise ConfigError(f"modes must not repeat, got {self.modes}")
        if self.attach not in ATTACH_POINTS:
            raise ConfigError(f"attach must be one of {ATTACH_POINTS}, got {self.attach!r}")
        if self.spectral_groups > self.num_labels:
            raise ConfigError("spectral_groups must not exceed num_labels")
        if self.top_k < 0 or self.resolved_top_k > self.num_labels:
            raise ConfigError(
                f"top_k must be in [1, num_labels], got {self.resolved_top_k}"
            )
        if self.k_eval < 0 or self.resolved_k_eval > self.num_labels:
            raise ConfigError(
                f"k_eval must be in [1, num_labels], got {self.resolved_k_eval}"
            )
        if self.degree_epsilon <= 0:
            raise ConfigError("degree_epsilon must be positive")
        if self.master_seed < 0:
            raise ConfigError("master_seed must be >= 0")


_LIST_INT = "list_int"
_LIST_STR = "list_str"


def _field_kinds() -> dict[str, str]:
    kinds = {}
    for f in fields(PipelineConfig):
        if f.type == "int":
            kinds[f.name] = "int"
        elif f.type == "float":
            kinds[f.name] = "float"
        elif f.type == "str":
            kinds[f.name] = "str"
        elif f.name == "modes":
            kinds[f.name] = _LIST_STR
        else:
            kinds[f.name] = _LIST_INT
    return kinds


def parse_config(path) -> PipelineConfig:
    """Read `key = value` lines; '#' starts a comment; unknown keys are errors."""
    kinds = _field_kinds()
    cfg = PipelineConfig()
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise MissingArtifactError(f"config file not found: {path}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = (s.strip() for s in line.partition("="))
        if key not in kinds:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            if kinds[key] == "int":
                setattr(cfg, key, int(value))
            elif kinds[key] == "float":
                setattr(cfg, key, float(value))
            elif kinds[key] == _LIST_INT:
                setattr(cfg, key, [int(v) for v in value.split()])
            elif kinds[key] == _LIST_STR:
                setattr(cfg, key, value.split())
            else:
                setattr(cfg, key, value)
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    cfg.validate()
    return cfg


def config_lines(cfg: PipelineConfig) -> list[str]:
    """Deterministic `key = value` echo of a config, in declaration order."""
    out = []
    for f in fields(PipelineConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, list):
            v = " ".join(str(x) for x in v)
        out.append(f"{f.name} = {v}")
    return out


def stage_seed(master_seed: int, stage: str) -> int:
    """Fixed documented mapping from (master seed, stage name) to a stage seed."""
    return (master_seed + zlib.crc32(stage.encode("ascii"))) % 2**32


class ArtifactPaths:
    """Canonical artifact layout under the config's out_dir."""

    def __init__(self, out_dir):
        self.out = Path(out_dir)
        self.dataset_dir = self.out / "dataset"
        self.train_file = self.dataset_dir / "train.txt"
        self.holdout_file = self.dataset_dir / "holdout.txt"
        self.test_file = self.dataset_dir / "test.txt"
        self.planted_file = self.dataset_dir / "planted.txt"
        self.base_dir = self.out / "base"
        self.base_manifest = self.base_dir / "manifest.txt"
        self.confusion_dir = self.out / "confusion"
        self.partitions_dir = self.out / "partitions"
        self.models_dir = self.out / "models"
        self.eval_dir = self.out / "eval"
        self.summary_file = self.out / "summary.txt"

    def confusion_file(self, mode: str) -> Path:
        return self.confusion_dir / f"{mode}.txt"

    def partition_file(self, mode: str, kind: str) -> Path:
        return self.partitions_dir / f"{mode}_{kind}.txt"

    def model_dir(self, name: str) -> Path:
        return self.models_dir / name


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _require(path: Path, hint: str) -> Path:
    if not Path(path).exists():
        raise MissingArtifactError(f"missing artifact {path} (run `{hint}` first)")
    return Path(path)


def _save_loss_trace(path: Path, trace: list[float]) -> None:
    with open(path, "w") as f:
        f.write(LOSS_TRACE_TAG + "\n")
        for v in trace:
            f.write(format(v, ".17e") + "\n")


def cmd_generate(cfg: PipelineConfig) -> None:
    paths = ArtifactPaths(cfg.out_dir)
    paths.dataset_dir.mkdir(parents=True, exist_ok=True)
    data = generate_synthetic(
        num_labels=cfg.num_labels,
        groups=cfg.planted_groups,
        feature_dim=cfg.feature_dim,
        examples_per_label=cfg.examples_per_label,
        confusability=cfg.confusability,
        seed=stage_seed(cfg.master_seed, "dataset"),
    )
    spec = SplitSpec(
        cfg.train_fraction,
        cfg.holdout_fraction,
        cfg.test_fraction,
        seed=stage_seed(cfg.master_seed, "split"),
    )
    train, holdout, test = split(data, spec)
    save_dataset(train, paths.train_file)
    save_dataset(holdout, paths.holdout_file)
    save_dataset(test, paths.test_file)
    save_partition(data.planted_partition, paths.planted_file)
    _log(
        f"generate: {len(train)}/{len(holdout)}/{len(test)} examples "
        f"(C={cfg.num_labels}, D={cfg.feature_dim}) -> {paths.dataset_dir}"
    )


def base_layer_dims(cfg: PipelineConfig) -> list[int]:
    return [cfg.feature_dim, *cfg.trunk_dims, *cfg.generalist_dims, cfg.num_labels]


def cmd_train_base(cfg: PipelineConfig) -> None:
    paths = ArtifactPaths(cfg.out_dir)
    train = load_dataset(_require(paths.train_file, "generate"))
    net = init_network(
        mlp_specs(base_layer_dims(cfg)), stage_seed(cfg.master_seed, "base-init")
    )
    train_cfg = TrainConfig(
        learning_rate=cfg.base_learning_rate,
        momentum=cfg.base_momentum,
        batch_size=cfg.base_batch_size,
        epochs=cfg.base_epochs,
        seed=stage_seed(cfg.master_seed, "base-train"),
    )
    net, trace = sgd_train(net, train, train_cfg)
    save_network(net, paths.base_dir)
    _save_loss_trace(paths.base_dir / "loss_trace.txt", trace)
    first = f"{trace[0]:.4f}" if trace else "n/a"
    last = f"{trace[-1]:.4f}" if trace else "n/a"
    _log(f"train-base: {cfg.base_epochs} epochs, mean loss {first} -> {last}")


def cmd_confusions(cfg: PipelineConfig, mode: str | None = None) -> None:
    paths = ArtifactPaths(cfg.out_dir)
    modes = [mode] if mode else cfg.modes
    base = load_network(_require(paths.base_manifest, "train-base").parent)
    holdout = load_dataset(_require(paths.holdout_file, "generate"))
    preds = top_k(base, holdout, cfg.resolved_top_k)
    paths.confusion_dir.mkdir(parents=True, exist_ok=True)
    for m in modes:
        if m == "confusion":
            cm = confusion_matrix(preds, holdout)
        else:
            cm = codetection_matrix(preds)
        save_confusion(cm, paths.confusion_file(m))
        _log(f"confusions: {m} matrix (K={preds.k}, |S|={cm.holdout_size})")


def cmd_cluster(
    cfg: PipelineConfig, mode: str | None = None, randomize_seed: int | None = None
) -> None:
    paths = ArtifactPaths(cfg.out_dir)
    modes = [mode] if mode else cfg.modes
    paths.partitions_dir.mkdir(parents=True, exist_ok=True)
    planted = (
        load_partition(paths.planted_file) if paths.planted_file.exists() else None
    )
    for m in modes:
        cm = load_confusion(_require(paths.confusion_file(m), "confusions"))
        sim = symmetrize(cm)
        spectral = spectral_cluster(
            sim.b,
            SpectralConfig(
                num_clusters=cfg.spectral_groups,
                kmeans_seed=stage_seed(cfg.master_seed, f"kmeans:{m}"),
                degree_epsilon=cfg.degree_epsilon,
            ),
        )
        save_partition(spectral, paths.partition_file(m, "spectral"))
        msg = f"cluster: {m} -> {spectral.num_clusters} clusters"
        if planted is not None:
            ari = partition_quality(spectral, planted)
            msg += f", ARI vs planted = {ari:.4f}"
        _log(msg)
        if randomize_seed is not None:
            control = randomized_control(spectral, randomize_seed)
            save_partition(control, paths.partition_file(m, "randomized"))
            _log(f"cluster: {m} randomized control written (seed {randomize_seed})")


def cmd_augment_train(cfg: PipelineConfig, partition_path) -> Path:
    paths = ArtifactPaths(cfg.out_dir)
    base = load_network(_require(paths.base_manifest, "train-base").parent)
    train = load_dataset(_require(paths.train_file, "generate"))
    label_partition = load_partition(_require(Path(partition_path), "cluster"))
    spec = AugmentationSpec(
        partition=label_partition,
        head_layer_dims=list(cfg.head_dims),
        head_seed=stage_seed(cfg.master_seed, "head-init"),
        trunk_layers=len(cfg.trunk_dims),
        attach=cfg.attach,
    )
    net = augment(base, spec)
    train_cfg = TrainConfig(
        learning_rate=cfg.augmented_learning_rate,
        momentum=cfg.augmented_momentum,
        batch_size=cfg.augmented_batch_size,
        epochs=cfg.augmented_epochs,
        seed=stage_seed(cfg.master_seed, "augment-train"),
    )
    net, trace = train_augmented(net, train, train_cfg)
    model_dir = paths.model_dir(Path(partition_path).stem)
    save_augmented(net, model_dir)
    _save_loss_trace(model_dir / "loss_trace.txt", trace)
    first = f"{trace[0]:.4f}" if trace else "n/a"
    last = f"{trace[-1]:.4f}" if trace else "n/a"
    _log(
        f"augment-train: {label_partition.provenance} partition, "
        f"{cfg.augmented_epochs} epochs, mean loss {first} -> {last} -> {model_dir}"
    )
    return model_dir


def _load_any_model(manifest_path: Path):
    manifest_path = Path(manifest_path)
    with open(manifest_path) as f:
        tag = f.readline().strip()
    if tag == MODEL_TAG:
        return load_network(manifest_path.parent)
    if tag == AUGMENTED_TAG:
        return load_augmented(manifest_path.parent)
    raise ParseError(f"{manifest_path}:1: unrecognized model tag {tag!r}")


def cmd_eval(cfg: PipelineConfig, manifest_paths: list, name: str = "comparison") -> ComparisonTable:
    paths = ArtifactPaths(cfg.out_dir)
    test = load_dataset(_require(paths.test_file, "generate"))
    reports = []
    for p in manifest_paths:
        manifest = _require(Path(p), "train-base / augment-train")
        model = _load_any_model(manifest)
        model_id = manifest.parent.name
        reports.append(evaluate_model(model, test, cfg.resolved_k_eval, model_id))
    table = compare(reports)
    paths.eval_dir.mkdir(parents=True, exist_ok=True)
    (paths.eval_dir / f"{name}.txt").write_text(table.text())
    (paths.eval_dir / f"{name}.csv").write_text(table.csv())
    _log(f"eval: wrote {paths.eval_dir / (name + '.txt')}")
    return table


def cmd_run_all(cfg: PipelineConfig) -> str:
    """Run the whole pipeline; returns the summary text (also written to disk)."""
    paths = ArtifactPaths(cfg.out_dir)
    cmd_generate(cfg)
    cmd_train_base(cfg)
    cmd_confusions(cfg)

    lines = [SUMMARY_TAG, ""]
    lines += config_lines(cfg)
    planted = load_partition(paths.planted_file)
    for mode in cfg.modes:
        cmd_cluster(cfg, mode=mode, randomize_seed=stage_seed(cfg.master_seed, f"randomize:{mode}"))
        spectral_dir = cmd_augment_train(cfg, paths.partition_file(mode, "spectral"))
        random_dir = cmd_augment_train(cfg, paths.partition_file(mode, "randomized"))
        table = cmd_eval(
            cfg,
            [
                paths.base_manifest,
                spectral_dir / "manifest.txt",
                random_dir / "manifest.txt",
            ],
            name=f"comparison_{mode}",
        )
        spectral_part = load_partition(paths.partition_file(mode, "spectral"))
        ari = partition_quality(spectral_part, planted)
        base_row, spectral_row, random_row = table.rows
        lines += [
            "",
            f"[{mode}]",
            f"ari_spectral_vs_planted = {ari:.6f}",
            f"map_base = {base_row.map_at_k:.6f}",
            f"map_spectral = {spectral_row.map_at_k:.6f}",
            f"map_randomized = {random_row.map_at_k:.6f}",
            f"multiply_adds_base = {base_row.multiply_adds}",
            f"multiply_adds_augmented = {spectral_row.multiply_adds}",
            f"overhead_ratio = {spectral_row.overhead_ratio:.3f}",
            f"spectral_beats_base = {str(spectral_row.map_at_k > base_row.map_at_k).lower()}",
            f"spectral_beats_randomized = {str(spectral_row.map_at_k > random_row.map_at_k).lower()}",
        ]
    summary = "\n".join(lines) + "\n"
    paths.summary_file.write_text(summary)
    _log(f"run-all: summary -> {paths.summary_file}")
    return summary


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="specialists",
        description="Confusion-guided specialist augmentation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.add_argument("--config", required=True, help="path to a key = value config file")
        p.add_argument("--out", default=None, help="override the config's out_dir")
        return p

    add("generate", help="write train/holdout/test splits and the planted partition")
    add("train-base", help="train and save the base classifier")
    p = add("confusions", help="compute top-K co-occurrence matrices on the holdout")
    p.add_argument("--mode", choices=list(MODES), default=None)
    p = add("cluster", help="spectrally cluster the label space")
    p.add_argument("--mode", choices=list(MODES), default=None)
    p.add_argument("--randomize", type=int, default=None, metavar="SEED",
                   help="also write a size-preserving randomized control partition")
    p = add("augment-train", help="attach specialist heads and train them")
    p.add_argument("--partition", required=True, help="label partition file")
    p = add("eval", help="evaluate models on the test split and compare")
    p.add_argument("manifests", nargs="+", help="model manifest files (first = baseline)")
    add("run-all", help="run every stage and write a summary report")

    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if args.out is not None:
            cfg.out_dir = args.out
        if args.command == "generate":
            cmd_generate(cfg)
        elif args.command == "train-base":
            cmd_train_base(cfg)
        elif args.command == "confusions":
            cmd_confusions(cfg, mode=args.mode)
        elif args.command == "cluster":
            cmd_cluster(cfg, mode=args.mode, randomize_seed=args.randomize)
        elif args.command == "augment-train":
            cmd_augment_train(cfg, args.partition)
        elif args.command == "eval":
            cmd_eval(cfg, args.manifests)
        elif args.command == "run-all":
            cmd_run_all(cfg)
    except (ConfigError, ParseError, InputError) as e:
        _log(f"error: {e}")
        return EXIT_CONFIG_ERROR
    except (MissingArtifactError, FileNotFoundError) as e:
        _log(f"error: {e}")
        return EXIT_MISSING_ARTIFACT
    except (ConvergenceError, FloatingPointError) as e:
        _log(f"error: {e}")
        return EXIT_NUMERICAL_FAILURE
    return 0


if __name__ == "__main__":
    sys.exit(main())
