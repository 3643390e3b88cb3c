"""Run configuration: one strict JSON document per training run.

Unknown keys anywhere in the document are errors, so typos fail loudly
instead of silently running defaults. The fully resolved configuration
has a canonical serialization whose SHA-256 digest is embedded in
checkpoints to guard resumes against mismatched setups.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json

from .edge_loss import EdgeLossParams
from .lkpp import HadcBlockSpec, LkppConfig
from .segnet import BackboneConfig, DecoderConfig, ModelConfig


class ConfigError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    data_root: str = ""
    num_classes: int = 4
    seed: int = 0
    deterministic: bool = True
    precision: str = "f32"
    batch_size: int = 4
    total_iterations: int = 2000
    base_lr: float = 2.5e-4
    poly_power: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    log_interval: int = 10
    eval_interval: int = 200
    checkpoint_interval: int = 200
    loss: EdgeLossParams = dataclasses.field(default_factory=EdgeLossParams)
    model: ModelConfig = None

    def __post_init__(self):
        if self.precision not in ("f32", "f64"):
            raise ConfigError("precision must be 'f32' or 'f64'")
        for f in ("num_classes", "batch_size", "total_iterations",
                  "log_interval", "eval_interval", "checkpoint_interval"):
            if getattr(self, f) < 1:
                raise ConfigError("%s must be >= 1" % f)
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")
        if not 0 < self.poly_power:
            raise ConfigError("poly_power must be positive")
        if self.model is None:
            object.__setattr__(self, "model",
                               ModelConfig(num_classes=self.num_classes))
        elif self.model.num_classes != self.num_classes:
            raise ConfigError("model num_classes disagrees with num_classes")


def _check_unknown(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError("%s must be a JSON object" % where)
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError("unknown key(s) in %s: %s"
                          % (where, ", ".join(unknown)))


def _get(d, key, default, kinds, where):
    v = d.get(key, default)
    if kinds is bool:
        if not isinstance(v, bool):
            raise ConfigError("%s.%s must be a boolean" % (where, key))
        return v
    if kinds is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError("%s.%s must be an integer" % (where, key))
        return v
    if kinds is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError("%s.%s must be a number" % (where, key))
        return float(v)
    if kinds is str:
        if not isinstance(v, str):
            raise ConfigError("%s.%s must be a string" % (where, key))
        return v
    raise AssertionError


def _int_tuple(d, key, default, where, length):
    v = d.get(key, list(default))
    if (not isinstance(v, list) or len(v) != length
            or any(isinstance(x, bool) or not isinstance(x, int) for x in v)):
        raise ConfigError("%s.%s must be a list of %d integers"
                          % (where, key, length))
    return tuple(v)


def _parse_loss(d):
    where = "loss"
    defaults = EdgeLossParams()
    _check_unknown(d, {f.name for f in dataclasses.fields(EdgeLossParams)},
                   where)
    try:
        return EdgeLossParams(
            kernel_scale=_get(d, "kernel_scale", defaults.kernel_scale, int, where),
            alpha=_get(d, "alpha", defaults.alpha, float, where),
            gamma=_get(d, "gamma", defaults.gamma, float, where),
            lambda_edge=_get(d, "lambda_edge", defaults.lambda_edge, float, where),
            lambda_reg=_get(d, "lambda_reg", defaults.lambda_reg, float, where),
            eps=_get(d, "eps", defaults.eps, float, where),
            normalize=_get(d, "normalize", defaults.normalize, bool, where),
            all_ones_blocks=_get(d, "all_ones_blocks", defaults.all_ones_blocks,
                                 bool, where),
            reg_kind=_get(d, "reg_kind", defaults.reg_kind, str, where),
        )
    except ValueError as e:
        raise ConfigError("loss: %s" % e) from e


def _parse_backbone(d):
    where = "model.backbone"
    _check_unknown(d, {"stem_channels", "stage_channels", "stage_blocks"},
                   where)
    defaults = BackboneConfig()
    try:
        return BackboneConfig(
            stem_channels=_get(d, "stem_channels", defaults.stem_channels,
                               int, where),
            stage_channels=_int_tuple(d, "stage_channels",
                                      defaults.stage_channels, where, 4),
            stage_blocks=_int_tuple(d, "stage_blocks", defaults.stage_blocks,
                                    where, 4),
        )
    except ValueError as e:
        raise ConfigError("%s: %s" % (where, e)) from e


def _parse_decoder(d):
    where = "model.decoder"
    _check_unknown(d, {"stage_channels"}, where)
    defaults = DecoderConfig()
    try:
        return DecoderConfig(
            stage_channels=_int_tuple(d, "stage_channels",
                                      defaults.stage_channels, where, 3))
    except ValueError as e:
        raise ConfigError("%s: %s" % (where, e)) from e


def _parse_lkpp(d, top_channels):
    where = "model.lkpp"
    _check_unknown(d, {"kernel_pairs", "mode", "branch_channels",
                       "skip_channels", "global_channels"}, where)
    pairs = d.get("kernel_pairs", [[3, 3], [3, 5], [3, 7]])
    if (not isinstance(pairs, list) or len(pairs) != 3
            or any(not isinstance(p, list) or len(p) != 2 for p in pairs)):
        raise ConfigError("%s.kernel_pairs must be three [k1, k2] pairs"
                          % where)
    mode = _get(d, "mode", "cascade", str, where)
    auto = max(top_channels // 4, 8)
    branch = _get(d, "branch_channels", 0, int, where) or auto
    skip = _get(d, "skip_channels", 0, int, where) or auto
    glob = _get(d, "global_channels", 0, int, where) or auto
    try:
        blocks = tuple(HadcBlockSpec.from_kernels(p[0], p[1], branch, mode)
                       for p in pairs)
        return LkppConfig(blocks, skip, glob)
    except ValueError as e:
        raise ConfigError("%s: %s" % (where, e)) from e


def _parse_model(d, num_classes):
    where = "model"
    _check_unknown(d, {"input_channels", "head_channels", "backbone",
                       "decoder", "lkpp"}, where)
    backbone = _parse_backbone(d.get("backbone", {}))
    decoder = _parse_decoder(d.get("decoder", {}))
    lkpp = _parse_lkpp(d.get("lkpp", {}), backbone.stage_channels[-1])
    try:
        return ModelConfig(
            num_classes=num_classes,
            input_channels=_get(d, "input_channels", 3, int, where),
            backbone=backbone,
            decoder=decoder,
            lkpp=lkpp,
            head_channels=_get(d, "head_channels", 32, int, where),
        )
    except ValueError as e:
        raise ConfigError("model: %s" % e) from e


_TOP_KEYS = {"data_root", "num_classes", "seed", "deterministic", "precision",
             "batch_size", "total_iterations", "base_lr", "poly_power",
             "adam_beta1", "adam_beta2", "adam_eps", "log_interval",
             "eval_interval", "checkpoint_interval", "loss", "model"}


def from_dict(d):
    _check_unknown(d, _TOP_KEYS, "config")
    defaults = TrainConfig(model=ModelConfig(num_classes=4))
    num_classes = _get(d, "num_classes", defaults.num_classes, int, "config")
    kw = dict(
        data_root=_get(d, "data_root", defaults.data_root, str, "config"),
        num_classes=num_classes,
        seed=_get(d, "seed", defaults.seed, int, "config"),
        deterministic=_get(d, "deterministic", defaults.deterministic, bool,
                           "config"),
        precision=_get(d, "precision", defaults.precision, str, "config"),
        batch_size=_get(d, "batch_size", defaults.batch_size, int, "config"),
        total_iterations=_get(d, "total_iterations",
                              defaults.total_iterations, int, "config"),
        base_lr=_get(d, "base_lr", defaults.base_lr, float, "config"),
        poly_power=_get(d, "poly_power", defaults.poly_power, float, "config"),
        adam_beta1=_get(d, "adam_beta1", defaults.adam_beta1, float, "config"),
        adam_beta2=_get(d, "adam_beta2", defaults.adam_beta2, float, "config"),
        adam_eps=_get(d, "adam_eps", defaults.adam_eps, float, "config"),
        log_interval=_get(d, "log_interval", defaults.log_interval, int,
                          "config"),
        eval_interval=_get(d, "eval_interval", defaults.eval_interval, int,
                           "config"),
        checkpoint_interval=_get(d, "checkpoint_interval",
                                 defaults.checkpoint_interval, int, "config"),
        loss=_parse_loss(d.get("loss", {})),
        model=_parse_model(d.get("model", {}), num_classes),
    )
    return TrainConfig(**kw)


def load_config(path):
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError("malformed JSON in %s: %s" % (path, e)) from e
    return from_dict(doc)


def to_dict(cfg):
    """Fully resolved, JSON-safe view of a configuration."""
    m = cfg.model
    return {
        "data_root": cfg.data_root,
        "num_classes": cfg.num_classes,
        "seed": cfg.seed,
        "deterministic": cfg.deterministic,
        "precision": cfg.precision,
        "batch_size": cfg.batch_size,
        "total_iterations": cfg.total_iterations,
        "base_lr": cfg.base_lr,
        "poly_power": cfg.poly_power,
        "adam_beta1": cfg.adam_beta1,
        "adam_beta2": cfg.adam_beta2,
        "adam_eps": cfg.adam_eps,
        "log_interval": cfg.log_interval,
        "eval_interval": cfg.eval_interval,
        "checkpoint_interval": cfg.checkpoint_interval,
        "loss": dataclasses.asdict(cfg.loss),
        "model": {
            "input_channels": m.input_channels,
            "head_channels": m.head_channels,
            "backbone": {
                "stem_channels": m.backbone.stem_channels,
                "stage_channels": list(m.backbone.stage_channels),
                "stage_blocks": list(m.backbone.stage_blocks),
            },
            "decoder": {"stage_channels": list(m.decoder.stage_channels)},
            "lkpp": {
                "kernel_pairs": [[b.pairs[0].kernel_a, b.pairs[0].kernel_b]
                                 for b in m.lkpp.blocks],
                "mode": m.lkpp.blocks[0].mode,
                "branch_channels": m.lkpp.blocks[0].channels,
                "skip_channels": m.lkpp.skip_channels,
                "global_channels": m.lkpp.global_channels,
            },
        },
    }


def save_config(path, cfg):
    with open(path, "w") as f:
        json.dump(to_dict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")


def config_digest(cfg):
    """SHA-256 over the canonical serialization; 32 raw bytes."""
    blob = json.dumps(to_dict(cfg), sort_keys=True,
                      separators=(",", ":")).encode()
    return hashlib.sha256(blob).digest()
