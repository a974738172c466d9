"""Flat key=value run configuration.

One ``key = value`` pair per line, ``#`` starts a comment, unknown keys are
hard errors so typos never silently fall back to defaults.  Every key has a
documented default except ``seed``, which must come from the file or from the
command line: runs without an explicit seed are not reproducible runs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .datagen import GenSpec
from .errors import ConfigError
from .gumbel import TemperatureSchedule
from .modality import ModalitySpec
from .model import ModelConfig
from .objective import CostModel
from .training import TrainConfig


def _parse_bool(raw):
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _parse_int(raw):
    try:
        return int(raw, 0)
    except ValueError as exc:
        raise ConfigError(f"expected an integer, got {raw!r}") from exc


def _parse_float(raw):
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"expected a number, got {raw!r}") from exc


def _parse_str(raw):
    return raw.strip()


# key -> (converter, default).  Defaults mirror the dataclass defaults they
# feed; they are spelled out here so `default_config_text` can document them.
SCHEMA = {
    "seed": (_parse_int, None),
    # generator
    "n_classes": (_parse_int, 4),
    "n_videos": (_parse_int, 200),
    "segments": (_parse_int, 10),
    "signal_margin": (_parse_float, 2.0),
    "noise_sigma": (_parse_float, 0.5),
    "proxy_corruption": (_parse_float, 0.05),
    "modality.count": (_parse_int, 2),
    # model widths and ablations
    "extractor_hidden": (_parse_int, 64),
    "feature_width": (_parse_int, 128),
    "lstm_hidden": (_parse_int, 64),
    "recog_hidden": (_parse_int, 128),
    "no_lstm": (_parse_bool, False),
    "joint_skip": (_parse_bool, False),
    # training schedule and optimizers
    "warmup_epochs": (_parse_int, 5),
    "alternate_epochs": (_parse_int, 20),
    "finetune_epochs": (_parse_int, 10),
    "train_segments": (_parse_int, 5),
    "eval_segments": (_parse_int, 10),
    "batch_size": (_parse_int, 8),
    "policy_lr": (_parse_float, 1e-3),
    "policy_beta1": (_parse_float, 0.9),
    "policy_beta2": (_parse_float, 0.999),
    "recog_lr": (_parse_float, 1e-2),
    "recog_momentum": (_parse_float, 0.9),
    "recog_weight_decay": (_parse_float, 1e-4),
    "tau0": (_parse_float, 5.0),
    "tau_anneal": (_parse_float, 0.965),
    "tau_min": (_parse_float, 0.05),
    # objective
    "gamma": (_parse_float, 10.0),
    # evaluation
    "eval_stochastic": (_parse_bool, False),
}

# per-modality overrides: modality.<k>.<field>
MODALITY_FIELDS = {
    "name": _parse_str,
    "recog_dim": _parse_int,
    "policy_dim": _parse_int,
    "lam": _parse_float,
    "recog_cost": _parse_float,
    "policy_cost": _parse_float,
    "proxy": _parse_bool,
    "informative_prob": _parse_float,
}

_MODALITY_KEY = re.compile(r"modality\.(\d+)\.([a-z_]+)$")

# the stock two-stream setup; extra modalities start from the generic row
_MODALITY_DEFAULTS = [
    dict(name="hi", recog_dim=24, policy_dim=8, lam=0.04,
         recog_cost=1.0, policy_cost=0.076, proxy=True, informative_prob=0.4),
    dict(name="lo", recog_dim=16, policy_dim=6, lam=0.018,
         recog_cost=0.45, policy_cost=0.076, proxy=False, informative_prob=0.6),
]
_MODALITY_GENERIC = dict(
    name="", recog_dim=16, policy_dim=6, lam=0.02,
    recog_cost=0.45, policy_cost=0.076, proxy=False, informative_prob=0.5,
)


def parse_config(text):
    """Raw key -> string map; rejects malformed lines and unknown keys."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {line.strip()!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        raw = raw.strip()
        if not raw:
            raise ConfigError(f"line {lineno}: empty value for {key!r}")
        m = _MODALITY_KEY.match(key)
        if m is None and key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if m is not None and m.group(2) not in MODALITY_FIELDS:
            raise ConfigError(f"line {lineno}: unknown modality field {m.group(2)!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = raw
    return values


@dataclass
class Settings:
    """Everything a run needs, typed and validated."""

    seed: int
    modalities: list
    informative_probs: list
    gen: GenSpec
    model: ModelConfig
    train: TrainConfig
    cost: CostModel
    eval_stochastic: bool


def build_settings(text="", seed_override=None):
    """Parse config text and assemble the typed bundle.

    ``seed_override`` (the command line's --seed) wins over the file; a run
    with neither is rejected.
    """
    raw = parse_config(text)

    def get(key):
        conv, default = SCHEMA[key]
        if key in raw:
            try:
                return conv(raw[key])
            except ConfigError as exc:
                raise ConfigError(f"key {key!r}: {exc}") from exc
        return default

    seed = get("seed")
    if seed_override is not None:
        seed = int(seed_override)
    if seed is None:
        raise ConfigError("a seed is required: set seed= in the config or pass --seed")

    count = get("modality.count")
    if count < 1:
        raise ConfigError(f"modality.count must be positive, got {count}")
    fields = []
    for k in range(count):
        base = dict(_MODALITY_DEFAULTS[k]) if k < len(_MODALITY_DEFAULTS) else dict(
            _MODALITY_GENERIC, name=f"mod{k}"
        )
        fields.append(base)
    for key, value in raw.items():
        m = _MODALITY_KEY.match(key)
        if m is None:
            continue
        k = int(m.group(1))
        if k >= count:
            raise ConfigError(
                f"key {key!r}: modality index {k} out of range (count is {count})"
            )
        field = m.group(2)
        try:
            fields[k][field] = MODALITY_FIELDS[field](value)
        except ConfigError as exc:
            raise ConfigError(f"key {key!r}: {exc}") from exc

    informative_probs = [f.pop("informative_prob") for f in fields]
    modalities = [ModalitySpec(**f) for f in fields]

    gen = GenSpec(
        modalities=modalities,
        informative_probs=informative_probs,
        n_classes=get("n_classes"),
        n_videos=get("n_videos"),
        segments=get("segments"),
        signal_margin=get("signal_margin"),
        noise_sigma=get("noise_sigma"),
        proxy_corruption=get("proxy_corruption"),
        seed=seed,
    )
    model = ModelConfig(
        extractor_hidden=get("extractor_hidden"),
        feature_width=get("feature_width"),
        lstm_hidden=get("lstm_hidden"),
        recog_hidden=get("recog_hidden"),
        no_lstm=get("no_lstm"),
        joint_skip=get("joint_skip"),
    )
    schedule = TemperatureSchedule(
        tau0=get("tau0"), anneal_factor=get("tau_anneal"), tau_min=get("tau_min")
    )
    train = TrainConfig(
        warmup_epochs=get("warmup_epochs"),
        alternate_epochs=get("alternate_epochs"),
        finetune_epochs=get("finetune_epochs"),
        train_segments=get("train_segments"),
        eval_segments=get("eval_segments"),
        batch_size=get("batch_size"),
        policy_lr=get("policy_lr"),
        policy_betas=(get("policy_beta1"), get("policy_beta2")),
        recog_lr=get("recog_lr"),
        recog_momentum=get("recog_momentum"),
        recog_weight_decay=get("recog_weight_decay"),
        schedule=schedule,
        seed=seed,
    )
    cost = CostModel(
        lams=[m.lam for m in modalities],
        gamma=get("gamma"),
        train_segments=train.train_segments,
    )
    return Settings(
        seed=seed,
        modalities=modalities,
        informative_probs=informative_probs,
        gen=gen,
        model=model,
        train=train,
        cost=cost,
        eval_stochastic=get("eval_stochastic"),
    )


def default_config_text():
    """A commented config file listing every key at its default."""
    lines = ["# run configuration: key = value, '#' starts a comment", "# seed = <int>  (required here or via --seed)"]
    for key, (conv, default) in SCHEMA.items():
        if key == "seed":
            continue
        lines.append(f"{key} = {default}")
    lines.append("# per-modality overrides: modality.<k>.<field>, e.g.")
    for field in MODALITY_FIELDS:
        lines.append(f"#   modality.0.{field} = ...")
    return "\n".join(lines) + "\n"
