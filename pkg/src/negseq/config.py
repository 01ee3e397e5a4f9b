"""Flat key=value experiment configuration.

Config files are diff-able text: one ``section.key = value`` pair per
line, ``#`` comments allowed. Every key can be overridden on the command
line by a flag of the same name (``--train.lr 0.003``). The NEGSEQ_CONFIG
environment variable may supply the config path and nothing else.
"""

import os

from .data import InputFormat
from .model import ModelConfig
from .samplers import Method, SamplerConfig

CONFIG_ENV_VAR = "NEGSEQ_CONFIG"

# key -> (type tag, default); tags: str, int, float, bool, opt_float,
# opt_int, float_list
SCHEMA = {
    "data.path": ("str", None),
    "data.format": ("str", "tsv"),
    "data.user_col": ("int", 0),
    "data.item_col": ("int", 1),
    "data.time_col": ("int", 2),
    "data.skip_header": ("bool", False),
    "data.min_len": ("int", 3),
    "split.q_train": ("float", 0.8),
    "split.q_val": ("float", 0.9),
    "cohorts.theta_head": ("float", 0.5),
    "cohorts.theta_mid": ("float", 0.8),
    "model.embed_dim": ("int", 64),
    "model.num_blocks": ("int", 2),
    "model.num_heads": ("int", 1),
    "model.max_seq_len": ("int", 50),
    "model.dropout": ("float", 0.2),
    "model.ffn_hidden": ("opt_int", None),
    "sampler.method": ("str", "random"),
    "sampler.n_negatives": ("int", 128),
    "sampler.k_retain": ("int", 32),
    "sampler.gamma": ("opt_float", None),
    "sampler.batch_to_random_ratio": ("opt_float", 10.0),
    "buffer.osf": ("opt_int", None),   # None = per-method default
    "train.epochs": ("int", 200),
    "train.eval_every": ("int", 5),
    "train.lr": ("float_list", (1e-3,)),
    "train.batch_size": ("int", 128),
    "train.repeats": ("int", 20),
    "train.seed": ("int", 0),
    "train.threaded": ("bool", False),
    "eval.k": ("int", 10),
    "eval.exclude_history": ("bool", True),
}

# mixed pools are costlier to generate, so they default to a deeper buffer
METHOD_DEFAULT_OSF = {
    Method.MIXED: 4,
    Method.ADAPTIVE_MIXED: 4,
}


class ConfigError(ValueError):
    pass


def _parse_bool(raw):
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {raw!r}")


def parse_value(key, raw):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    tag = SCHEMA[key][0]
    raw = raw.strip()
    try:
        if tag == "str":
            return raw
        if tag == "int":
            return int(raw)
        if tag == "float":
            return float(raw)
        if tag == "bool":
            return _parse_bool(raw)
        if tag in ("opt_float", "opt_int"):
            if raw.lower() in ("none", ""):
                return None
            return float(raw) if tag == "opt_float" else int(raw)
        if tag == "float_list":
            return tuple(float(tok) for tok in raw.split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    raise AssertionError(tag)


def load_config(path=None, overrides=None):
    """Defaults, then file pairs, then overrides; returns a full dict."""
    cfg = {key: default for key, (_, default) in SCHEMA.items()}
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR) or None
    if path:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                key, raw = line.split("=", 1)
                cfg[key.strip()] = parse_value(key.strip(), raw)
    for key, raw in (overrides or {}).items():
        cfg[key] = parse_value(key, raw) if isinstance(raw, str) else raw
    return cfg


def input_format(cfg):
    return InputFormat(kind=cfg["data.format"],
                       user_col=cfg["data.user_col"],
                       item_col=cfg["data.item_col"],
                       time_col=cfg["data.time_col"],
                       skip_header=cfg["data.skip_header"])


def model_config(cfg, corpus_size):
    return ModelConfig(embed_dim=cfg["model.embed_dim"],
                       num_blocks=cfg["model.num_blocks"],
                       num_heads=cfg["model.num_heads"],
                       max_seq_len=cfg["model.max_seq_len"],
                       dropout=cfg["model.dropout"],
                       ffn_hidden=cfg["model.ffn_hidden"],
                       corpus_size=corpus_size)


def sampler_config(cfg, method=None):
    return SamplerConfig(
        method=Method(method or cfg["sampler.method"]),
        n_negatives=cfg["sampler.n_negatives"],
        k_retain=cfg["sampler.k_retain"],
        gamma=cfg["sampler.gamma"],
        batch_to_random_ratio=cfg["sampler.batch_to_random_ratio"])


def buffer_osf(cfg, method):
    if cfg["buffer.osf"] is not None:
        return cfg["buffer.osf"]
    return METHOD_DEFAULT_OSF.get(Method(method), 1)
