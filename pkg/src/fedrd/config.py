"""YAML experiment configs: validation, defaults and sweep expansion.

A config has three sections whose keys mirror the dataclass fields::

    federation: {num_clients, rounds, local_epochs, batch_size, learning_rate,
                 seed, held_out_domain, strategy?, tau?, mu?}
    model:      {hidden_dims, input_dim?, num_classes?, domain_layer_index?, activation?}
    data:       {num_domains, num_classes, samples_per_domain, domain_rotation_degrees,
                 class_center_radius, noise_sigma, dirichlet_alpha, feature_dim?}

``model.input_dim`` and ``model.num_classes`` default to the data section's
``feature_dim`` and ``num_classes``.
"""

from __future__ import annotations

import copy
import itertools
from typing import Any, Mapping

import yaml

from .aggregation import DEFAULT_MU
from .data import SynthConfig
from .debias import DEFAULT_TAU
from .errors import ConfigError
from .federation import FederationConfig
from .numerics import ModelSpec

_REQUIRED = object()

# key -> (kind, default); kind is one of int, float, str, "ints", "floats"
SCHEMA: dict[str, dict[str, tuple[Any, Any]]] = {
    "federation": {
        "num_clients": (int, _REQUIRED),
        "rounds": (int, _REQUIRED),
        "local_epochs": (int, _REQUIRED),
        "batch_size": (int, _REQUIRED),
        "learning_rate": (float, _REQUIRED),
        "seed": (int, _REQUIRED),
        "held_out_domain": (int, _REQUIRED),
        "strategy": (str, "fedrd"),
        "tau": (float, DEFAULT_TAU),
        "mu": (float, DEFAULT_MU),
    },
    "model": {
        "hidden_dims": ("ints", _REQUIRED),
        "input_dim": (int, None),
        "num_classes": (int, None),
        "domain_layer_index": (int, 0),
        "activation": (str, "relu"),
    },
    "data": {
        "num_domains": (int, _REQUIRED),
        "num_classes": (int, _REQUIRED),
        "samples_per_domain": (int, _REQUIRED),
        "domain_rotation_degrees": ("floats", _REQUIRED),
        "class_center_radius": (float, _REQUIRED),
        "noise_sigma": (float, _REQUIRED),
        "dirichlet_alpha": (float, _REQUIRED),
        "feature_dim": (int, 2),
    },
}


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_number(v) -> bool:
    return _is_int(v) or isinstance(v, float)


def _check_type(path: str, kind, value):
    if kind is int:
        if not _is_int(value):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if not _is_number(value):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    elem = int if kind == "ints" else float
    if not isinstance(value, list):
        raise ConfigError(f"{path}: expected a list, got {value!r}")
    return [_check_type(f"{path}[{i}]", elem, v) for i, v in enumerate(value)]


def load_document(text: str) -> dict:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping with federation/model/data sections")
    return doc


def _resolve(doc: Mapping) -> dict[str, dict[str, Any]]:
    unknown = set(doc) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(map(str, unknown)))}")
    out: dict[str, dict[str, Any]] = {}
    for section, fields in SCHEMA.items():
        raw = doc.get(section)
        if raw is None:
            raise ConfigError(f"missing required section '{section}'")
        if not isinstance(raw, dict):
            raise ConfigError(f"section '{section}' must be a mapping")
        extra = set(raw) - set(fields)
        if extra:
            raise ConfigError(
                f"unknown key(s) in '{section}': {', '.join(sorted(map(str, extra)))}"
            )
        resolved = {}
        for key, (kind, default) in fields.items():
            if key in raw:
                resolved[key] = _check_type(f"{section}.{key}", kind, raw[key])
            elif default is _REQUIRED:
                raise ConfigError(f"missing required key '{key}' in section '{section}'")
            else:
                resolved[key] = default
        out[section] = resolved
    return out


def parse_config_dict(doc: Mapping) -> tuple[FederationConfig, SynthConfig]:
    r = _resolve(doc)
    fed, mod, dat = r["federation"], r["model"], r["data"]
    try:
        synth = SynthConfig(
            num_domains=dat["num_domains"],
            num_classes=dat["num_classes"],
            samples_per_domain=dat["samples_per_domain"],
            domain_rotation_degrees=tuple(dat["domain_rotation_degrees"]),
            class_center_radius=dat["class_center_radius"],
            noise_sigma=dat["noise_sigma"],
            dirichlet_alpha=dat["dirichlet_alpha"],
            feature_dim=dat["feature_dim"],
        )
    except ValueError as exc:
        raise ConfigError(f"data: {exc}") from None

    input_dim = mod["input_dim"] if mod["input_dim"] is not None else synth.feature_dim
    num_classes = mod["num_classes"] if mod["num_classes"] is not None else synth.num_classes
    if input_dim != synth.feature_dim:
        raise ConfigError(
            f"model.input_dim={input_dim} disagrees with data.feature_dim={synth.feature_dim}"
        )
    if num_classes != synth.num_classes:
        raise ConfigError(
            f"model.num_classes={num_classes} disagrees with data.num_classes={synth.num_classes}"
        )
    try:
        spec = ModelSpec(
            input_dim=input_dim,
            hidden_dims=tuple(mod["hidden_dims"]),
            num_classes=num_classes,
            domain_layer_index=mod["domain_layer_index"],
            activation=mod["activation"],
        )
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from None

    if fed["learning_rate"] <= 0:
        raise ConfigError("federation.learning_rate must be > 0")
    if not 0 <= fed["held_out_domain"] < synth.num_domains:
        raise ConfigError(
            f"federation.held_out_domain={fed['held_out_domain']} is not a domain id "
            f"in [0, {synth.num_domains})"
        )
    try:
        cfg = FederationConfig(
            num_clients=fed["num_clients"],
            rounds=fed["rounds"],
            local_epochs=fed["local_epochs"],
            batch_size=fed["batch_size"],
            learning_rate=fed["learning_rate"],
            model=spec,
            seed=fed["seed"],
            held_out_domain=fed["held_out_domain"],
            strategy=fed["strategy"],
            tau=fed["tau"],
            mu=fed["mu"],
        )
    except ConfigError as exc:
        raise ConfigError(f"federation: {exc}") from None
    return cfg, synth


def parse_config(text: str) -> tuple[FederationConfig, SynthConfig]:
    return parse_config_dict(load_document(text))


def _is_sweep_axis(kind, value) -> bool:
    if kind in ("ints", "floats"):
        return isinstance(value, list) and bool(value) and all(isinstance(v, list) for v in value)
    return isinstance(value, list)


def expand_sweep(doc: Mapping) -> list[tuple[str, dict]]:
    """Cross-product of every list-valued scalar field (or list-of-lists field).

    Returns ``(label, document)`` pairs; a document with no axes yields one
    entry labelled ``"base"``.
    """
    axes: list[tuple[str, str, list]] = []
    for section, fields in SCHEMA.items():
        raw = doc.get(section)
        if not isinstance(raw, dict):
            continue
        for key, value in raw.items():
            kind = fields.get(key, (None, None))[0]
            if kind is not None and _is_sweep_axis(kind, value):
                if not value:
                    raise ConfigError(f"{section}.{key}: sweep list is empty")
                axes.append((section, key, value))
    if not axes:
        return [("base", copy.deepcopy(dict(doc)))]
    runs = []
    for combo in itertools.product(*(vals for _, _, vals in axes)):
        d = copy.deepcopy(dict(doc))
        parts = []
        for (section, key, _), value in zip(axes, combo):
            d[section][key] = value
            shown = "-".join(map(str, value)) if isinstance(value, list) else str(value)
            parts.append(f"{key}={shown}")
        runs.append(("_".join(parts), d))
    return runs


def config_echo(cfg: FederationConfig, synth: SynthConfig) -> dict:
    spec = cfg.model
    return {
        "federation": {
            "num_clients": cfg.num_clients,
            "rounds": cfg.rounds,
            "local_epochs": cfg.local_epochs,
            "batch_size": cfg.batch_size,
            "learning_rate": cfg.learning_rate,
            "seed": cfg.seed,
            "held_out_domain": cfg.held_out_domain,
            "strategy": cfg.strategy,
            "tau": cfg.tau,
            "mu": cfg.mu,
        },
        "model": {
            "hidden_dims": list(spec.hidden_dims),
            "input_dim": spec.input_dim,
            "num_classes": spec.num_classes,
            "domain_layer_index": spec.domain_layer_index,
            "activation": spec.activation,
        },
        "data": {
            "num_domains": synth.num_domains,
            "num_classes": synth.num_classes,
            "samples_per_domain": synth.samples_per_domain,
            "domain_rotation_degrees": list(synth.domain_rotation_degrees),
            "class_center_radius": synth.class_center_radius,
            "noise_sigma": synth.noise_sigma,
            "dirichlet_alpha": synth.dirichlet_alpha,
            "feature_dim": synth.feature_dim,
        },
    }
