"""YAML run configuration with line-aware validation errors."""

import math
from dataclasses import asdict, dataclass, field, replace

import yaml

from tlsattn.attention import VARIANTS
from tlsattn.blocks import BlockConfig
from tlsattn.errors import ConfigurationError
from tlsattn.harness.workload import PATTERNS, WorkloadSpec
from tlsattn.offload import MODES, CostModel

DEFAULT_CHANNELS = {"mha": 32, "gqa": 32, "mqa": 128}


class ConfigError(ConfigurationError):
    def __init__(self, source, line, fieldname, msg):
        where = f"{source}:{line}" if line else str(source)
        super().__init__(f"{where}: {fieldname}: {msg}")
        self.line = line
        self.field = fieldname


@dataclass
class RunConfig:
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    blocks: BlockConfig = field(default_factory=BlockConfig)
    top_tokens: int = 512
    channels: int | None = None
    d_scale: float | None = None
    calibration: str | None = None
    cost: CostModel = field(default_factory=CostModel)
    mode: str = "staggered"

    @property
    def variant(self):
        return self.workload.variant

    @property
    def d_c(self):
        if self.channels is not None:
            return self.channels
        return min(DEFAULT_CHANNELS[self.variant], self.workload.head_dim)

    def to_dict(self):
        return {
            "variant": self.variant,
            "workload": {k: v for k, v in asdict(self.workload).items() if k not in ("variant", "block_size")},
            "blocks": asdict(self.blocks),
            "tokens": {
                "budget": self.top_tokens,
                "channels": self.channels,
                "d_scale": self.d_scale,
                "calibration": self.calibration,
            },
            "cost": {
                "bandwidth": self.cost.host_device_bandwidth,
                "token_compute": self.cost.token_compute_cost,
                "index_compute": self.cost.index_compute_cost,
                "ffn": self.cost.ffn_cost,
                "bytes_per_value": self.cost.bytes_per_value,
                "overlap": self.cost.overlap_enabled,
            },
            "mode": self.mode,
        }

    def with_overrides(self, seed=None, overlap=None, mode=None):
        cfg = self
        if seed is not None:
            cfg = replace(cfg, workload=replace(cfg.workload, seed=seed))
        if overlap is not None:
            cfg = replace(cfg, cost=replace(cfg.cost, overlap_enabled=overlap))
        if mode is not None:
            cfg = replace(cfg, mode=mode)
        return cfg


_INT, _FLOAT, _BOOL, _STR = "int", "float", "bool", "str"

_SCHEMA = {
    "variant": _STR,
    "mode": _STR,
    "workload": {
        "pattern": _STR, "n": _INT, "decode_steps": _INT, "head_dim": _INT,
        "query_heads": _INT, "group_size": _INT, "seed": _INT, "epsilon": _FLOAT,
        "planted": _INT, "region_blocks": _INT,
    },
    "blocks": {"block_size": _INT, "top_blocks": _INT},
    "tokens": {"budget": _INT, "channels": _INT, "d_scale": _FLOAT, "calibration": _STR},
    "cost": {
        "bandwidth": _FLOAT, "token_compute": _FLOAT, "index_compute": _FLOAT,
        "ffn": _FLOAT, "bytes_per_value": _INT, "overlap": _BOOL,
    },
}


def _load_with_lines(text, source):
    try:
        loader = yaml.SafeLoader(text)
        try:
            node = loader.get_single_node()
            lines = {}

            def walk(nd, path):
                lines[path] = nd.start_mark.line + 1
                if isinstance(nd, yaml.MappingNode):
                    out = {}
                    for k, v in nd.value:
                        key = loader.construct_object(k)
                        out[key] = walk(v, path + (str(key),))
                    return out
                return loader.construct_object(nd, deep=True)

            data = walk(node, ()) if node is not None else {}
        finally:
            loader.dispose()
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark else None
        raise ConfigError(source, line, "<document>", f"YAML parse error: {getattr(exc, 'problem', exc)}") from None
    return data, lines


def _check_type(value, kind):
    if value is None:
        return True
    if kind == _INT:
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == _FLOAT:
        return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
    if kind == _BOOL:
        return isinstance(value, bool)
    return isinstance(value, str)


def _validate(data, schema, lines, source, path=()):
    if not isinstance(data, dict):
        name = ".".join(path) or "<document>"
        raise ConfigError(source, lines.get(path), name, "expected a mapping")
    for key, value in data.items():
        p = path + (str(key),)
        name = ".".join(p)
        if key not in schema:
            raise ConfigError(source, lines.get(p), name, "unknown field")
        kind = schema[key]
        if isinstance(kind, dict):
            _validate(value, kind, lines, source, p)
        elif not _check_type(value, kind):
            raise ConfigError(source, lines.get(p), name, f"expected {kind}, got {value!r}")


def config_from_dict(data, source="<dict>", lines=None):
    lines = lines or {}
    _validate(data, _SCHEMA, lines, source)

    def get(section, key, default):
        value = data.get(section, {}).get(key) if section else data.get(key)
        return default if value is None else value

    def fail(p, msg):
        raise ConfigError(source, lines.get(p), ".".join(p), msg)

    variant = get(None, "variant", "gqa")
    if variant == "mla":
        variant = "mqa"
    if variant not in VARIANTS:
        fail(("variant",), f"expected one of {VARIANTS} (or mla)")
    mode = get(None, "mode", "staggered")
    if mode not in MODES:
        fail(("mode",), f"expected one of {MODES}")

    block_size = get("blocks", "block_size", 64)
    top_blocks = get("blocks", "top_blocks", 128)
    for key, val in (("block_size", block_size), ("top_blocks", top_blocks)):
        if val < 1:
            fail(("blocks", key), "must be >= 1")
    blocks = BlockConfig(block_size, top_blocks)

    heads = get("workload", "query_heads", 8)
    group = get("workload", "group_size", {"mha": 1, "gqa": 4, "mqa": heads}[variant])
    wl = {
        "n": get("workload", "n", 8192),
        "decode_steps": get("workload", "decode_steps", 8),
        "head_dim": get("workload", "head_dim", 128),
        "query_heads": heads,
        "group_size": group,
        "variant": variant,
        "pattern": get("workload", "pattern", "peaked"),
        "seed": get("workload", "seed", 0),
        "epsilon": float(get("workload", "epsilon", 0.05)),
        "planted": get("workload", "planted", 32),
        "block_size": block_size,
        "region_blocks": get("workload", "region_blocks", top_blocks),
    }
    if wl["pattern"] not in PATTERNS:
        fail(("workload", "pattern"), f"expected one of {PATTERNS}")
    spec = WorkloadSpec(**wl)
    try:
        spec.validate()
    except ConfigurationError as exc:
        fail(("workload",), str(exc))

    budget = get("tokens", "budget", 512)
    if budget < 1:
        fail(("tokens", "budget"), "must be >= 1")
    channels = get("tokens", "channels", None)
    if channels is not None and not 1 <= channels <= spec.head_dim:
        fail(("tokens", "channels"), f"must lie in [1, head_dim={spec.head_dim}]")
    d_scale = get("tokens", "d_scale", None)
    if d_scale is not None and d_scale <= 0:
        fail(("tokens", "d_scale"), "must be positive")

    defaults = CostModel()
    try:
        cost = CostModel(
            host_device_bandwidth=float(get("cost", "bandwidth", defaults.host_device_bandwidth)),
            token_compute_cost=float(get("cost", "token_compute", defaults.token_compute_cost)),
            index_compute_cost=float(get("cost", "index_compute", defaults.index_compute_cost)),
            ffn_cost=float(get("cost", "ffn", defaults.ffn_cost)),
            overlap_enabled=get("cost", "overlap", defaults.overlap_enabled),
            bytes_per_value=get("cost", "bytes_per_value", defaults.bytes_per_value),
        )
    except ConfigurationError as exc:
        fail(("cost",), str(exc))

    return RunConfig(
        workload=spec,
        blocks=blocks,
        top_tokens=budget,
        channels=channels,
        d_scale=None if d_scale is None else float(d_scale),
        calibration=get("tokens", "calibration", None),
        cost=cost,
        mode=mode,
    )


def load_config(path) -> RunConfig:
    with open(path) as fh:
        text = fh.read()
    data, lines = _load_with_lines(text, path)
    return config_from_dict(data or {}, str(path), lines)
