"""Strict line-oriented run configuration.

Format: ``[section]`` headers over ``key = value`` lines; ``#`` starts a
comment.  Unknown sections or keys are hard errors, every error carries the
offending line number, and a parsed config re-emits to canonical text that
parses back to an identical structure.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


EXPERIMENT_KINDS = ("critical-scan", "entropy-derivs", "khinchin",
                    "oracle-compare", "legendre")


@dataclass
class ModelBlock:
    kind: str = "coupled-rotators"
    dimension: int = 1
    sites: int = 8
    boundary: str = "fixed"
    lam: float = 0.1          # fpu quartic coupling
    r: float = 1.0            # phi4 quadratic coefficient
    u: float = 1.0            # phi4 quartic coefficient


@dataclass
class SamplerBlock:
    vbar: float = 0.3
    epsilon: float = 0.0      # 0 -> default 1e-3 * max(|v|, 1)
    step_sigma: float = 0.15
    n_steps: int = 50_000
    burn_in: int = 5_000
    thinning: int = 10
    n_chains: int = 8
    eps_pair: bool = True
    dump_samples: bool = False


@dataclass
class DerivsBlock:
    orders: tuple = (1, 2)
    vbar_values: tuple = ()   # empty -> sampler.vbar only


@dataclass
class GridBlock:
    points_per_axis: int = 0      # grid mode when > 0
    n_samples: int = 0            # hit-or-miss mode when > 0
    bins: int = 200
    v_max: float = 0.0            # 0 -> model attainable max
    range_lo: float = 0.0
    range_hi: float = 0.0         # lo == hi -> model default ranges


@dataclass
class WindowBlock:
    lo: float = 0.05
    hi: float = 0.95
    n_random_seeds: int = 10_000
    structured: bool = True


@dataclass
class KhinchinBlock:
    base: str = "uniform"
    ladder: tuple = (16, 32, 64, 128, 256, 512, 1024, 2048, 4096)
    trials: int = 100_000


@dataclass
class LegendreBlock:
    source: str = "harmonic-limit"   # or "oracle"
    vbar_lo: float = 0.05
    vbar_hi: float = 3.0
    n_points: int = 400


@dataclass
class RunConfig:
    kind: str
    seed: int
    out: str = "out"
    threads: int = 1
    model: ModelBlock = field(default_factory=ModelBlock)
    sampler: SamplerBlock = field(default_factory=SamplerBlock)
    derivs: DerivsBlock = field(default_factory=DerivsBlock)
    grid: GridBlock = field(default_factory=GridBlock)
    window: WindowBlock = field(default_factory=WindowBlock)
    khinchin: KhinchinBlock = field(default_factory=KhinchinBlock)
    legendre: LegendreBlock = field(default_factory=LegendreBlock)


_SECTIONS = {
    "model": ModelBlock,
    "sampler": SamplerBlock,
    "derivs": DerivsBlock,
    "grid": GridBlock,
    "window": WindowBlock,
    "khinchin": KhinchinBlock,
    "legendre": LegendreBlock,
}

_REQUIRED = {
    "critical-scan": ("model", "window"),
    "entropy-derivs": ("model", "sampler"),
    "khinchin": ("khinchin",),
    "oracle-compare": ("model", "sampler", "grid"),
    "legendre": ("legendre",),
}


def _parse_scalar(text: str, target_type, line: int):
    if target_type is bool:
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"expected a boolean, got '{text}'", line)
    if target_type is int:
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"expected an integer, got '{text}'", line) from None
    if target_type is float:
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"expected a number, got '{text}'", line) from None
    if target_type is tuple:
        if not text.strip():
            return ()
        try:
            parts = [p.strip() for p in text.split(",") if p.strip()]
            if all(("." not in p and "e" not in p.lower()) for p in parts):
                return tuple(int(p) for p in parts)
            return tuple(float(p) for p in parts)
        except ValueError:
            raise ConfigError(f"expected a comma list, got '{text}'", line) from None
    return text


def parse_config(text: str) -> RunConfig:
    """Parse and validate; unknown sections/keys and bad values are errors."""
    run_keys: dict = {}
    blocks: dict = {}
    section = None
    seen_sections = set()
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError("malformed section header", ln)
            name = line[1:-1].strip()
            if name == "run":
                section = "run"
            elif name in _SECTIONS:
                section = name
                blocks.setdefault(name, {})
            else:
                raise ConfigError(f"unknown section [{name}]", ln)
            seen_sections.add(name)
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", ln)
        if section is None:
            raise ConfigError("key outside of any [section]", ln)
        key, val = (part.strip() for part in line.split("=", 1))
        if section == "run":
            run_keys[key] = (val, ln)
        else:
            cls = _SECTIONS[section]
            names = {f.name: f.type for f in fields(cls)}
            if key not in names:
                raise ConfigError(f"unknown key '{key}' in [{section}]", ln)
            ftype = type(getattr(cls(), key))
            blocks[section][key] = _parse_scalar(val, ftype, ln)

    allowed_run = {"kind", "seed", "out", "threads"}
    for key, (_, ln) in run_keys.items():
        if key not in allowed_run:
            raise ConfigError(f"unknown key '{key}' in [run]", ln)
    if "kind" not in run_keys:
        raise ConfigError("missing required key 'kind' in [run]")
    if "seed" not in run_keys:
        raise ConfigError("missing required key 'seed' in [run] "
                          "(wall-clock seeding is not supported)")
    kind = run_keys["kind"][0]
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"unknown experiment kind '{kind}'",
                          run_keys["kind"][1])
    seed = _parse_scalar(run_keys["seed"][0], int, run_keys["seed"][1])
    out = run_keys.get("out", ("out", 0))[0]
    threads = _parse_scalar(run_keys["threads"][0], int,
                            run_keys["threads"][1]) \
        if "threads" in run_keys else 1

    for required in _REQUIRED[kind]:
        if required not in seen_sections:
            raise ConfigError(
                f"experiment '{kind}' requires a [{required}] section")

    cfg = RunConfig(kind=kind, seed=seed, out=out, threads=threads)
    for name, values in blocks.items():
        setattr(cfg, name, _SECTIONS[name](**values))
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    m = cfg.model
    if m.kind not in ("harmonic", "coupled-rotators", "fpu", "phi4"):
        raise ConfigError(f"model.kind '{m.kind}' is not a bundled model")
    if m.dimension not in (1, 2):
        raise ConfigError("model.dimension must be 1 or 2")
    if m.sites < 1:
        raise ConfigError("model.sites must be >= 1")
    if m.boundary not in ("fixed", "periodic"):
        raise ConfigError("model.boundary must be fixed or periodic")
    if m.u <= 0:
        raise ConfigError("model.u must be > 0")
    s = cfg.sampler
    if s.epsilon < 0:
        raise ConfigError("sampler.epsilon must be >= 0 (0 selects default)")
    if s.step_sigma <= 0:
        raise ConfigError("sampler.step_sigma must be > 0")
    if s.n_steps <= 0 or s.burn_in < 0 or s.thinning < 1 or s.n_chains < 1:
        raise ConfigError("sampler counts must be positive")
    for k in cfg.derivs.orders:
        if k not in (1, 2, 3, 4):
            raise ConfigError("derivs.orders entries must be in 1..4")
    if cfg.window.lo >= cfg.window.hi:
        raise ConfigError("window.lo must be < window.hi")
    if cfg.khinchin.base not in ("uniform", "gaussian"):
        raise ConfigError("khinchin.base must be uniform or gaussian")
    if cfg.khinchin.trials < 10_000:
        raise ConfigError("khinchin.trials must be >= 1e4")
    if cfg.legendre.source not in ("harmonic-limit", "oracle"):
        raise ConfigError("legendre.source must be harmonic-limit or oracle")
    if cfg.grid.points_per_axis and cfg.grid.n_samples:
        raise ConfigError("grid: give points_per_axis or n_samples, not both")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(cfg: RunConfig) -> str:
    """Canonical text form; parse(format(cfg)) == cfg."""
    lines = ["[run]", f"kind = {cfg.kind}", f"seed = {cfg.seed}",
             f"out = {cfg.out}", f"threads = {cfg.threads}"]
    for name in _SECTIONS:
        block = getattr(cfg, name)
        lines.append("")
        lines.append(f"[{name}]")
        for f in fields(block):
            lines.append(f"{f.name} = {_fmt(getattr(block, f.name))}")
    return "\n".join(lines) + "\n"
