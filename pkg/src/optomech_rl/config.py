"""Experiment configuration: INI-style files, named presets, strict validation."""

from __future__ import annotations

import configparser
import io
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .hilbert import SystemConfig
from .rl import DDPGConfig
from .targets import TargetSpec, format_target, parse_target


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending key."""


@dataclass
class ExperimentConfig:
    system: SystemConfig
    target: TargetSpec
    T: float = 50.0
    S: int = 50
    omega_max: float = 0.2
    fidelity_mode: str = "reduced"
    n_sub: int | None = None
    rl: DDPGConfig = field(default_factory=DDPGConfig)
    out_dir: str = "runs/default"
    name: str = ""


_SINGLE_KEYS = {
    "omega_m": float, "g0": float, "kappa": float, "gamma_m": float, "n_th": float, "nc": int, "nm": int,
}
_DOUBLE_KEYS = {
    "omega_m1": float, "omega_m2": float, "g01": float, "g02": float, "kappa": float,
    "gamma_m1": float, "gamma_m2": float, "n_th1": float, "n_th2": float, "nc": int, "nm1": int, "nm2": int,
}
_SINGLE_DEFAULTS = dict(omega_m=1.0, g0=0.839, kappa=0.002, gamma_m=0.0004, n_th=0.0, nc=3, nm=10)
_DOUBLE_DEFAULTS = dict(omega_m1=1.0, omega_m2=0.918, g01=1.0, g02=0.918, kappa=0.002, gamma_m1=0.0004,
                        gamma_m2=0.0004, n_th1=0.0, n_th2=0.0, nc=3, nm1=5, nm2=5)
_NONNEG = {"kappa", "gamma_m", "gamma_m1", "gamma_m2", "n_th", "n_th1", "n_th2"}
_POSITIVE = {"omega_m", "omega_m1", "omega_m2"}
_SCHEDULE_KEYS = {"T": float, "S": int, "omega_max": float, "n_sub": int}
_RL_TYPES = {f.name: f.type for f in fields(DDPGConfig)}


def _single(**kw):
    d = dict(_SINGLE_DEFAULTS, **kw)
    return SystemConfig.single(d["g0"], omega_m=d["omega_m"], kappa=d["kappa"], gamma_m=d["gamma_m"],
                               n_th=d["n_th"], nc=d["nc"], nm=d["nm"])


def _double(**kw):
    d = dict(_DOUBLE_DEFAULTS, **kw)
    return SystemConfig.double(d["g01"], d["g02"], omega_m1=d["omega_m1"], omega_m2=d["omega_m2"],
                               kappa=d["kappa"], gamma_m1=d["gamma_m1"], gamma_m2=d["gamma_m2"],
                               n_th1=d["n_th1"], n_th2=d["n_th2"], nc=d["nc"], nm1=d["nm1"], nm2=d["nm2"])


def _preset_table():
    # built-in parameter sets; frequencies in units of omega_M (omega_M1)
    return {
        "fock2": dict(system=_single(g0=0.839, nm=10), target="fock:2", T=50.0, S=50),
        "fock6": dict(system=_single(g0=1.752, nm=13), target="fock:6", T=98.0, S=98),
        "sup02": dict(system=_single(g0=0.78, nm=11), target="sup:0,2", T=50.0, S=50),
        "sup06": dict(system=_single(g0=1.716, nm=13), target="sup:0,6", T=98.0, S=98),
        "sup12": dict(system=_single(g0=0.89, nm=10), target="sup:1,2", T=50.0, S=50),
        "bell_phi_plus": dict(system=_double(g01=1.0, g02=0.918, omega_m2=0.918, kappa=0.002,
                                             gamma_m1=0.0004, gamma_m2=0.0004),
                              target="bell:phi+", T=100.0, S=100, capacity=20_000),
        "bell_psi_plus": dict(system=_double(g01=1.0, g02=0.595, omega_m2=0.598, kappa=0.001,
                                             gamma_m1=0.0002, gamma_m2=0.0002),
                              target="bell:psi+", T=100.0, S=100, capacity=20_000),
    }


PRESETS = tuple(_preset_table())


def preset_config(name: str) -> ExperimentConfig:
    table = _preset_table()
    if name not in table:
        raise ConfigError(f"unknown preset {name!r}; expected one of {', '.join(table)}")
    p = table[name]
    rl = DDPGConfig(capacity=p.get("capacity", DDPGConfig.capacity))
    return ExperimentConfig(system=p["system"], target=parse_target(p["target"]), T=p["T"], S=p["S"],
                            rl=rl, out_dir=f"runs/{name}", name=name)


# ---------------------------------------------------------------------------
# parsing


def _convert(section, key, raw, typ, domain=None):
    try:
        if typ in (int, "int"):
            val = int(raw)
        elif typ in (float, "float"):
            val = float(raw)
        elif typ in (str, "str"):
            val = str(raw)
        elif typ in ("tuple[int, ...]",):
            val = tuple(int(x) for x in str(raw).replace(",", " ").split())
        else:
            raise TypeError(typ)
    except (TypeError, ValueError):
        raise ConfigError(f"[{section}] {key} = {raw!r}: expected {domain or getattr(typ, '__name__', typ)}") from None
    return val


def _system_from_section(sec, base: SystemConfig | None) -> SystemConfig:
    items = dict(sec)
    kind = items.pop("kind", None) or (base.kind if base is not None else None)
    if kind is None:
        raise ConfigError("[system] kind is required: expected 'single' or 'double'")
    if kind not in ("single", "double"):
        raise ConfigError(f"[system] kind = {kind!r}: expected 'single' or 'double'")
    keys = _SINGLE_KEYS if kind == "single" else _DOUBLE_KEYS
    values = {}
    if base is not None and base.kind == kind:
        values = _system_to_flat(base)
        values.pop("kind")
    for key, raw in items.items():
        if key not in keys:
            raise ConfigError(f"[system] unknown key {key!r} for kind={kind}; expected one of {', '.join(keys)}")
        val = _convert("system", key, raw, keys[key])
        if key in _NONNEG and not val >= 0:
            raise ConfigError(f"[system] {key} = {raw}: expected a non-negative number")
        if key in _POSITIVE and not val > 0:
            raise ConfigError(f"[system] {key} = {raw}: expected a positive number")
        if key.startswith("n") and keys[key] is int and val < 2:
            raise ConfigError(f"[system] {key} = {raw}: expected an integer >= 2")
        values[key] = val
    try:
        return _single(**values) if kind == "single" else _double(**values)
    except ValueError as exc:
        raise ConfigError(f"[system] {exc}") from None


def _system_to_flat(sys: SystemConfig) -> dict:
    if sys.kind == "single":
        return dict(kind="single", omega_m=sys.omega_m[0], g0=sys.g0[0], kappa=sys.kappa,
                    gamma_m=sys.gamma_m[0], n_th=sys.n_th[0], nc=sys.nc, nm=sys.nm[0])
    return dict(kind="double", omega_m1=sys.omega_m[0], omega_m2=sys.omega_m[1], g01=sys.g0[0],
                g02=sys.g0[1], kappa=sys.kappa, gamma_m1=sys.gamma_m[0], gamma_m2=sys.gamma_m[1],
                n_th1=sys.n_th[0], n_th2=sys.n_th[1], nc=sys.nc, nm1=sys.nm[0], nm2=sys.nm[1])


def parse_config_text(text: str, source: str = "<string>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    allowed = {"experiment", "system", "target", "schedule", "rl", "output"}
    for sec in cp.sections():
        if sec not in allowed:
            raise ConfigError(f"unknown section [{sec}]; expected one of {', '.join(sorted(allowed))}")

    base = None
    if cp.has_section("experiment"):
        exp = dict(cp["experiment"])
        for key in exp:
            if key not in ("preset", "name"):
                raise ConfigError(f"[experiment] unknown key {key!r}; expected 'preset' or 'name'")
        if "preset" in exp:
            base = preset_config(exp["preset"])
            if "name" not in exp:
                exp["name"] = exp["preset"]
        name = exp.get("name", "")
    else:
        name = ""

    if base is None and not cp.has_section("system"):
        raise ConfigError("[system] kind is required: expected 'single' or 'double'")
    system = _system_from_section(cp["system"] if cp.has_section("system") else {},
                                  base.system if base else None)

    tsec = dict(cp["target"]) if cp.has_section("target") else {}
    for key in tsec:
        if key not in ("state", "fidelity"):
            raise ConfigError(f"[target] unknown key {key!r}; expected 'state' or 'fidelity'")
    if "state" in tsec:
        try:
            target = parse_target(tsec["state"])
        except ValueError as exc:
            raise ConfigError(f"[target] state = {tsec['state']!r}: {exc}") from None
    elif base is not None:
        target = base.target
    else:
        raise ConfigError("[target] state is required: e.g. 'fock:2', 'sup:0,2', 'bell:phi+'")
    if target.n_modes != system.n_modes:
        raise ConfigError(f"[target] state addresses {target.n_modes} mode(s) but [system] kind={system.kind}")
    if any(i >= d for i, d in zip(target.max_index(), system.nm)):
        raise ConfigError(f"[target] state needs Fock indices {target.max_index()} beyond truncation {system.nm}")
    fmode = tsec.get("fidelity", base.fidelity_mode if base else "reduced")
    if fmode not in ("reduced", "joint"):
        raise ConfigError(f"[target] fidelity = {fmode!r}: expected 'reduced' or 'joint'")

    sched = {"T": base.T if base else 50.0, "S": base.S if base else 50,
             "omega_max": base.omega_max if base else 0.2, "n_sub": base.n_sub if base else None}
    for key, raw in (dict(cp["schedule"]) if cp.has_section("schedule") else {}).items():
        if key not in _SCHEDULE_KEYS:
            raise ConfigError(f"[schedule] unknown key {key!r}; expected one of {', '.join(_SCHEDULE_KEYS)}")
        if key == "n_sub" and raw.strip().lower() in ("", "auto"):
            sched[key] = None
            continue
        val = _convert("schedule", key, raw, _SCHEDULE_KEYS[key])
        if not val > 0:
            raise ConfigError(f"[schedule] {key} = {raw}: expected a positive number")
        sched[key] = val

    rl_values = asdict(base.rl) if base else asdict(DDPGConfig())
    for key, raw in (dict(cp["rl"]) if cp.has_section("rl") else {}).items():
        if key not in _RL_TYPES:
            raise ConfigError(f"[rl] unknown key {key!r}; expected one of {', '.join(_RL_TYPES)}")
        rl_values[key] = _convert("rl", key, raw, _RL_TYPES[key])
    try:
        rl = DDPGConfig(**rl_values)
    except ValueError as exc:
        raise ConfigError(f"[rl] {exc}") from None

    out = dict(cp["output"]) if cp.has_section("output") else {}
    for key in out:
        if key != "dir":
            raise ConfigError(f"[output] unknown key {key!r}; expected 'dir'")
    out_dir = out.get("dir", base.out_dir if base else f"runs/{name or 'default'}")
    return ExperimentConfig(system=system, target=target, T=sched["T"], S=sched["S"],
                            omega_max=sched["omega_max"], fidelity_mode=fmode, n_sub=sched["n_sub"],
                            rl=rl, out_dir=out_dir, name=name)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), source=str(path))


def dump_config(cfg: ExperimentConfig) -> str:
    """Full INI text; ``parse_config_text(dump_config(c)) == c``."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if cfg.name:
        cp["experiment"] = {"name": cfg.name}
    cp["system"] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in _system_to_flat(cfg.system).items()}
    cp["target"] = {"state": format_target(cfg.target), "fidelity": cfg.fidelity_mode}
    cp["schedule"] = {"T": repr(float(cfg.T)), "S": str(cfg.S), "omega_max": repr(float(cfg.omega_max)),
                      "n_sub": "auto" if cfg.n_sub is None else str(cfg.n_sub)}
    rl = {}
    for k, v in asdict(cfg.rl).items():
        if isinstance(v, tuple):
            rl[k] = " ".join(str(x) for x in v)
        elif isinstance(v, float):
            rl[k] = repr(v)
        else:
            rl[k] = str(v)
    cp["rl"] = rl
    cp["output"] = {"dir": cfg.out_dir}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def with_overrides(cfg: ExperimentConfig, *, seed=None, out_dir=None, steps=None, epochs=None) -> ExperimentConfig:
    rl = cfg.rl
    if seed is not None:
        rl = replace(rl, seed=int(seed))
    if epochs is not None:
        rl = replace(rl, epochs=int(epochs))
    return replace(cfg, rl=rl, out_dir=out_dir if out_dir is not None else cfg.out_dir,
                   S=int(steps) if steps is not None else cfg.S)
