"""Run configuration: INI file parsing, command-line overrides, validation.

Every problem found while reading a file is collected with its ``section.key``
path and raised together as one :class:`ConfigError`.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..channel import LinkDefaults
from ..encoder import GridGeometry
from ..params import ParamError, load_params
from .scenes import SCENE_SETS, SceneOptions

__all__ = ["ConfigError", "SweepSpec", "RunConfig", "load_config", "parse_config", "with_overrides"]


class ConfigError(ValueError):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class SweepSpec:
    latency_s: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4)
    latency_speed: float = 10.0
    distance_m: tuple[float, ...] = (10.0, 20.0, 30.0, 40.0, 50.0, 60.0)
    noise_std: tuple[float, ...] = (0.0, 0.2)
    ablation_sets: tuple[str, ...] = ("dense-traffic", "sparse-highway")
    ablation_stale_s: float = 3.0


@dataclass(frozen=True)
class RunConfig:
    scene: str = "dense-traffic"
    seed: int = 0
    replicates: int = 10
    out: Path = Path("results")
    hpha_on: bool = True
    selection_on: bool = True
    all_egos: bool = True
    workers: int = 1
    scene_options: SceneOptions = SceneOptions()
    grid: GridGeometry | None = None
    link: LinkDefaults = LinkDefaults()
    history_frames: int = 2
    sparse_threshold: float = 0.5
    decode_threshold: float = 0.35
    comm_range_m: float = 120.0
    gnn_params: dict | None = field(default=None, compare=False)
    sta_params: dict | None = field(default=None, compare=False)
    sweep: SweepSpec = SweepSpec()

    def validate(self) -> "RunConfig":
        problems = []
        if self.scene not in SCENE_SETS:
            problems.append(f"run.scene: unknown scene set {self.scene!r} (choose from {', '.join(sorted(SCENE_SETS))})")
        if self.replicates < 1:
            problems.append(f"run.replicates: must be >= 1, got {self.replicates}")
        if self.workers < 1:
            problems.append(f"run.workers: must be >= 1, got {self.workers}")
        if self.history_frames < 0:
            problems.append("fusion.history_frames: must be >= 0")
        if self.comm_range_m <= 0:
            problems.append("fusion.comm_range_m: must be positive")
        so = self.scene_options
        if so.n_agents < 1:
            problems.append("scene.n_agents: must be >= 1")
        if so.n_objects < 0:
            problems.append("scene.n_objects: must be >= 0")
        if not 0 <= so.speed[0] <= so.speed[1]:
            problems.append(f"scene.speed_min/speed_max: need 0 <= min <= max, got {so.speed}")
        if so.sensor_range_m <= 0:
            problems.append("scene.sensor_range_m: must be positive")
        if so.stale_neighbor_s is not None and so.stale_neighbor_s < 0:
            problems.append("scene.stale_neighbor_s: latency must be non-negative")
        sw = self.sweep
        for name in ("latency_s", "distance_m", "noise_std", "ablation_sets"):
            if not getattr(sw, name):
                problems.append(f"sweep.{name}: sweep values must be nonempty")
        if any(v < 0 for v in sw.latency_s):
            problems.append("sweep.latency_s: latency must be non-negative")
        if any(v <= 0 for v in sw.distance_m):
            problems.append("sweep.distance_m: bucket edges must be positive")
        if list(sw.distance_m) != sorted(set(sw.distance_m)):
            problems.append("sweep.distance_m: bucket edges must be strictly increasing")
        if any(v < 0 for v in sw.noise_std):
            problems.append("sweep.noise_std: std must be non-negative")
        for s in sw.ablation_sets:
            if s not in ("dense-traffic", "sparse-highway"):
                problems.append(f"sweep.ablation_sets: {s!r} is not a dataset-analog scene set")
        if sw.ablation_stale_s < 0:
            problems.append("sweep.ablation_stale_s: latency must be non-negative")
        if problems:
            raise ConfigError(problems)
        return self


_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


class _Reader:
    def __init__(self, cp: configparser.ConfigParser, base_dir: Path):
        self.cp = cp
        self.base = base_dir
        self.problems: list[str] = []
        self.seen: set[tuple[str, str]] = set()

    def raw(self, section: str, key: str):
        if self.cp.has_option(section, key):
            self.seen.add((section, key))
            return self.cp.get(section, key).strip()
        return None

    def get(self, section: str, key: str, kind, default):
        text = self.raw(section, key)
        if text is None:
            return default
        try:
            return kind(text)
        except (ValueError, TypeError) as exc:
            self.problems.append(f"{section}.{key}: {exc}")
            return default

    def boolean(self, section, key, default):
        def conv(t):
            if t.lower() not in _BOOL:
                raise ValueError(f"expected a boolean, got {t!r}")
            return _BOOL[t.lower()]
        return self.get(section, key, conv, default)

    def floats(self, section, key, default):
        return self.get(section, key, lambda t: tuple(float(v) for v in t.replace(",", " ").split()), default)

    def words(self, section, key, default):
        return self.get(section, key, lambda t: tuple(v for v in t.replace(",", " ").split()), default)

    def optional_float(self, section, key, default):
        return self.get(section, key, lambda t: None if t.lower() in ("", "none") else float(t), default)

    def params(self, section, key):
        text = self.raw(section, key)
        if not text:
            return None
        path = Path(text)
        if not path.is_absolute():
            path = self.base / path
        try:
            return load_params(path)
        except (OSError, ParamError) as exc:
            self.problems.append(f"{section}.{key}: {exc}")
            return None


_KNOWN = {
    "run": {"scene", "seed", "replicates", "out", "hpha", "selection", "egos", "workers"},
    "scene": {"n_agents", "n_objects", "speed_min", "speed_max", "sensor_range_m", "stale_neighbor_s",
              "occlusion_latency_max_s"},
    "grid": {"channels", "height", "width", "cell_size"},
    "link": {"carrier_ghz", "bandwidth_hz", "tx_power_dbm", "noise_dbm_min", "noise_dbm_max",
             "compute_s_min", "compute_s_max", "sensor_offset_s_min", "sensor_offset_s_max"},
    "fusion": {"history_frames", "sparse_threshold", "decode_threshold", "comm_range_m", "gnn_params", "sta_params"},
    "sweep": {"latency_s", "latency_speed", "distance_m", "noise_std", "ablation_sets", "ablation_stale_s"},
}


def parse_config(text: str, base_dir: Path | str = ".") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from exc
    r = _Reader(cp, Path(base_dir))
    d = RunConfig()
    so, lk, sw = d.scene_options, d.link, d.sweep

    egos = r.get("run", "egos", str, "all")
    if egos not in ("all", "first"):
        r.problems.append(f"run.egos: expected 'all' or 'first', got {egos!r}")
    grid = None
    if cp.has_section("grid"):
        base = GridGeometry()
        try:
            grid = GridGeometry(
                r.get("grid", "channels", int, base.channels),
                r.get("grid", "height", int, base.height),
                r.get("grid", "width", int, base.width),
                r.get("grid", "cell_size", float, base.cell_size),
            )
        except ValueError as exc:
            r.problems.append(f"grid: {exc}")

    cfg = RunConfig(
        scene=r.get("run", "scene", str, d.scene),
        seed=r.get("run", "seed", int, d.seed),
        replicates=r.get("run", "replicates", int, d.replicates),
        out=Path(r.get("run", "out", str, str(d.out))),
        hpha_on=r.boolean("run", "hpha", d.hpha_on),
        selection_on=r.boolean("run", "selection", d.selection_on),
        all_egos=egos != "first",
        workers=r.get("run", "workers", int, d.workers),
        scene_options=SceneOptions(
            n_agents=r.get("scene", "n_agents", int, so.n_agents),
            n_objects=r.get("scene", "n_objects", int, so.n_objects),
            speed=(r.get("scene", "speed_min", float, so.speed[0]), r.get("scene", "speed_max", float, so.speed[1])),
            sensor_range_m=r.get("scene", "sensor_range_m", float, so.sensor_range_m),
            stale_neighbor_s=r.optional_float("scene", "stale_neighbor_s", so.stale_neighbor_s),
            occlusion_latency_max_s=r.get("scene", "occlusion_latency_max_s", float, so.occlusion_latency_max_s),
            grid=grid,
        ),
        grid=grid,
        link=LinkDefaults(
            carrier_ghz=r.get("link", "carrier_ghz", float, lk.carrier_ghz),
            bandwidth_hz=r.get("link", "bandwidth_hz", float, lk.bandwidth_hz),
            tx_power_dbm=r.get("link", "tx_power_dbm", float, lk.tx_power_dbm),
            noise_dbm=(r.get("link", "noise_dbm_min", float, lk.noise_dbm[0]),
                       r.get("link", "noise_dbm_max", float, lk.noise_dbm[1])),
            compute_s=(r.get("link", "compute_s_min", float, lk.compute_s[0]),
                       r.get("link", "compute_s_max", float, lk.compute_s[1])),
            sensor_offset_s=(r.get("link", "sensor_offset_s_min", float, lk.sensor_offset_s[0]),
                             r.get("link", "sensor_offset_s_max", float, lk.sensor_offset_s[1])),
        ),
        history_frames=r.get("fusion", "history_frames", int, d.history_frames),
        sparse_threshold=r.get("fusion", "sparse_threshold", float, d.sparse_threshold),
        decode_threshold=r.get("fusion", "decode_threshold", float, d.decode_threshold),
        comm_range_m=r.get("fusion", "comm_range_m", float, d.comm_range_m),
        gnn_params=r.params("fusion", "gnn_params"),
        sta_params=r.params("fusion", "sta_params"),
        sweep=SweepSpec(
            latency_s=r.floats("sweep", "latency_s", sw.latency_s),
            latency_speed=r.get("sweep", "latency_speed", float, sw.latency_speed),
            distance_m=r.floats("sweep", "distance_m", sw.distance_m),
            noise_std=r.floats("sweep", "noise_std", sw.noise_std),
            ablation_sets=r.words("sweep", "ablation_sets", sw.ablation_sets),
            ablation_stale_s=r.get("sweep", "ablation_stale_s", float, sw.ablation_stale_s),
        ),
    )
    for section in cp.sections():
        if section not in _KNOWN:
            r.problems.append(f"{section}: unknown section")
            continue
        for key in cp.options(section):
            if key not in _KNOWN[section]:
                r.problems.append(f"{section}.{key}: unknown key")
    lo, hi = cfg.link.noise_dbm, cfg.link.compute_s
    for name, (a, b) in (("noise_dbm", lo), ("compute_s", hi), ("sensor_offset_s", cfg.link.sensor_offset_s)):
        if a > b:
            r.problems.append(f"link.{name}_min/{name}_max: min {a} exceeds max {b}")
    if cfg.link.bandwidth_hz <= 0:
        r.problems.append("link.bandwidth_hz: must be positive")
    if cfg.link.carrier_ghz <= 0:
        r.problems.append("link.carrier_ghz: must be positive")
    try:
        cfg.validate()
    except ConfigError as exc:
        r.problems.extend(exc.problems)
    if r.problems:
        raise ConfigError(r.problems)
    return cfg


def load_config(path: Path | str | None) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"config file {p}: {exc.strerror}") from exc
    return parse_config(text, p.parent)


def with_overrides(cfg: RunConfig, **kw) -> RunConfig:
    """Apply command-line overrides; ``None`` values leave the field alone."""
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None}).validate()
