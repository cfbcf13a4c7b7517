"""Configuration and stage orchestration: ingest -> point -> prob -> eval -> trade -> report."""
from __future__ import annotations

import dataclasses
import datetime as dt
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np
import pandas as pd

from .errors import ConfigError, FqraError, MissingStageError, StageError
from .evaluation import (
    ace_table,
    compute_hits,
    coverage_report,
    format_pass_table,
    pass_count_table,
    read_reports,
    write_reports,
)
from .point import (
    DESK_AVERAGING_TAUS,
    MAX_LAG,
    PAPER_AVERAGING_TAUS,
    ForecastPanel,
    ModelSpec,
    average_point_forecast,
    rolling_forecast,
)
from .probabilistic import (
    COVERAGES,
    METHODS,
    IntervalSet,
    assemble_intervals,
    forecast_surface,
)
from .quantreg import PERCENTILES
from .synthetic import MIN_SYNTHETIC_DAYS, SyntheticSpec, generate_synthetic
from .timeseries import TIMESTAMP_FORMAT, HourlyPanel, load_market_csv, normalize_calendar
from .trading import (
    EPEX_REGIMES,
    BatterySpec,
    regime_report,
    regimes_from_boundaries,
    run_benchmark,
    run_strategy,
    write_summary,
)

log = logging.getLogger(__name__)

# key -> expected unit for values written as "key = value [unit]"
UNITS = {
    "tau_min": "days",
    "tau_max": "days",
    "tau_step": "days",
    "prob_window": "days",
    "eval_days": "days",
    "avg_windows": "days",
    "battery_capacity_mw": "MW",
    "battery_efficiency": "fraction",
    "battery_min_soc": "fraction",
    "daily_trade_energy": "MWh",
    "noise_scale": "EUR/MWh",
    "coverages": "fraction",
}


@dataclass(frozen=True)
class PipelineConfig:
    preset: str = "desk"
    market: str = "DA"
    include_solar: bool = True
    data_path: str | None = None
    seed: int = 0
    noise_scale: float = 3.0
    tau_min: int = 56
    tau_max: int = 200
    tau_step: int = 8
    avg_windows: tuple[int, ...] = DESK_AVERAGING_TAUS
    prob_window: int = 182
    eval_days: int = 300
    k_max: int = 6
    coverages: tuple[float, ...] = tuple(float(c) for c in COVERAGES)
    quantiles: tuple[float, ...] = tuple(float(q) for q in PERCENTILES)
    methods: tuple[str, ...] = METHODS
    battery_capacity_mw: float = 2.5
    battery_efficiency: float = 0.9
    battery_min_soc: float = 0.2
    daily_trade_energy: float = 1.0
    regimes: tuple[dt.date, ...] = ()
    npit: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.market not in ("DA", "IDA"):
            raise ConfigError(f"market must be DA or IDA, got {self.market!r}")
        if not 1 <= self.tau_min <= self.tau_max or self.tau_step < 1:
            raise ConfigError("window range must satisfy 1 <= tau_min <= tau_max, tau_step >= 1")
        missing = [t for t in self.avg_windows if t not in self.taus]
        if missing:
            raise ConfigError(f"averaging windows {missing} are not in the window range")
        if self.prob_window < 2 or self.eval_days < 1:
            raise ConfigError("prob_window must be >= 2 and eval_days >= 1")
        if not self.methods:
            raise ConfigError("method list is empty")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}")
        qs = np.asarray(self.quantiles, dtype=float)
        if qs.size == 0 or np.any((qs <= 0) | (qs >= 1)) or np.any(np.diff(qs) <= 0):
            raise ConfigError("quantiles must be strictly increasing inside (0, 1)")
        for c in self.coverages:
            alpha = 1.0 - c
            if not 0 < c < 1 or not np.isclose(np.round(alpha / 2, 2), alpha / 2):
                raise ConfigError(f"coverage {c} does not map onto the percentile grid")
            for q in (alpha / 2, 1 - alpha / 2):
                if not np.isclose(self.quantiles, q).any():
                    raise ConfigError(f"coverage {c} needs quantile {q:.2f}, which is not in the quantile list")
        if self.k_max < 1:
            raise ConfigError("k_max must be >= 1")

    @property
    def taus(self) -> tuple[int, ...]:
        return tuple(range(self.tau_min, self.tau_max + 1, self.tau_step))

    @property
    def n_windows(self) -> int:
        return len(self.taus)

    @property
    def factor_rows(self) -> int:
        """Rows of the factor panel: calibration days plus the forecast day, 24 hours each."""
        return 24 * (self.prob_window + 1)

    @property
    def history_days(self) -> int:
        """Days before the first out-of-sample day: lags, longest window, probabilistic calibration."""
        return MAX_LAG + self.tau_max + self.prob_window

    @property
    def model(self) -> ModelSpec:
        return ModelSpec(self.market, include_solar=self.include_solar)

    @property
    def battery(self) -> BatterySpec:
        return BatterySpec(self.battery_capacity_mw, self.battery_efficiency,
                           self.battery_min_soc, self.daily_trade_energy)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["regimes"] = [d.isoformat() for d in self.regimes]
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


PRESETS: dict[str, dict[str, Any]] = {
    "desk": {},
    "paper": {
        "preset": "paper",
        "tau_min": 56,
        "tau_max": 728,
        "tau_step": 1,
        "avg_windows": PAPER_AVERAGING_TAUS,
        "eval_days": 778,
        "regimes": tuple(start for start, _ in EPEX_REGIMES),
    },
}


def preset_config(name: str = "desk", **overrides) -> PipelineConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    values = dict(PRESETS[name])
    values.setdefault("preset", name)
    values.update(overrides)
    return PipelineConfig(**values)


def _field_types() -> dict[str, Any]:
    return {f.name: f.type for f in dataclasses.fields(PipelineConfig)}


def _coerce(key: str, text: str) -> Any:
    kind = _field_types()[key]
    text = text.strip()
    if "tuple[int" in kind:
        return tuple(int(x) for x in text.split(",") if x.strip())
    if "tuple[float" in kind:
        return tuple(float(x) for x in text.split(",") if x.strip())
    if "tuple[str" in kind:
        return tuple(x.strip() for x in text.split(",") if x.strip())
    if "tuple[dt.date" in kind:
        return tuple(dt.date.fromisoformat(x.strip()) for x in text.split(",") if x.strip())
    if kind == "bool":
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    if text.lower() in ("", "none"):
        return None
    return text


def parse_config_text(text: str) -> dict[str, Any]:
    """Parse ``key = value [unit]`` lines; ``#`` starts a comment."""
    values: dict[str, Any] = {}
    fields = _field_types()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if value.endswith("]") and "[" in value:
            value, unit = value[:-1].rsplit("[", 1)
            unit = unit.strip()
            expected = UNITS.get(key)
            if expected != unit:
                raise ConfigError(f"line {lineno}: {key} is measured in {expected or 'no unit'}, not {unit!r}")
        try:
            values[key] = _coerce(key, value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    return values


def load_config(path: str | Path | None = None, preset: str | None = None, **overrides) -> PipelineConfig:
    """Preset defaults, then the config file, then explicit overrides."""
    file_values = parse_config_text(Path(path).read_text()) if path else {}
    name = preset or file_values.pop("preset", None) or "desk"
    file_values.pop("preset", None)
    file_values.update({k: v for k, v in overrides.items() if v is not None})
    return preset_config(name, **file_values)


def format_config(config: PipelineConfig) -> str:
    lines = [f"# config_hash={config.config_hash()}"]
    for key, value in config.to_dict().items():
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        unit = UNITS.get(key)
        lines.append(f"{key} = {value}" + (f" [{unit}]" if unit else ""))
    return "\n".join(lines) + "\n"


# --- stages ---------------------------------------------------------------

PANEL_FILE = "panel.csv"
FORECAST_FILE = "forecast_panel.csv"


def _stamp(config: PipelineConfig) -> str:
    return f"config_hash={config.config_hash()}"


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingStageError(f"{path.name} not found; run the '{stage}' stage first")
    return path


def _staged(name: str) -> Callable:
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except MissingStageError:
                raise
            except FqraError as exc:
                raise StageError(name, exc) from exc
        inner.__name__ = fn.__name__
        inner.__doc__ = fn.__doc__
        return inner
    return wrap


def synthetic_spec(config: PipelineConfig) -> SyntheticSpec:
    # the generator has a floor on panel length; extra trailing days are never evaluated
    n_days = max(MIN_SYNTHETIC_DAYS, config.history_days + config.eval_days)
    return SyntheticSpec(n_days=n_days, noise_scale=config.noise_scale)


def write_raw_csv(panel: HourlyPanel, path: Path, header_comment: str | None = None) -> None:
    frame = panel.to_frame()
    frame.index = frame.index.strftime(TIMESTAMP_FORMAT)
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        frame.to_csv(fh, float_format="%.17g")


@_staged("synth")
def run_synth(config: PipelineConfig, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    panel = generate_synthetic(synthetic_spec(config), config.seed)
    path = out_dir / "synthetic.csv"
    write_raw_csv(panel, path, _stamp(config))
    return path


@_staged("ingest")
def run_ingest(config: PipelineConfig, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    if config.data_path:
        raw = load_market_csv(config.data_path)
    else:
        raw = generate_synthetic(synthetic_spec(config), config.seed)
    panel = normalize_calendar(raw) if not raw.is_normalized else raw
    missing = [s for s in config.model.required_series if s not in panel]
    if missing:
        raise ConfigError(f"input data lacks series {missing} required by the {config.market} model")
    path = out_dir / PANEL_FILE
    write_raw_csv(panel, path, _stamp(config))
    return path


def load_panel(out_dir: Path) -> HourlyPanel:
    return load_market_csv(_require(out_dir / PANEL_FILE, "ingest"))


def evaluation_days(config: PipelineConfig, panel: HourlyPanel) -> np.ndarray:
    first = config.history_days
    last = min(panel.n_days, first + config.eval_days)
    if last <= first:
        raise ConfigError(
            f"panel has {panel.n_days} days but {first} are needed before the first out-of-sample day"
        )
    return np.arange(first, last)


@_staged("point")
def run_point(config: PipelineConfig, out_dir: Path) -> Path:
    panel = load_panel(out_dir)
    eval_days = evaluation_days(config, panel)
    start = eval_days[0] - config.prob_window
    fp = rolling_forecast(panel, config.model, config.taus, range(start, eval_days[-1] + 1), npit=config.npit)
    path = out_dir / FORECAST_FILE
    fp.save(path, {"config_hash": config.config_hash()})
    return path


def load_forecasts(out_dir: Path) -> ForecastPanel:
    return ForecastPanel.load(_require(out_dir / FORECAST_FILE, "point"))


@_staged("prob")
def run_prob(config: PipelineConfig, out_dir: Path) -> list[Path]:
    panel = load_panel(out_dir)
    fp = load_forecasts(out_dir)
    eval_days = evaluation_days(config, panel)
    prices = panel.matrix(config.model.target)
    paths = []
    for method in config.methods:
        log.info("probabilistic forecasts: %s", method)
        surface = forecast_surface(
            method, fp, prices, eval_days, config.prob_window, config.avg_windows,
            config.k_max, config.quantiles, config.npit,
        )
        surface.to_csv(out_dir / f"surface_{method}.csv", _stamp(config))
        if surface.k_used is not None:
            frame = pd.DataFrame({"date": [panel.date(d).isoformat() for d in surface.days], "K": surface.k_used})
            with open(out_dir / f"factors_{method}.csv", "w", newline="") as fh:
                fh.write(f"# {_stamp(config)}\n")
                frame.to_csv(fh, index=False)
        intervals = assemble_intervals(surface, config.coverages)
        path = out_dir / f"intervals_{method}.csv"
        intervals.to_csv(path, _stamp(config))
        paths.append(path)
    return paths


def load_intervals(out_dir: Path, method: str, start_date: dt.date) -> IntervalSet:
    return IntervalSet.from_csv(_require(out_dir / f"intervals_{method}.csv", "prob"), start_date)


@_staged("eval")
def run_eval(config: PipelineConfig, out_dir: Path) -> Path:
    panel = load_panel(out_dir)
    prices = panel.matrix(config.model.target)
    reports = []
    for method in config.methods:
        iv = load_intervals(out_dir, method, panel.start_date)
        realized = prices[iv.days]
        for cov in config.coverages:
            lo, hi = iv.level(cov)
            hits = compute_hits(realized, lo, hi, 1.0 - cov)
            reports.append(coverage_report(method, hits))
    path = out_dir / "coverage.csv"
    write_reports(reports, path, _stamp(config))
    return path


def _ledger_name(method: str, coverage: float) -> str:
    return f"ledger_{method}_{round(coverage * 100):02d}.csv"


@_staged("trade")
def run_trade(config: PipelineConfig, out_dir: Path) -> Path:
    panel = load_panel(out_dir)
    fp = load_forecasts(out_dir)
    prices = panel.matrix(config.model.target)
    ledger_dir = out_dir / "ledgers"
    ledger_dir.mkdir(exist_ok=True)
    battery = config.battery
    summaries = []
    bench = None
    for method in config.methods:
        iv = load_intervals(out_dir, method, panel.start_date)
        days = iv.days
        point = average_point_forecast(fp.select_days(days), config.avg_windows)
        realized = prices[days]
        dates = [panel.date(d) for d in days]
        next_h1 = prices[days[-1] + 1, 0] if days[-1] + 1 < panel.n_days else None
        if bench is None:
            bench = run_benchmark(point, realized, dates, battery)
            bench.to_csv(ledger_dir / "ledger_benchmark.csv", _stamp(config))
            summaries.append({"method": "benchmark", "coverage": None, **bench.summary(bench),
                              "regimes": _regimes(config, bench, bench)})
        for cov in config.coverages:
            lo, hi = iv.level(cov)
            ledger = run_strategy(point, lo, hi, realized, dates, battery, next_h1,
                                  label=f"{method}@{cov:.2f}", alpha=1.0 - cov)
            ledger.to_csv(ledger_dir / _ledger_name(method, cov), _stamp(config))
            summaries.append({"method": method, "coverage": cov, **ledger.summary(bench),
                              "regimes": _regimes(config, ledger, bench)})
    path = out_dir / "trade_summary.json"
    write_summary(summaries, path, config.config_hash())
    return path


def _regimes(config: PipelineConfig, ledger, bench) -> list[dict]:
    if not config.regimes:
        return []
    last = max(ledger.dates)
    first = min(ledger.dates)
    starts = [max(b, first) for b in config.regimes if b <= last]
    if not starts:
        return []
    return regime_report(ledger, regimes_from_boundaries(sorted(set(starts)), last), bench)


@_staged("report")
def emit_reports(config: PipelineConfig, out_dir: Path) -> list[Path]:
    """ACE, pass-count, profit and volume tables from the eval and trade stages."""
    if not config.methods:
        raise ConfigError("no methods to report on")
    reports = read_reports(_require(out_dir / "coverage.csv", "eval"))
    reports = [r for r in reports if r.method in config.methods]
    if not reports:
        raise MissingStageError("coverage.csv holds none of the configured methods")
    summary = json.loads(_require(out_dir / "trade_summary.json", "trade").read_text())
    stamp = f"# {_stamp(config)}\n"
    paths = []

    def write(frame: pd.DataFrame, name: str, index: bool = True) -> None:
        path = out_dir / name
        with open(path, "w", newline="") as fh:
            fh.write(stamp)
            frame.to_csv(fh, index=index, float_format="%.10g")
        paths.append(path)

    write(ace_table(reports), "ace_table.csv")
    table = pass_count_table(reports)
    write(table, "pass_count_table.csv")
    txt = out_dir / "pass_count_table.txt"
    txt.write_text(stamp + format_pass_table(table))
    paths.append(txt)

    rows = [s for s in summary["summaries"] if s["method"] != "benchmark"]
    bench = next(s for s in summary["summaries"] if s["method"] == "benchmark")
    trade = pd.DataFrame(rows)
    profit = trade.pivot(index="coverage", columns="method", values="profit_per_mwh")
    profit["benchmark"] = bench["profit_per_mwh"]
    profit.index.name = "level"
    write(profit, "profit_by_level.csv")
    volume = trade.pivot(index="coverage", columns="method", values="relative_volume")
    volume.index.name = "level"
    write(volume, "volume_table.csv")
    return paths


STAGES = {
    "ingest": run_ingest,
    "point": run_point,
    "prob": run_prob,
    "eval": run_eval,
    "trade": run_trade,
    "report": emit_reports,
}


def run_pipeline(config: PipelineConfig, out_dir: str | Path) -> Path:
    """Run every stage in order and return the artifact directory."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(format_config(config))
    for name, stage in STAGES.items():
        log.info("stage %s", name)
        stage(config, out_dir)
    return out_dir
