"""Run configuration: defaults, TOML/JSON loading, validation.

One document describes a full pipeline run: the synthetic population,
the epidemic replicates, the absenteeism survey, and the alert-tuning
grid. TOML is the primary format; a JSON file with the same structure
is accepted interchangeably.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .epidemic import SsirParams
from .errors import ConfigurationError
from .metrics import MetricParams
from .population import PopulationConfig
from .stochastics import DistributionSpec
from .surveillance import CASE_SOURCES, AbsenteeismParams

DEFAULT_THRESHOLDS = tuple(round(0.10 + 0.05 * i, 2) for i in range(11))


@dataclass
class EpidemicConfig:
    """Epidemic replicate settings; the population supplies N at run time."""

    T: int = 300
    alpha: float = 0.298
    spark: float = 0.0
    avg_start: int = 45
    min_start: int = 20
    inf_period: int = 4
    inf_init: int = 32
    report_prop: float = 0.02
    report_delay_mean: float = 7.0
    rep: int = 10
    start_sd: float | None = None

    def to_params(self, n: int) -> SsirParams:
        return SsirParams(
            N=int(n),
            T=self.T,
            alpha=self.alpha,
            spark=self.spark,
            avg_start=self.avg_start,
            min_start=self.min_start,
            inf_period=self.inf_period,
            inf_init=self.inf_init,
            report_prop=self.report_prop,
            report_delay_mean=self.report_delay_mean,
            rep=self.rep,
            start_sd=self.start_sd,
        )

    def validate(self) -> None:
        # the population size arrives later; a size of max(1, inf_init)
        # trivially satisfies the N-dependent bounds so everything else
        # gets checked now
        self.to_params(max(1, self.inf_init)).validate()


@dataclass
class EvaluationConfig:
    """Grid-search settings; maxlag falls back to the surveillance maxlag."""

    maxlag: int | None = None
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    metric: MetricParams = field(default_factory=MetricParams)

    def validate(self) -> None:
        self.metric.validate()
        if not self.thresholds:
            raise ConfigurationError("evaluation.thresholds must be nonempty", stage="config")
        previous = 0.0
        for t in self.thresholds:
            if not 0.0 < t < 1.0:
                raise ConfigurationError(
                    f"thresholds must lie strictly inside (0, 1) (got {t})", stage="config"
                )
            if t <= previous:
                raise ConfigurationError(
                    f"thresholds must be strictly increasing (got {t} after {previous})",
                    stage="config",
                )
            previous = t
        if self.maxlag is not None and self.maxlag < 1:
            raise ConfigurationError(
                f"evaluation.maxlag must be >= 1 (got {self.maxlag})", stage="config"
            )


@dataclass
class RunConfig:
    """Everything one pipeline run needs, with defaults matching the
    demonstration workflow (seed 656, 16 catchments, 10 replicates)."""

    master_seed: int = 656
    threads: int = 1
    out_dir: str = "artifacts"
    population: PopulationConfig = field(default_factory=PopulationConfig)
    epidemic: EpidemicConfig = field(default_factory=EpidemicConfig)
    surveillance: AbsenteeismParams = field(default_factory=AbsenteeismParams)
    case_from: str = "reported"
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def effective_maxlag(self) -> int:
        if self.evaluation.maxlag is None:
            return self.surveillance.maxlag
        return self.evaluation.maxlag

    def validate(self) -> None:
        if not isinstance(self.master_seed, int) or self.master_seed < 0:
            raise ConfigurationError(
                f"master_seed must be a nonnegative integer (got {self.master_seed})",
                stage="config",
            )
        if self.threads < 1:
            raise ConfigurationError(
                f"threads must be >= 1 (got {self.threads})", stage="config"
            )
        self.population.validate()
        self.epidemic.validate()
        self.surveillance.validate()
        if self.case_from not in CASE_SOURCES:
            raise ConfigurationError(
                f"case_from must be one of {CASE_SOURCES} (got {self.case_from!r})",
                stage="config",
            )
        self.evaluation.validate()
        if not 1 <= self.effective_maxlag() <= self.surveillance.maxlag:
            raise ConfigurationError(
                f"evaluation.maxlag must lie in 1..{self.surveillance.maxlag} "
                f"(got {self.evaluation.maxlag})",
                stage="config",
            )

    def to_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "threads": self.threads,
            "out_dir": self.out_dir,
            "population": {
                "n_catchments": self.population.n_catchments,
                "catchment_side": self.population.catchment_side,
                "school_count": self.population.school_count_spec.to_dict(),
                "enrollment": self.population.enrollment_spec.to_dict(),
                "prop_parent_couple": self.population.prop_parent_couple,
                "prop_children_couple": list(self.population.prop_children_couple),
                "prop_children_lone": list(self.population.prop_children_lone),
                "prop_elem_age": self.population.prop_elem_age,
                "prop_house_size": list(self.population.prop_house_size),
                "prop_house_children": self.population.prop_house_children,
            },
            "epidemic": {
                "T": self.epidemic.T,
                "alpha": self.epidemic.alpha,
                "spark": self.epidemic.spark,
                "avg_start": self.epidemic.avg_start,
                "min_start": self.epidemic.min_start,
                "inf_period": self.epidemic.inf_period,
                "inf_init": self.epidemic.inf_init,
                "report_prop": self.epidemic.report_prop,
                "report_delay_mean": self.epidemic.report_delay_mean,
                "rep": self.epidemic.rep,
                **({"start_sd": self.epidemic.start_sd} if self.epidemic.start_sd is not None else {}),
            },
            "surveillance": {
                "p_base": self.surveillance.p_base,
                "p_sick": self.surveillance.p_sick,
                "maxlag": self.surveillance.maxlag,
                "window_days": self.surveillance.window_days,
                "year_length": self.surveillance.year_length,
                "case_from": self.case_from,
            },
            "evaluation": {
                **({"maxlag": self.evaluation.maxlag} if self.evaluation.maxlag is not None else {}),
                "thresholds": list(self.evaluation.thresholds),
                "metric": {
                    "tau_opt": self.evaluation.metric.tau_opt,
                    **(
                        {"tau_max": self.evaluation.metric.tau_max}
                        if self.evaluation.metric.tau_max is not None
                        else {}
                    ),
                    "k": self.evaluation.metric.k,
                    "a": self.evaluation.metric.a,
                },
            },
        }


def _reject_unknown(section: str, data: dict, allowed: tuple[str, ...]) -> None:
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigurationError(
            f"unknown key(s) in {section}: {', '.join(unknown)}", stage="config"
        )


def _spec_from(section: str, data) -> DistributionSpec:
    if not isinstance(data, dict):
        raise ConfigurationError(
            f"{section} must be a table with 'family' and 'params'", stage="config"
        )
    _reject_unknown(section, data, ("family", "params"))
    try:
        return DistributionSpec.from_dict(data)
    except (KeyError, TypeError) as err:
        raise ConfigurationError(f"{section}: {err}", stage="config") from None


def from_dict(data: dict) -> RunConfig:
    """Build a RunConfig from a parsed TOML/JSON document."""
    if not isinstance(data, dict):
        raise ConfigurationError("config root must be a table/object", stage="config")
    _reject_unknown(
        "config",
        data,
        ("master_seed", "threads", "out_dir", "population", "epidemic", "surveillance", "evaluation"),
    )
    config = RunConfig()
    if "master_seed" in data:
        config.master_seed = data["master_seed"]
    if "threads" in data:
        config.threads = data["threads"]
    if "out_dir" in data:
        config.out_dir = str(data["out_dir"])

    pop = dict(data.get("population", {}))
    _reject_unknown(
        "population",
        pop,
        (
            "n_catchments",
            "catchment_side",
            "school_count",
            "enrollment",
            "prop_parent_couple",
            "prop_children_couple",
            "prop_children_lone",
            "prop_elem_age",
            "prop_house_size",
            "prop_house_children",
        ),
    )
    pop_kwargs = {}
    if "school_count" in pop:
        pop_kwargs["school_count_spec"] = _spec_from("population.school_count", pop.pop("school_count"))
    if "enrollment" in pop:
        pop_kwargs["enrollment_spec"] = _spec_from("population.enrollment", pop.pop("enrollment"))
    for key, value in pop.items():
        if key.startswith("prop_") and isinstance(value, list):
            value = tuple(value)
        pop_kwargs[key] = value
    config.population = PopulationConfig(**pop_kwargs)

    epi = dict(data.get("epidemic", {}))
    _reject_unknown(
        "epidemic",
        epi,
        (
            "T",
            "alpha",
            "spark",
            "avg_start",
            "min_start",
            "inf_period",
            "inf_init",
            "report_prop",
            "report_delay_mean",
            "rep",
            "start_sd",
        ),
    )
    config.epidemic = EpidemicConfig(**epi)

    surv = dict(data.get("surveillance", {}))
    _reject_unknown(
        "surveillance",
        surv,
        ("p_base", "p_sick", "maxlag", "window_days", "year_length", "case_from"),
    )
    if "case_from" in surv:
        config.case_from = surv.pop("case_from")
    config.surveillance = AbsenteeismParams(**surv)

    evaluation = dict(data.get("evaluation", {}))
    _reject_unknown("evaluation", evaluation, ("maxlag", "thresholds", "metric"))
    eval_kwargs = {}
    if "maxlag" in evaluation:
        eval_kwargs["maxlag"] = evaluation["maxlag"]
    if "thresholds" in evaluation:
        thresholds = evaluation["thresholds"]
        if not isinstance(thresholds, list):
            raise ConfigurationError("evaluation.thresholds must be a list", stage="config")
        eval_kwargs["thresholds"] = tuple(float(t) for t in thresholds)
    metric = dict(evaluation.get("metric", {}))
    _reject_unknown("evaluation.metric", metric, ("tau_opt", "tau_max", "k", "a"))
    eval_kwargs["metric"] = MetricParams(**metric)
    config.evaluation = EvaluationConfig(**eval_kwargs)

    config.validate()
    return config


def load_config(path: str | Path) -> RunConfig:
    """Parse a .toml or .json config file into a validated RunConfig."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix not in (".toml", ".json"):
        raise ConfigurationError(
            f"config file must end in .toml or .json (got {path.name})", stage="config"
        )
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}", stage="config") from None
    try:
        if suffix == ".toml":
            data = tomllib.loads(raw.decode("utf-8"))
        else:
            data = json.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, json.JSONDecodeError, UnicodeDecodeError) as err:
        raise ConfigurationError(f"cannot parse {path.name}: {err}", stage="config") from None
    return from_dict(data)
