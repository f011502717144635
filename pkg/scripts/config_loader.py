#!/usr/bin/env python3
"""
Transfer Lab Configuration Loader
Reads the harness defaults (lab-config.json) and experiment configs,
applies command-line overrides, and turns the result into the typed
objects the sweep processor runs.

Experiment configs are JSON with the sections ground_truth, learner,
experiment and sweep. A preset may add a "curves" list; each curve is a
named set of section overrides applied on top of the base sections.
A run manifest is also accepted: its "config" entry is the resolved
experiment config of the run.
"""

import copy
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from model import (GroundTruth, LearnerConfig, Sacrifice, extend_truth, ground_truth_from_dict,
                   learner_from_dict)
from sweep_processor import SweepMethod, SweepSpec

logger = logging.getLogger(__name__)

OUT_DIR_ENV = "TRANSFER_LAB_OUT_DIR"
SECTIONS = ("ground_truth", "learner", "experiment", "sweep")
REPO_ROOT = Path(__file__).resolve().parent.parent
PRESET_DIR = REPO_ROOT / "presets"

DEFAULT_LAB_CONFIG = {
    "seed": 20240611,
    "replicates": 100,
    "threads": 4,
    "bounds_slack": 3.0,
    "output_dir": "transfer-lab-output",
    "log_file": "transfer_lab.log",
    "verification": {
        "acceptance_replicates": 10000,
        "tightness_replicates": 200,
        "floor_replicates": 2000,
        "insight_replicates": 200,
        "calibration_replicates": 500,
        "lemma_draws": 10000,
        "quick_factor": 0.1,
    },
}


class ConfigError(ValueError):
    """Configuration is unreadable, incomplete or inconsistent."""


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully resolved experiment: what to simulate and how to sweep it."""
    name: str
    truth: GroundTruth
    learner: LearnerConfig
    sacrifice: Sacrifice
    sweep: Optional[SweepSpec]
    document: Dict[str, Any]

    def extended_truth(self):
        return extend_truth(self.truth, self.learner, self.sacrifice)


def deep_merge(base: Dict, overrides: Dict) -> Dict:
    """Recursively merge overrides into a copy of base."""
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_json_file(path) -> Dict:
    """Load a JSON document, raising ConfigError on any failure."""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"Configuration file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Error parsing configuration file {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"Configuration file {path} must hold a JSON object")
    return data


def load_lab_config(path=None) -> Dict:
    """Harness defaults, overlaid with lab-config.json when it exists."""
    path = Path(path) if path else REPO_ROOT / "lab-config.json"
    if not path.exists():
        logger.warning(f"{path} not found, using built-in defaults")
        return copy.deepcopy(DEFAULT_LAB_CONFIG)
    return deep_merge(DEFAULT_LAB_CONFIG, load_json_file(path))


def resolve_output_dir(flag: Optional[str], lab: Dict) -> Path:
    """Flag, then environment, then lab config."""
    if flag:
        return Path(flag)
    if os.environ.get(OUT_DIR_ENV):
        return Path(os.environ[OUT_DIR_ENV])
    return Path(lab.get("output_dir", DEFAULT_LAB_CONFIG["output_dir"]))


def parse_override(text: str) -> Tuple[str, str, Any]:
    """Split 'section.key=value'; the value is decoded as JSON when possible."""
    if "=" not in text:
        raise ConfigError(f"override '{text}' must look like section.key=value")
    target, raw = text.split("=", 1)
    if "." not in target:
        raise ConfigError(f"override '{text}' must name a section and a key")
    section, key = target.split(".", 1)
    if section not in SECTIONS:
        raise ConfigError(f"unknown section '{section}' in override '{text}'")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return section, key, value


def apply_overrides(doc: Dict, overrides: Sequence[str]) -> Dict:
    updated = copy.deepcopy(doc)
    for text in overrides:
        section, key, value = parse_override(text)
        updated.setdefault(section, {})[key] = value
    return updated


def sweep_grid(section: Dict) -> Tuple[float, ...]:
    """Grid of a sweep section: explicit values, or start/stop/step with stop included."""
    if "values" in section:
        values = tuple(float(v) for v in section["values"])
    elif {"start", "stop"} <= set(section):
        start, stop = float(section["start"]), float(section["stop"])
        step = float(section.get("step", 1))
        if step <= 0:
            raise ConfigError(f"sweep step must be positive, got {step}")
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        values = tuple(float(start + i * step) for i in range(max(count, 0)))
    else:
        raise ConfigError("sweep section needs 'values' or 'start'/'stop'")
    if not values:
        raise ConfigError("sweep grid is empty")
    return values


def expand_curves(doc: Dict) -> List[Tuple[str, Dict]]:
    """One (name, config) pair per curve; a document without curves is a single curve."""
    curves = doc.get("curves")
    base = {key: value for key, value in doc.items() if key != "curves"}
    if not curves:
        return [(doc.get("name", "sweep"), base)]

    expanded = []
    for index, curve in enumerate(curves):
        name = curve.get("name", f"curve{index + 1}")
        overrides = {key: value for key, value in curve.items() if key != "name"}
        expanded.append((name, deep_merge(base, overrides)))
    return expanded


def _sacrifice_from(learner: Dict) -> Sacrifice:
    return Sacrifice(
        common=learner.get("sacrifice_common", ()),
        source=learner.get("sacrifice_source", ()),
        target=learner.get("sacrifice_target", ()),
    )


def unwrap_manifest(doc: Dict) -> Dict:
    """The resolved config inside a run manifest, or the document itself."""
    if "config" in doc and "tool_version" in doc:
        return doc["config"]
    return doc


def build_experiment(doc: Dict, lab: Dict, name: str = "sweep", seed: Optional[int] = None,
                     replicates: Optional[int] = None, threads: Optional[int] = None,
                     require_sweep: bool = True) -> ExperimentConfig:
    """Resolve one experiment document. Flags win over the document, which wins over the lab defaults."""
    doc = unwrap_manifest(doc)
    for section in ("ground_truth", "learner"):
        if not isinstance(doc.get(section), dict):
            raise ConfigError(f"missing '{section}' section")

    experiment = dict(doc.get("experiment", {}))
    experiment["seed"] = int(seed if seed is not None else experiment.get("seed", lab["seed"]))
    experiment["replicates"] = int(replicates if replicates is not None
                                   else experiment.get("replicates", lab["replicates"]))
    experiment["threads"] = int(threads if threads is not None else experiment.get("threads", lab["threads"]))
    experiment.setdefault("method", SweepMethod.OPTION_A.value)

    resolved = {key: copy.deepcopy(value) for key, value in doc.items() if key in SECTIONS or key == "csv"}
    resolved["experiment"] = experiment

    try:
        truth = ground_truth_from_dict(doc["ground_truth"])
        learner = learner_from_dict(doc["learner"])
        sacrifice = _sacrifice_from(doc["learner"])
        sweep = None
        if "sweep" in doc:
            section = doc["sweep"]
            if "variable" not in section:
                raise ConfigError("sweep section needs a 'variable'")
            budget = section.get("budget")
            sweep = SweepSpec(
                variable=section["variable"],
                values=sweep_grid(section),
                replicates=experiment["replicates"],
                master_seed=experiment["seed"],
                method=SweepMethod(experiment["method"]),
                threads=experiment["threads"],
                budget=int(budget) if budget is not None else None,
            )
        elif require_sweep:
            raise ConfigError("missing 'sweep' section")
        experiment_config = ExperimentConfig(name, truth, learner, sacrifice, sweep, resolved)
        experiment_config.extended_truth()
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as e:
        raise ConfigError(f"invalid experiment config '{name}': {e}")

    return experiment_config


def load_experiments(path, lab: Dict, overrides: Sequence[str] = (), seed: Optional[int] = None,
                     replicates: Optional[int] = None, threads: Optional[int] = None,
                     require_sweep: bool = True) -> List[ExperimentConfig]:
    """Load a config, preset or manifest file into one experiment per curve."""
    doc = apply_overrides(unwrap_manifest(load_json_file(path)), overrides)
    stem = Path(path).stem.replace(".manifest", "")
    experiments = []
    for name, curve_doc in expand_curves(doc):
        label = stem if name == "sweep" else f"{stem}_{name}"
        experiments.append(build_experiment(curve_doc, lab, label, seed, replicates, threads, require_sweep))
    logger.info(f"Loaded {len(experiments)} experiment(s) from {path}")
    return experiments


def preset_path(name: str) -> Path:
    path = PRESET_DIR / f"{name}.json"
    if not path.exists():
        available = sorted(p.stem for p in PRESET_DIR.glob("*.json"))
        raise ConfigError(f"unknown preset '{name}', available: {', '.join(available)}")
    return path
