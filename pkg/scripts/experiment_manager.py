#!/usr/bin/env python3
"""
Transfer Lab Experiment Manager
Command-line front end: runs sweeps from config files, reproduces the
figure presets, runs the verification suites, and prints design advice.

Exit codes: 0 success, 1 verification failure or runtime error,
2 usage or configuration error.
"""

import argparse
import logging
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from config_loader import (ConfigError, ExperimentConfig, build_experiment, load_experiments,
                           load_json_file, load_lab_config, preset_path, resolve_output_dir)
from output_writer import RunManifest, manifest_path, write_manifest, write_sweep_csv
from quality_control import QualityControl, save_verification_report
from sweep_processor import SweepProcessor
from theory import (ScenarioParams, TheoryError, allocate_budget, descent_floor_option_a,
                    descent_floor_option_b, sacrifice_analysis, sacrifice_crossover, transferring_error)

FIGURES = ("fig1a", "fig1b", "fig1c", "tightness")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class ExperimentCommand(Enum):
    """Top-level commands."""
    SWEEP = "sweep"
    FIGURE = "figure"
    VERIFY = "verify"
    ADVISE = "advise"


@dataclass
class RunConfig:
    """Resolved command-line options for one invocation."""
    command: ExperimentCommand
    target: Optional[str]
    output_dir: Path
    overrides: List[str] = field(default_factory=list)
    seed: Optional[int] = None
    replicates: Optional[int] = None
    threads: Optional[int] = None
    log_level: str = "INFO"
    quick: bool = False
    output_format: str = "csv"


class ExperimentManager:
    def __init__(self, lab_config_path: Optional[str] = None):
        """Initialize the experiment manager."""
        self.config = self._load_config(lab_config_path)
        self.logger = logging.getLogger(__name__)
        self.run_state = {
            "start_time": None,
            "end_time": None,
            "generated_files": [],
            "failed": [],
        }

    def _load_config(self, config_path: Optional[str]) -> Dict:
        """Load harness defaults."""
        return load_lab_config(config_path)

    def setup_logging(self, output_dir: Path, level: str = "INFO"):
        """Setup logging configuration."""
        output_dir.mkdir(parents=True, exist_ok=True)
        logging.basicConfig(
            level=getattr(logging, level),
            format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            handlers=[
                logging.FileHandler(output_dir / self.config["log_file"]),
                logging.StreamHandler()
            ]
        )

    def create_run_config(self, args: argparse.Namespace) -> RunConfig:
        """Create run configuration from command line arguments."""
        return RunConfig(
            command=ExperimentCommand(args.command),
            target=getattr(args, "target", None),
            output_dir=resolve_output_dir(args.out_dir, self.config),
            overrides=list(getattr(args, "set", None) or []),
            seed=args.seed,
            replicates=args.replicates,
            threads=args.threads,
            log_level=args.log_level,
            quick=getattr(args, "quick", False),
            output_format=args.format,
        )

    def execute(self, run: RunConfig) -> int:
        """Run one command and map its outcome to an exit code."""
        self.run_state["start_time"] = datetime.now()
        self.logger.info(f"Executing command: {run.command.value}")
        try:
            if run.command is ExperimentCommand.SWEEP:
                self.execute_sweep(run)
                status = EXIT_OK
            elif run.command is ExperimentCommand.FIGURE:
                self.execute_figure(run)
                status = EXIT_OK
            elif run.command is ExperimentCommand.VERIFY:
                status = EXIT_OK if self.execute_verify(run) else EXIT_FAILURE
            elif run.command is ExperimentCommand.ADVISE:
                print(self.execute_advise(run))
                status = EXIT_OK
            else:
                raise ValueError(f"Unknown command: {run.command}")
        except ConfigError as e:
            self.logger.error(f"Configuration error: {e}")
            print(f"Error: {e}")
            self.run_state["failed"].append({"command": run.command.value, "error": str(e)})
            status = EXIT_USAGE
        except Exception as e:
            self.logger.error(f"Command {run.command.value} failed: {e}")
            print(f"Error: {e}")
            self.run_state["failed"].append({"command": run.command.value, "error": str(e)})
            status = EXIT_FAILURE
        self.run_state["end_time"] = datetime.now()
        return status

    def _run_experiments(self, experiments: List[ExperimentConfig], run: RunConfig, command: str) -> List[Path]:
        """Sweep each experiment and write its CSV and manifest."""
        threads = run.threads or int(self.config["threads"])
        processor = SweepProcessor(max_workers=threads)
        written = []
        for experiment in experiments:
            started = time.perf_counter()
            spec = experiment.sweep
            records = processor.process_sweep(spec, experiment.truth, experiment.learner, experiment.sacrifice)

            extra_columns = experiment.document.get("csv", {}).get("extra_columns", [])
            csv_path = write_sweep_csv(records, run.output_dir / f"{experiment.name}.csv", spec.method,
                                       extra_columns)
            manifest = RunManifest(
                command=command,
                config=experiment.document,
                master_seed=spec.master_seed,
                outputs=[csv_path.name],
                wall_clock_seconds=time.perf_counter() - started,
            )
            written.append(csv_path)
            written.append(write_manifest(manifest, manifest_path(csv_path)))

            summary = processor.generate_sweep_report(spec, records)["sweep_summary"]
            print(f"✓ {csv_path} ({summary['points']} points, {summary['points_with_theory']} with theory)")

        self.run_state["generated_files"].extend(str(p) for p in written)
        return written

    def execute_sweep(self, run: RunConfig) -> List[Path]:
        if not run.target:
            raise ConfigError("sweep needs a config file")
        experiments = load_experiments(run.target, self.config, run.overrides, run.seed, run.replicates,
                                       run.threads)
        return self._run_experiments(experiments, run, f"sweep {run.target}")

    def execute_figure(self, run: RunConfig) -> List[Path]:
        if run.target not in FIGURES:
            raise ConfigError(f"unknown figure '{run.target}', choose one of {', '.join(FIGURES)}")
        experiments = load_experiments(preset_path(run.target), self.config, run.overrides, run.seed,
                                       run.replicates, run.threads)
        return self._run_experiments(experiments, run, f"figure {run.target}")

    def execute_verify(self, run: RunConfig) -> bool:
        """Run every verification suite; True when all checks pass."""
        lab = self.config
        if run.replicates:
            lab = dict(lab, verification=dict(lab["verification"], acceptance_replicates=run.replicates))
        seed = run.seed if run.seed is not None else int(lab["seed"])
        started = time.perf_counter()

        quality_control = QualityControl(lab, seed, run.threads or int(lab["threads"]), quick=run.quick)
        checks = quality_control.run_all()
        evaluation = quality_control.evaluate_checks(checks)
        text_path, json_path = save_verification_report(evaluation, run.output_dir)

        manifest = RunManifest(
            command="verify" + (" --quick" if run.quick else ""),
            config={"verification": lab["verification"], "bounds_slack": lab["bounds_slack"], "quick": run.quick},
            master_seed=seed,
            outputs=[text_path.name, json_path.name],
            wall_clock_seconds=time.perf_counter() - started,
        )
        write_manifest(manifest, manifest_path(text_path))
        self.run_state["generated_files"].extend([str(text_path), str(json_path)])

        print(f"\nVerification Summary:")
        print(f"Passed: {evaluation['passed_checks']}/{evaluation['total_checks']} ({evaluation['pass_rate']:.1f}%)")
        print(f"Report: {text_path}")
        return evaluation["failed_checks"] == 0

    def execute_advise(self, run: RunConfig) -> str:
        """Budget split, sacrifice decision and descent floors for one config."""
        if not run.target:
            raise ConfigError("advise needs a config file")
        doc = load_json_file(run.target)
        experiment = build_experiment(doc, self.config, Path(run.target).stem, require_sweep=False)
        return render_advice(experiment)

    def generate_run_report(self) -> Dict:
        """Summary of this invocation."""
        start, end = self.run_state["start_time"], self.run_state["end_time"]
        return {
            "start_time": start.isoformat() if start else None,
            "duration_seconds": (end - start).total_seconds() if start and end else None,
            "generated_files": list(self.run_state["generated_files"]),
            "failed": list(self.run_state["failed"]),
            "success": not self.run_state["failed"],
        }


def _floor_text(floor: Optional[float]) -> str:
    return "none (error decreases monotonically)" if floor is None else f"p2 ≈ {floor:.1f}"


def render_advice(experiment: ExperimentConfig) -> str:
    """Plain-text design advice derived from the closed forms."""
    truth = experiment.extended_truth()
    cfg = experiment.learner
    sp = ScenarioParams.from_truth(truth, cfg)
    budget = cfg.p + cfg.p1
    lines = [f"Transfer Lab Advice: {experiment.name}", ""]

    advice = allocate_budget(budget, experiment.truth.s, sp)
    lines.append(f"Budget split (C = p + p1 = {budget}, s = {experiment.truth.s}): p = {advice.p}, p1 = {advice.p1}")
    lines.append(f"  {advice.claim}")

    nonzero = np.abs(experiment.truth.w1[experiment.truth.w1 != 0])
    # Q2 bounds the noiseless part by 1, which holds only for q1 = 0 and ||w1|| + ||w2|| <= 1
    premise = sp.q1_norm <= 1e-12 and sp.w1_norm + sp.w2_norm <= 1.0 + 1e-12
    if budget <= cfg.n1 + 1 or not nonzero.size:
        lines.append("Sacrifice analysis: not applicable (needs an overparameterized source step)")
    elif not premise:
        lines.append(f"Sacrifice analysis: not applicable (assumes ||q1|| = 0 and ||w1|| + ||w2|| <= 1, "
                     f"config has ||q1|| = {sp.q1_norm:.4g}, ||w1|| + ||w2|| = {sp.w1_norm + sp.w2_norm:.4g})")
    else:
        value = float(nonzero.min())
        analysis = sacrifice_analysis(budget, cfg.n1, experiment.truth.sigma1, value)
        verdict = "sacrifice recommended" if analysis.recommend else "keep every true feature"
        lines.append(f"Sacrifice of a common feature of size {value:.4g}: "
                     f"Q1 = {analysis.q1:.6g}, Q2 = {analysis.q2:.6g} -> {verdict}")
        lines.append("  assumes ||q1|| = 0 and ||w1|| + ||w2|| <= 1")
        lines.append(f"  crossover sigma1^2 = {sacrifice_crossover(budget, cfg.n1, value):.6g}")

    try:
        lco = transferring_error(sp)
    except TheoryError as e:
        lines.append(f"Transferring error: undefined ({e})")
        return "\n".join(lines)

    if lco.is_exact:
        lines.append(f"Transferring error: {lco.value:.6g} (exact, {lco.regime.value.lower()} source step)")
        endpoints = {"": lco.value}
    else:
        lines.append(f"Transferring error: [{lco.lower:.6g}, {lco.upper:.6g}] "
                     f"({lco.regime.value.lower()} source step)")
        endpoints = {" at lower L_co": lco.lower, " at upper L_co": lco.upper}

    for label, value in endpoints.items():
        lines.append(f"Option A descent floor{label}: {_floor_text(descent_floor_option_a(sp, value))}")
        lines.append(f"Option B descent floor{label}: {_floor_text(descent_floor_option_b(sp, value))}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="Master seed")
    common.add_argument("--replicates", type=int, help="Replicates per grid point")
    common.add_argument("--threads", type=int, help="Worker threads")
    common.add_argument("--out-dir", help="Output directory")
    common.add_argument("--format", default="csv", choices=["csv"], help="Output format")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="Logging level")

    parser = argparse.ArgumentParser(description="Transfer Lab Experiment Manager")
    subparsers = parser.add_subparsers(dest="command", required=True)

    sweep = subparsers.add_parser("sweep", parents=[common], help="Run a sweep from a config or manifest")
    sweep.add_argument("target", metavar="CONFIG", help="Experiment config, preset or manifest (JSON)")
    sweep.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="Override a config value")

    figure = subparsers.add_parser("figure", parents=[common], help="Reproduce a figure preset")
    figure.add_argument("target", metavar="NAME", choices=FIGURES, help="Figure preset")
    figure.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="Override a preset value")

    verify = subparsers.add_parser("verify", parents=[common], help="Run the verification suites")
    verify.add_argument("--quick", action="store_true", help="Reduced replicate counts")

    advise = subparsers.add_parser("advise", parents=[common], help="Print design advice for a config")
    advise.add_argument("target", metavar="CONFIG", help="Experiment config (JSON)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        manager = ExperimentManager()
        run = manager.create_run_config(args)
    except ConfigError as e:
        logging.getLogger(__name__).error(f"Configuration error: {e}")
        print(f"Error: {e}")
        return EXIT_USAGE
    manager.setup_logging(run.output_dir, run.log_level)
    status = manager.execute(run)

    report = manager.generate_run_report()
    if report["generated_files"]:
        print(f"\nGenerated {len(report['generated_files'])} files in {run.output_dir}")
    return status


if __name__ == "__main__":
    sys.exit(main())
