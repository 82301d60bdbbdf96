"""
Experiment Service
Builds every report table behind the command-line subcommands and writes them
only after all of a command's computation has succeeded.
"""

import dataclasses
import math
import shutil
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.core.config import AppConfig, RunConfig
from src.core.exceptions import ConfigurationError, ReportError
from src.core.logger import logger
from src.domain.interfaces import ICheckpointStore, IReportWriter
from src.domain.models import (
    CORE_PRESETS,
    Checkpoint,
    CostModel,
    SpreadReport,
    LossKind,
    MarginSpec,
    TrainResult,
)
from src.infrastructure.checkpoints.binary_store import BinaryCheckpointStore
from src.infrastructure.reports.csv_writer import CsvReportWriter
from src.services.anglestats import angle_report, overlap_mass, pair_histogram, verification_accuracy
from src.services.autonet import forward, split_holdout, synth_dataset
from src.services.gradcheck_service import GradcheckService, GradcheckSizes
from src.services.hypersphere import (
    expected_nearest_separation,
    monte_carlo_nearest_separation,
    poisson_nearest_separation,
)
from src.services.margin_zoo import combined_loss, decision_boundary, target_logit
from src.services.shardhead import (
    cost_report,
    make_shard_plan,
    sharded_backward,
    sharded_forward,
    throughput_model,
)
from src.services.training_service import TrainingService, spread_report
from src.utils.gradcheck import relative_error
from src.utils.rng import make_rng

SHARD_TOLERANCE = 1e-10
REFERENCE_SHAPE = (512, 512, 1_000_000)
DEFAULT_FLOP_RATE = 1e13
DEFAULT_BANDWIDTH = 1e10
DEFAULT_CURVE_PRESETS: Tuple[str, ...] = CORE_PRESETS

# (loss kind, margin preset) rows of the default ablation
ABLATION_ROWS: Tuple[Tuple[str, str], ...] = (
    ("softmax-unnormalized", "softmax"),
    ("combined", "softmax"),
    ("combined", "sphereface"),
    ("combined", "arcface"),
    ("combined", "cosface"),
    ("combined", "cm1"),
    ("combined", "cm2"),
    ("combined+intra", "softmax"),
    ("combined+inter", "softmax"),
    ("combined+intra+inter", "softmax"),
    ("combined+triplet", "softmax"),
    ("triplet-only", "softmax"),
)


def _degree_grid(start: float, stop: float, step: float, what: str) -> np.ndarray:
    if not (0.0 <= start <= stop <= 180.0) or not step > 0:
        raise ConfigurationError(f"Bad {what} range: need 0 <= start <= stop <= 180 and step > 0, "
                                 f"got start={start} stop={stop} step={step}")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(count)


def curves_table(presets: Sequence[str], start_deg: float = 20.0, stop_deg: float = 100.0,
                 step_deg: float = 1.0, s: Optional[float] = None) -> pd.DataFrame:
    """
    Target logit of each preset over an angle grid

    Args:
        presets: Margin preset names, one column each
        start_deg: First angle
        stop_deg: Last angle (inclusive when on the grid)
        step_deg: Grid spacing
        s: Optional scale override (the curves are pre-scale)

    Returns:
        DataFrame with theta_deg plus one column per preset
    """
    degrees = _degree_grid(start_deg, stop_deg, step_deg, "curve")
    radians = np.clip(np.deg2rad(degrees), 0.0, math.pi)
    table = {"theta_deg": degrees}
    for name in presets:
        table[name] = np.atleast_1d(target_logit(radians, MarginSpec.preset(name, s)))
    return pd.DataFrame(table)


def boundary_table(presets: Sequence[str], start_deg: float = 0.0, stop_deg: float = 180.0,
                   step_deg: float = 1.0) -> pd.DataFrame:
    """
    Binary decision boundary theta1 (degrees) per competing angle theta2

    Args:
        presets: Margin preset names, one column each
        start_deg: First theta2
        stop_deg: Last theta2
        step_deg: Grid spacing

    Returns:
        DataFrame with theta2_deg plus one column per preset; NaN where no boundary exists
    """
    degrees = _degree_grid(start_deg, stop_deg, step_deg, "boundary")
    table = {"theta2_deg": degrees}
    for name in presets:
        spec = MarginSpec.preset(name)
        column = []
        for theta2 in np.clip(np.deg2rad(degrees), 0.0, math.pi):
            theta1 = decision_boundary(spec, float(theta2))
            column.append(np.nan if theta1 is None else math.degrees(theta1))
        table[name] = column
    return pd.DataFrame(table)


def capacity_table(dims: Sequence[int], counts: Sequence[int], monte_carlo: bool = False,
                   trials: int = 20, seed: int = 0, workers: int = 1) -> pd.DataFrame:
    """
    Expected nearest-centre separation over a (d, n) grid

    Args:
        dims: Embedding dimensions
        counts: Numbers of centres
        monte_carlo: Append the Poisson estimate and Monte-Carlo columns
        trials: Monte-Carlo trials per row
        seed: Monte-Carlo root seed
        workers: Monte-Carlo thread count

    Returns:
        DataFrame sorted by (d, n)
    """
    rows = []
    for d in sorted(set(int(v) for v in dims)):
        for n in sorted(set(int(v) for v in counts)):
            closed = expected_nearest_separation(d, n)
            row = {"d": d, "n": n, "closed_form_rad": closed, "closed_form_deg": math.degrees(closed)}
            if monte_carlo:
                estimate = monte_carlo_nearest_separation(d, n, trials, seed=seed, workers=workers)
                row.update({
                    "poisson_rad": poisson_nearest_separation(d, n),
                    "mc_mean_rad": estimate.mean,
                    "mc_std_rad": estimate.std,
                    "mc_trials": estimate.trials,
                })
            rows.append(row)
    return pd.DataFrame(rows)


def shard_equivalence(N: int, d: int, n: int, k: int, seed: int = 0, workers: int = 1) -> Dict[str, float]:
    """
    Compare the sharded head with the dense combined loss on one random instance

    Returns:
        Relative errors of loss, feature gradient and centre gradient, the
        bitwise flag, and whether the simulated traffic matches cost_report
    """
    rng = make_rng([seed, k])
    features = rng.standard_normal((N, d))
    centres = rng.standard_normal((d, n))
    labels = rng.integers(0, n, size=N)
    spec = MarginSpec.preset("arcface")

    dense = combined_loss(features, centres, labels, spec)
    plan = make_shard_plan(n, k)
    state = sharded_forward(features, centres, labels, spec, plan, workers=workers)
    grad_features, grad_blocks = sharded_backward(state)
    grad_centres = np.concatenate(grad_blocks, axis=1)

    traffic = state.group.traffic
    cost = cost_report(N, d, n, k, bytes_per_scalar=1)
    moved = sum(traffic.scalars(name) for name in ("features", "softmax_max", "softmax_sum", "dx"))
    return {
        "loss_rel_error": abs(state.loss - dense.loss) / max(abs(dense.loss), 1e-300),
        "grad_features_rel_error": relative_error(grad_features, dense.grad_features),
        "grad_centres_rel_error": relative_error(grad_centres, dense.grad_centres),
        "bitwise": float(state.loss == dense.loss
                         and np.array_equal(grad_features, dense.grad_features)
                         and np.array_equal(grad_centres, dense.grad_centres)),
        "traffic_matches": float(moved == cost.communicated_bytes),
    }


def shard_cost_table(ks: Sequence[int], N: int, d: int, n: int, flop_rate: float = DEFAULT_FLOP_RATE,
                     bandwidth: float = DEFAULT_BANDWIDTH) -> pd.DataFrame:
    """Per-k memory, traffic and throughput rows at the given shape"""
    rows = []
    for k in ks:
        cost = cost_report(N, d, n, k)
        estimate = throughput_model(make_shard_plan(n, k), flop_rate, bandwidth, batch_size=N, dim=d)
        rows.append({
            "k": k,
            "n": n,
            "per_device_W_MB": CostModel.megabytes(cost.per_device_w_bytes),
            "per_device_score_MB": CostModel.megabytes(cost.per_device_score_bytes),
            "comm_MB_per_step": CostModel.megabytes(cost.communicated_bytes),
            "gather_only_comm_MB": CostModel.megabytes(cost.gather_only_bytes),
            "est_samples_per_sec": estimate.samples_per_second,
        })
    return pd.DataFrame(rows)


def spread_table(report: SpreadReport) -> pd.DataFrame:
    """Long-format rows: class spreads, pair separations and the gap"""
    rows = [{"statistic": "spread95", "class_a": c.label, "class_b": "", "degrees": c.spread95_deg}
            for c in report.classes]
    rows += [{"statistic": "separation", "class_a": a, "class_b": b, "degrees": value}
             for (a, b), value in sorted(report.pair_separations_deg.items())]
    rows.append({"statistic": "gap", "class_a": "", "class_b": "", "degrees": report.gap_deg})
    return pd.DataFrame(rows)


def snapshot_table(result: TrainResult) -> pd.DataFrame:
    rows = [{"iteration": snap.iteration, "bin_start_deg": float(edge), "count": int(count)}
            for snap in result.theta_snapshots
            for edge, count in zip(snap.bin_edges_deg[:-1], snap.counts)]
    return pd.DataFrame(rows)


class ExperimentService:
    """Runs one subcommand end to end and writes its artefacts"""

    def __init__(self, app_config: AppConfig, writer: Optional[IReportWriter] = None,
                 store: Optional[ICheckpointStore] = None):
        """
        Initialize experiment service

        Args:
            app_config: Environment settings
            writer: Report writer; CSV by default
            store: Checkpoint store; binary ARCK format by default
        """
        self.app_config = app_config
        self.writer = writer or CsvReportWriter()
        self.store = store or BinaryCheckpointStore()

    def _output_dir(self, out: Optional[Path], run_config: Optional[RunConfig] = None) -> Path:
        if out is not None:
            return Path(out)
        if run_config is not None and run_config.report.output_dir:
            return Path(run_config.report.output_dir)
        return self.app_config.output_dir

    def _write_all(self, tables: Dict[str, pd.DataFrame], out_dir: Path) -> Dict[str, Path]:
        return {name: self.writer.write(table, out_dir / name) for name, table in tables.items()}

    def _split(self, run_config: RunConfig):
        spec = run_config.dataset
        inputs, labels = synth_dataset(spec)
        train_rows, held_rows = split_holdout(labels, spec.holdout_fraction, spec.seed)
        return inputs, labels, train_rows, held_rows

    def curves(self, presets: Sequence[str], kind: str = "logit", start_deg: Optional[float] = None,
               stop_deg: Optional[float] = None, step_deg: float = 1.0,
               out: Optional[Path] = None) -> Path:
        """
        Write target logit curves or decision boundaries for the given presets

        Returns:
            Path of the CSV written
        """
        if kind == "logit":
            table = curves_table(presets, 20.0 if start_deg is None else start_deg,
                                 100.0 if stop_deg is None else stop_deg, step_deg)
        elif kind == "boundary":
            table = boundary_table(presets, 0.0 if start_deg is None else start_deg,
                                   180.0 if stop_deg is None else stop_deg, step_deg)
        else:
            raise ConfigurationError(f"Unknown curve kind '{kind}'")
        name = "curves.csv" if kind == "logit" else "boundaries.csv"
        return self.writer.write(table, self._output_dir(out) / name)

    def toy_train(self, run_config: RunConfig, config_path: Optional[Path] = None,
                  out: Optional[Path] = None) -> Dict[str, Path]:
        """
        Train on the synthetic training split and write checkpoint and reports

        Args:
            run_config: Parsed run configuration
            config_path: Source file, copied next to the outputs
            out: Output directory override

        Returns:
            Written artefacts by name
        """
        inputs, labels, train_rows, _ = self._split(run_config)
        service = TrainingService(run_config.train)
        result = service.train(inputs[train_rows], labels[train_rows], n_classes=run_config.dataset.n_classes)
        train_cfg = run_config.train
        report_cfg = run_config.report

        tables: Dict[str, pd.DataFrame] = {}
        if report_cfg.write_loss_trace:
            iterations = np.arange(train_cfg.total_iters)
            tables["loss_trace.csv"] = pd.DataFrame({
                "iteration": iterations,
                "loss": result.loss_trace,
                "lr": [train_cfg.lr_at(int(i)) for i in iterations],
            })
        if report_cfg.write_spread:
            tables["class_spread.csv"] = spread_table(spread_report(result.net, inputs[train_rows], labels[train_rows]))
        if report_cfg.write_snapshots:
            tables["theta_snapshots.csv"] = snapshot_table(result)

        centres = result.centres if train_cfg.loss_kind.trains_centres else None
        out_dir = self._output_dir(out, run_config)
        written = {"checkpoint": self.store.save(Checkpoint(result.net, centres),
                                                 out_dir / report_cfg.checkpoint_name)}
        written.update(self._write_all(tables, out_dir))
        if config_path is not None:
            target = out_dir / "run_config.yaml"
            try:
                if Path(config_path).resolve() != target.resolve():
                    shutil.copyfile(config_path, target)
            except OSError as e:
                logger.error(f"Error copying run config: {str(e)}")
                raise ReportError(f"Failed to copy run config to {target}: {str(e)}") from e
            written["config"] = target
        return written

    def _angle_rows(self, name: str, checkpoint: Checkpoint, inputs, labels, splits, bins: int,
                    n_neg: Optional[int], seed: int):
        rows = []
        histogram = None
        for split_name, split_rows in splits:
            embeddings = forward(checkpoint.net, inputs[split_rows])
            split_labels = labels[split_rows]
            report = angle_report(embeddings, split_labels, checkpoint.centres)
            hist = pair_histogram(embeddings, split_labels, n_neg=n_neg, seed=seed, bins=bins)
            accuracy, threshold = verification_accuracy(hist.pairs)
            rows.append({
                "model": name, "split": split_name,
                "w_ec": report.w_ec, "w_inter": report.w_inter,
                "intra": report.intra, "inter": report.inter,
                "verification_accuracy": accuracy, "threshold_deg": threshold,
                "overlap_mass": overlap_mass(hist),
            })
            histogram = hist
        return rows, histogram

    def stats(self, checkpoint_path: Path, run_config: RunConfig, out: Optional[Path] = None,
              bins: int = 180, n_neg: Optional[int] = None) -> Dict[str, Path]:
        """
        Angle statistics of a trained checkpoint on the held-out split

        Falls back to the train split when the run holds nothing out.

        Returns:
            Written artefacts by name
        """
        checkpoint = self.store.load(checkpoint_path)
        if checkpoint.dims[0] != run_config.dataset.d_in:
            raise ConfigurationError(f"Checkpoint expects d_in={checkpoint.dims[0]}, "
                                     f"dataset has d_in={run_config.dataset.d_in}")
        inputs, labels, train_rows, held_rows = self._split(run_config)
        splits = [("heldout", held_rows)] if held_rows.size else [("train", train_rows)]
        rows, histogram = self._angle_rows(Path(checkpoint_path).stem, checkpoint, inputs, labels, splits,
                                           bins, n_neg, run_config.dataset.seed)
        tables = {
            "angle_stats.csv": pd.DataFrame(rows),
            "pair_histogram.csv": pd.DataFrame({
                "bin_start_deg": histogram.bin_edges_deg[:-1],
                "pos_count": histogram.positive_counts,
                "neg_count": histogram.negative_counts,
            }),
        }
        return self._write_all(tables, self._output_dir(out, run_config))

    def capacity(self, dims: Sequence[int], counts: Sequence[int], monte_carlo: bool = False,
                 trials: int = 20, seed: int = 0, out: Optional[Path] = None) -> Path:
        table = capacity_table(dims, counts, monte_carlo, trials, seed, self.app_config.workers)
        return self.writer.write(table, self._output_dir(out) / "capacity.csv")

    def shard_bench(self, ks: Sequence[int], N: int = 8, d: int = 16, n: int = 40,
                    reference_shape: Tuple[int, int, int] = REFERENCE_SHAPE, seed: int = 0,
                    flop_rate: float = DEFAULT_FLOP_RATE, bandwidth: float = DEFAULT_BANDWIDTH,
                    out: Optional[Path] = None) -> Tuple[Path, List[str]]:
        """
        Dense-equivalence check at desk-scale shapes and cost rows at the large shape

        Returns:
            (CSV path, one EQUIV PASS / FAIL line per k)
        """
        verdicts = []
        for k in ks:
            if k > n:
                raise ConfigurationError(f"k={k} exceeds the {n} classes of the equivalence instance")
            errors = shard_equivalence(N, d, n, k, seed, self.app_config.workers)
            worst = max(errors["loss_rel_error"], errors["grad_features_rel_error"],
                        errors["grad_centres_rel_error"])
            passed = worst <= SHARD_TOLERANCE and bool(errors["traffic_matches"])
            if k == 1:
                passed = passed and bool(errors["bitwise"])
            verdict = f"EQUIV {'PASS' if passed else 'FAIL'} k={k} max_rel_error={worst:.3e}"
            logger.info(verdict)
            verdicts.append(verdict)
        table = shard_cost_table(ks, *reference_shape, flop_rate=flop_rate, bandwidth=bandwidth)
        return self.writer.write(table, self._output_dir(out) / "shard_bench.csv"), verdicts

    def gradcheck(self, seed: int = 0, sizes: Optional[GradcheckSizes] = None, instances: int = 20,
                  perturb: Optional[str] = None, out: Optional[Path] = None) -> Tuple[Path, bool]:
        """
        Finite-difference check of every loss kind

        Returns:
            (CSV path, whether every kind passed)
        """
        service = GradcheckService(seed=seed, sizes=sizes)
        results = service.run(instances=instances, perturb=perturb)
        table = pd.DataFrame([{
            "kind": r.kind,
            "max_relative_error": r.max_relative_error,
            "instances": r.instances,
            "status": "PASS" if r.passed else "FAIL",
        } for r in results.values()])
        path = self.writer.write(table, self._output_dir(out) / "gradcheck.csv")
        return path, all(r.passed for r in results.values())

    def ablate(self, run_config: RunConfig, rows: Sequence[Tuple[str, str]] = ABLATION_ROWS,
               out: Optional[Path] = None) -> Path:
        """
        Train one model per (loss kind, margin preset) row on the same data and compare held-out statistics

        Returns:
            Path of the CSV written
        """
        inputs, labels, train_rows, held_rows = self._split(run_config)
        eval_rows = held_rows if held_rows.size else train_rows
        records = []
        for kind_name, preset in rows:
            kind = LossKind(kind_name)
            margin = MarginSpec.preset(preset, run_config.train.margin.s)
            train_cfg = dataclasses.replace(run_config.train, loss_kind=kind, margin=margin)
            logger.info(f"Ablation row: {kind.value} / {preset}")
            result = TrainingService(train_cfg).train(inputs[train_rows], labels[train_rows],
                                                      n_classes=run_config.dataset.n_classes)
            centres = result.centres if kind.trains_centres else None
            stats, _ = self._angle_rows(f"{kind.value}/{preset}", Checkpoint(result.net, centres), inputs,
                                        labels, [("heldout", eval_rows)], 180, None, run_config.dataset.seed)
            record = {"loss_kind": kind.value, "margin": preset, "final_loss": float(result.loss_trace[-1])}
            record.update({key: value for key, value in stats[0].items() if key not in ("model", "split")})
            records.append(record)
        return self.writer.write(pd.DataFrame(records), self._output_dir(out, run_config) / "ablation.csv")

