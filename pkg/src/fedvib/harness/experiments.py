"""Scenario runners: historical, cold-start, knowledge transfer, centralized.

Each runner produces an :class:`ExperimentResult` bundling the detection
report (per-batch verdicts, threshold traces, detection metrics), the
per-round reports, and the network accounting that compares federated weight
traffic against shipping the raw batches.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..data import windows_for_batches
from ..errors import ConfigError, WireError
from ..model import (
    AnomalyVerdict,
    ThresholdModel,
    batch_anomaly_score,
    build_autoencoder,
    evaluate_detection,
    train_epochs,
    window_scores,
)
from ..proto import GlobalModel, ModelWeights, decode_frame, encode_frame
from .config import load_raw_dataset, preprocess_dataset
from .federation import prepare_node, run_federation

TRANSFER_CALIBRATION_FRACTION = 0.10


@dataclass
class DetectionReport:
    """Per-node detection outcome of one scenario."""

    verdicts: dict           # node id -> [AnomalyVerdict]
    threshold_trace: dict    # node id -> per-round thresholds plus the final one
    metrics: dict            # node id -> DetectionMetrics (labeled nodes only)
    untrained: bool = False


@dataclass
class NetworkReport:
    """Bytes actually moved by the federation vs the raw-data counterfactual.

    ``raw_bytes`` counts every batch payload after preprocessing (4-byte
    samples); ``raw_bytes_original`` counts them before downsampling.
    """

    federated_bytes: int
    federated_bytes_by_node: dict
    raw_bytes: int
    raw_bytes_original: int
    reduction_percent: float | None


@dataclass
class ExperimentResult:
    scenario: str
    detection: DetectionReport
    round_reports: list
    network: NetworkReport
    federation: object = None        # FederationResult for federated scenarios
    training_log: dict = None        # centralized per-epoch losses
    source_detection: DetectionReport = None  # knowledge transfer: source side


def network_reduction(fed_bytes, centralized_bytes):
    """Percentage of network volume saved by sending weights instead of data."""
    if centralized_bytes <= 0:
        raise ConfigError(f"centralized byte count must be > 0, got {centralized_bytes}")
    return 100.0 * (1.0 - fed_bytes / centralized_bytes)


def cold_start_windows(round_index, available=None):
    """Training window budget of a 1-based cold-start round: 64 per round so
    far, capped at what the node actually has."""
    if round_index < 1:
        raise ConfigError(f"round_index must be >= 1, got {round_index}")
    n = 64 * round_index
    if available is not None:
        n = min(n, int(available))
    return n


# -- shared assembly ----------------------------------------------------------

def _prepare_all(config):
    setups = [prepare_node(spec, config.autoencoder.window_size)
              for spec in config.nodes]
    for s in setups:
        got = s.dataset.feature_count
        want = config.autoencoder.feature_count
        if got != want:
            raise ConfigError(f"node {s.node_id!r} has {got} features but the "
                              f"autoencoder expects {want}")
    return setups


def _metrics_from_verdicts(verdicts):
    labeled = [v for v in verdicts if v.label is not None]
    if not labeled:
        return None
    pred = [v.verdict == "anomalous" for v in labeled]
    truth = [v.label == "anomalous" for v in labeled]
    return evaluate_detection(pred, truth)


def _detection_from_results(node_results):
    verdicts, trace, metrics = {}, {}, {}
    for cid, res in sorted(node_results.items()):
        verdicts[cid] = res.verdicts
        trace[cid] = [s.threshold for s in res.round_stats] + [res.final_threshold.threshold]
        m = _metrics_from_verdicts(res.verdicts)
        if m is not None:
            metrics[cid] = m
    untrained = any(res.untrained for res in node_results.values())
    return DetectionReport(verdicts=verdicts, threshold_trace=trace,
                           metrics=metrics, untrained=untrained)


def _network_from_federation(setups, fed):
    raw = sum(s.raw_bytes for s in setups)
    raw_original = sum(s.raw_bytes_original for s in setups)
    total = sum(sent + recv for sent, recv in fed.bytes_by_node.values())
    return NetworkReport(
        federated_bytes=total,
        federated_bytes_by_node=dict(sorted(fed.bytes_by_node.items())),
        raw_bytes=raw, raw_bytes_original=raw_original,
        reduction_percent=network_reduction(total, raw) if raw > 0 else None)


def _run_federated_scenario(config, scenario, window_schedules=None):
    setups = _prepare_all(config)
    fed = run_federation(setups, config, window_schedules=window_schedules)
    return ExperimentResult(
        scenario=scenario,
        detection=_detection_from_results(fed.node_results),
        round_reports=fed.round_reports,
        network=_network_from_federation(setups, fed),
        federation=fed), setups


# -- scenarios ----------------------------------------------------------------

def run_historical(config):
    """Federated training on each node's full historical training segment."""
    result, _ = _run_federated_scenario(config, "historical")
    return result


def run_cold_start(config):
    """Federated training where round r trains on the chronologically first
    64·r windows of each node (capped at availability)."""
    setups = _prepare_all(config)
    schedules = {
        s.node_id: (lambda r, n=len(s.train_windows): cold_start_windows(r + 1, n))
        for s in setups
    }
    fed = run_federation(setups, config, window_schedules=schedules)
    return ExperimentResult(
        scenario="cold_start",
        detection=_detection_from_results(fed.node_results),
        round_reports=fed.round_reports,
        network=_network_from_federation(setups, fed),
        federation=fed)


def score_batches(model, batches, offset, threshold, window_size, score_mode="mean"):
    """Score whole batches with a fitted model and a fixed threshold."""
    verdicts = []
    for i, batch in enumerate(batches):
        n = batch.samples.shape[0] // window_size
        if n == 0:
            continue
        ws = batch.samples[:n * window_size].reshape(n, window_size, batch.feature_count)
        score = batch_anomaly_score(window_scores(model, ws), mode=score_mode)
        verdicts.append(AnomalyVerdict(
            batch_index=offset + i, timestamp=batch.timestamp, score=score,
            threshold=threshold.threshold, verdict=threshold.classify(score),
            label=batch.label))
    return verdicts


def run_knowledge_transfer(config, target_spec=None):
    """Train a federation, then score a foreign dataset with the global model.

    No weights are updated on the target; only the anomaly threshold is
    recalibrated, on the target's chronologically first (assumed healthy)
    batches.
    """
    target_spec = target_spec if target_spec is not None else config.transfer_target
    if target_spec is None:
        raise ConfigError("knowledge transfer needs a target dataset spec")
    source, _ = _run_federated_scenario(config, "knowledge_transfer")

    target = preprocess_dataset(load_raw_dataset(target_spec), target_spec)
    acfg = config.autoencoder
    if target.feature_count != acfg.feature_count:
        raise ConfigError(f"transfer target {target_spec.id!r} has "
                          f"{target.feature_count} features but the model "
                          f"expects {acfg.feature_count}")

    model = build_autoencoder(acfg, seed=config.seed)
    model.set_weights_dict(source.federation.global_weights.tensors)
    n_cal = max(1, int(TRANSFER_CALIBRATION_FRACTION * len(target.batches)))
    cal_w, _ = windows_for_batches(target.batches[:n_cal], acfg.window_size)
    if len(cal_w) == 0:
        raise ConfigError(f"transfer target {target_spec.id!r}: calibration "
                          f"batches yield no windows")
    threshold = ThresholdModel.calibrate(window_scores(model, cal_w),
                                         delta=config.delta,
                                         mode=config.threshold_mode)
    verdicts = score_batches(model, target.batches, 0, threshold,
                             acfg.window_size, config.score_mode)
    m = _metrics_from_verdicts(verdicts)
    detection = DetectionReport(
        verdicts={target_spec.id: verdicts},
        threshold_trace={target_spec.id: [threshold.threshold]},
        metrics={target_spec.id: m} if m is not None else {},
        untrained=source.detection.untrained)
    return ExperimentResult(
        scenario="knowledge_transfer",
        detection=detection,
        round_reports=source.round_reports,
        network=source.network,
        federation=source.federation,
        source_detection=source.detection)


def run_centralized(config):
    """Baseline: one model trained on all nodes' pooled training windows,
    evaluated per node; records what shipping the raw batches would cost."""
    setups = _prepare_all(config)
    model = build_autoencoder(config.autoencoder, seed=config.seed)
    pooled_train = np.concatenate([s.train_windows for s in setups])
    pooled_val = np.concatenate([s.val_windows for s in setups])
    epochs = config.train.epochs
    log = train_epochs(model, pooled_train, config.train, epochs,
                       val_windows=pooled_val, seed=config.seed)

    verdicts, trace, metrics = {}, {}, {}
    for s in setups:
        threshold = ThresholdModel.calibrate(
            window_scores(model, s.val_windows),
            delta=config.delta, mode=config.threshold_mode)
        v = score_batches(model, s.test_batches, s.test_offset, threshold,
                          config.autoencoder.window_size, config.score_mode)
        verdicts[s.node_id] = v
        trace[s.node_id] = [threshold.threshold]
        m = _metrics_from_verdicts(v)
        if m is not None:
            metrics[s.node_id] = m

    raw = sum(s.raw_bytes for s in setups)
    raw_original = sum(s.raw_bytes_original for s in setups)
    return ExperimentResult(
        scenario="centralized",
        detection=DetectionReport(verdicts=verdicts, threshold_trace=trace,
                                  metrics=metrics, untrained=epochs == 0),
        round_reports=[],
        network=NetworkReport(federated_bytes=0, federated_bytes_by_node={},
                              raw_bytes=raw, raw_bytes_original=raw_original,
                              reduction_percent=None),
        training_log={"train_losses": log.train_losses,
                      "val_losses": log.val_losses})


_SCENARIO_RUNNERS = {
    "historical": run_historical,
    "cold_start": run_cold_start,
    "knowledge_transfer": run_knowledge_transfer,
    "centralized": run_centralized,
}


def run_experiment(config):
    """Dispatch a config to its scenario runner."""
    return _SCENARIO_RUNNERS[config.scenario](config)


# -- model checkpoints --------------------------------------------------------

def save_model_checkpoint(path, weights, round_index=0):
    """Persist a global model as one wire-encoded frame."""
    if not isinstance(weights, ModelWeights):
        weights = ModelWeights(weights)
    Path(path).write_bytes(encode_frame(GlobalModel(round=round_index, weights=weights)))


def load_model_checkpoint(path):
    """Read back a checkpoint; returns (round_index, ModelWeights)."""
    msg = decode_frame(Path(path).read_bytes())
    if not isinstance(msg, GlobalModel):
        raise WireError(f"checkpoint {path} holds a {type(msg).__name__}, "
                        f"not a global model")
    return msg.round, msg.weights
