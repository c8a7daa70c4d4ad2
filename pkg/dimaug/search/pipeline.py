"""Three-step augmentation pipeline.

1. Pretrain an encoder with the base crop/flip augmentation.
2. Search a policy on the frozen encoder (DDA or the min-max baseline) and finalize it.
3. Pretrain a freshly initialized encoder with the finalized policy and evaluate every encoder.

Each stage writes its artifacts as soon as it finishes, so a failing stage leaves the earlier
artifacts in place.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from dimaug.augment.policy import PolicyParams, finalize_policy, save_policy
from dimaug.augment.presets import excessive_policy, manual_policy, random_policy, simclr_policy
from dimaug.config import RunConfig, config_hash
from dimaug.contrastive.checkpoint import load_modules, save_checkpoint, save_modules
from dimaug.contrastive.encoder import Encoder, Projector, build_models, extract_features
from dimaug.contrastive.probe import ProbeResult, knn_eval, linear_probe, split_indices
from dimaug.contrastive.trainer import PolicySource, PretrainResult, pretrain
from dimaug.data.corpus import ImageCorpus, ingest
from dimaug.data.synthetic import make_toy_corpus
from dimaug.decorators import stage_error_handler
from dimaug.exceptions import CorpusError, PipelineStageError
from dimaug.lid import collapse_diagnostics
from dimaug.logging_setup import new_run_id, run_logger
from dimaug.metrics import MetricsWriter, read_metrics
from dimaug.models import DeployedPolicy, SamplingMode
from dimaug.search.dda import SearchResult, dda_search, selfaugment_search
from dimaug.search.rotation import train_rotation_head
from dimaug.visualization.plots import plot_loss_curves, plot_policy_heatmap


INITIAL_ENCODER = 'initial_encoder.ckpt'
POLICY_PARAMS = 'policy_params.ckpt'
POLICY_JSON = 'policy.json'
FINAL_ENCODER = 'final_encoder.ckpt'
METRICS_CSV = 'metrics.csv'
CONFIG_SNAPSHOT = 'config.snapshot.json'
SUMMARY_JSON = 'summary.json'
POLICY_HEATMAP = 'policy_heatmap.png'
LOSS_CURVES = 'loss_curves.png'


@dataclass
class PipelineArtifacts:
    """Paths and results produced by one pipeline run."""

    run_id: str
    config_hash: str
    seed: int
    out_dir: Path
    paths: Dict[str, Path] = field(default_factory=dict)
    policy: Optional[DeployedPolicy] = None
    search_losses: List[float] = field(default_factory=list)
    evaluations: Dict[str, Dict[str, float]] = field(default_factory=dict)


def load_corpora(config: RunConfig) -> Tuple[ImageCorpus, ImageCorpus]:
    """Return (unlabeled, labeled) corpora at the training resolution.

    Without a data path the procedural toy corpus serves as both.
    """
    data = config.data
    resolution = config.train.resolution
    channels = config.encoder.in_channels
    if data.path is None:
        toy = make_toy_corpus(config.seed, data.toy_per_class, resolution)
        return toy, toy
    unlabeled = ingest(data.path, data.manifest, resolution=resolution, channels=channels)
    labeled = (
        ingest(data.labeled_path, resolution=resolution, channels=channels) if data.labeled_path else unlabeled
    )
    if not labeled.labeled:
        raise CorpusError(f'Labeled corpus {labeled.source} carries no labels')
    return unlabeled, labeled


def pretraining_images(corpus: ImageCorpus) -> np.ndarray:
    """Images used for contrastive training: the 'train' split when a manifest provides one."""
    return corpus.split('train').images if 'train' in corpus.splits else corpus.images


def evaluate_encoder(
    encoder: Encoder,
    labeled: ImageCorpus,
    config: RunConfig,
) -> Dict[str, float]:
    """Linear probe, kNN accuracy and collapse diagnostics of a frozen encoder."""
    if 'train' in labeled.splits and 'test' in labeled.splits:
        train, test = labeled.split('train'), labeled.split('test')
        train_feats, test_feats = extract_features(encoder, train.images), extract_features(encoder, test.images)
        train_labels, test_labels = train.labels, test.labels
    else:
        train_idx, test_idx = split_indices(len(labeled), config.probe.test_fraction, config.seed)
        feats = extract_features(encoder, labeled.images)
        train_feats, test_feats = feats[train_idx], feats[test_idx]
        train_labels, test_labels = labeled.labels[train_idx], labeled.labels[test_idx]
    probe: ProbeResult = linear_probe(train_feats, train_labels, test_feats, test_labels, config.probe, config.seed)
    knn = knn_eval(train_feats, train_labels, test_feats, test_labels, min(config.probe.knn_k, len(train_labels)))
    scores = {
        'probe_accuracy': probe.accuracy,
        'probe_train_accuracy': probe.train_accuracy,
        'knn_accuracy': knn,
    }
    if len(test_feats) > config.lid.k:
        diag = collapse_diagnostics(test_feats, config.lid)
        scores.update({'median_lid': diag['median_lid'], 'effective_rank': diag['effective_rank']})
    return scores


def stamp(config: RunConfig, kind: str, **extra: Any) -> Dict[str, Any]:
    """Artifact metadata: kind, config hash, seed and the full config."""
    return {
        'kind': kind,
        'config_hash': config_hash(config),
        'seed': config.seed,
        'config': config.model_dump(mode='json'),
        **extra,
    }


def save_encoder(path: Path, result: PretrainResult, config: RunConfig, kind: str) -> Path:
    """Checkpoint encoder and projector with provenance."""
    return save_modules(
        path,
        {'encoder': result.encoder, 'projector': result.projector},
        stamp(config, kind, epochs=len(result.log)),
    )


def load_encoder(path: Path, config: RunConfig) -> Tuple[Encoder, Projector, Dict[str, Any]]:
    """Rebuild encoder and projector from the config and restore checkpointed weights."""
    encoder, projector = build_models(config.encoder, config.train.resolution, config.seed)
    metadata = load_modules(path, {'encoder': encoder, 'projector': projector})
    encoder.eval()
    projector.eval()
    return encoder, projector, metadata


def save_policy_params(path: Path, params: PolicyParams, config: RunConfig) -> Path:
    """Checkpoint learned logits and raw magnitudes with provenance."""
    return save_checkpoint(path, params.state_dict(), stamp(config, 'policy_params', **params.metadata()))


def stamped_policy(policy: DeployedPolicy, config: RunConfig) -> DeployedPolicy:
    """Copy of ``policy`` carrying the config hash and seed."""
    return policy.model_copy(update={'provenance': {'config_hash': config_hash(config), 'seed': config.seed}})


def baseline_policy(name: str, config: RunConfig) -> DeployedPolicy:
    """Deployed policy of a named baseline."""
    if name == 'random':
        return random_policy(seed=config.seed, n_subpolicies=config.augment.n_subpolicies)
    if name == 'simclr':
        return simclr_policy()
    if name == 'excessive':
        return excessive_policy()
    if name == 'manual':
        return manual_policy()
    raise ValueError(f'Unknown baseline {name!r}')


class Pipeline:
    """Run the pretrain, search, finalize, retrain and evaluate stages for one config."""

    def __init__(self, config: RunConfig, out_dir: Optional[Path] = None, run_id: Optional[str] = None):
        """Prepare the output directory, metrics stream and run context."""
        self.config = config
        self.out_dir = Path(out_dir or config.out_dir)
        self.run_id = run_id or new_run_id()
        self.hash = config_hash(config)
        self.artifacts = PipelineArtifacts(
            run_id=self.run_id, config_hash=self.hash, seed=config.seed, out_dir=self.out_dir
        )
        self.metrics = MetricsWriter(self.out_dir / METRICS_CSV, self.run_id)
        self.encoders: Dict[str, Encoder] = {}

    def _log(self, stage: str):
        return run_logger(self.run_id, stage, config_hash=self.hash)

    def _record(self, name: str, path: Path) -> Path:
        self.artifacts.paths[name] = path
        return path

    def _epoch_metrics(self, stage: str):
        def write(record: Dict[str, Any]) -> None:
            values = {k: float(v) for k, v in record.items() if k != 'epoch' and v is not None}
            self.metrics.write(stage, record['epoch'], values)

        return write

    def write_snapshot(self) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / CONFIG_SNAPSHOT
        snapshot = {'config_hash': self.hash, 'seed': self.config.seed, 'config': self.config.model_dump(mode='json')}
        path.write_text(json.dumps(snapshot, indent=2, sort_keys=True) + '\n', encoding='utf-8')
        return self._record('config_snapshot', path)

    @stage_error_handler('load')
    def load(self) -> Tuple[ImageCorpus, ImageCorpus]:
        unlabeled, labeled = load_corpora(self.config)
        self._log('load').info(f'Unlabeled corpus: {len(unlabeled)} items; labeled: {len(labeled)} items')
        return unlabeled, labeled

    @stage_error_handler('pretrain')
    def pretrain_base(self, images: np.ndarray) -> PretrainResult:
        self._log('pretrain').info('Pretraining with the base augmentation')
        result = pretrain(images, self.config, None, seed=self.config.seed, on_epoch=self._epoch_metrics('pretrain'))
        self._record('initial_encoder', save_encoder(self.out_dir / INITIAL_ENCODER, result, self.config, 'initial'))
        return result

    @stage_error_handler('search')
    def search(self, base: PretrainResult, images: np.ndarray) -> SearchResult:
        config = self.config
        log = self._log('search')
        if config.search.objective == 'selfaugment':
            head, accuracy = train_rotation_head(base.encoder, images, config)
            self.metrics.write('rotation_head', 0, {'accuracy': accuracy})
            result = selfaugment_search(base.encoder, base.projector, head, images, config)
        else:
            result = dda_search(base.encoder, images, config)
        for record in result.log:
            self.metrics.write('search', record['epoch'], {k: v for k, v in record.items() if k != 'epoch'})
        self.artifacts.search_losses = result.epoch_losses
        self._record('policy_params', save_policy_params(self.out_dir / POLICY_PARAMS, result.params, config))
        log.info(f'Search losses by epoch: {[round(v, 4) for v in result.epoch_losses]}')
        return result

    @stage_error_handler('finalize')
    def finalize(self, params: PolicyParams) -> Dict[str, DeployedPolicy]:
        modes = [self.config.augment.finalize_mode] + [
            m for m in self.config.augment.finalize_modes if m != self.config.augment.finalize_mode
        ]
        policies = {}
        for i, mode in enumerate(modes):
            policy = stamped_policy(finalize_policy(params, mode), self.config)
            suffix = SamplingMode(mode).value
            name = self.config.search.objective if i == 0 else f'{self.config.search.objective}-{suffix}'
            filename = POLICY_JSON if i == 0 else f'policy.{suffix}.json'
            self._record(f'policy:{name}', save_policy(policy, self.out_dir / filename))
            if i == 0:
                self._record('policy_heatmap', plot_policy_heatmap(policy, self.out_dir / POLICY_HEATMAP))
            policies[name] = policy
        self.artifacts.policy = next(iter(policies.values()))
        return policies

    @stage_error_handler('retrain')
    def retrain(self, name: str, images: np.ndarray, policy: PolicySource, primary: bool = False) -> PretrainResult:
        """Pretrain a freshly initialized encoder with ``policy``."""
        self._log('retrain').info(f'Retraining a fresh encoder with the {name} policy')
        stage = 'retrain' if primary else f'retrain_{name}'
        result = pretrain(images, self.config, policy, seed=self.config.seed, on_epoch=self._epoch_metrics(stage))
        if primary:
            self._record('final_encoder', save_encoder(self.out_dir / FINAL_ENCODER, result, self.config, 'final'))
        return result

    @stage_error_handler('evaluate')
    def evaluate(self, labeled: ImageCorpus) -> Dict[str, Dict[str, float]]:
        for name, encoder in self.encoders.items():
            scores = evaluate_encoder(encoder, labeled, self.config)
            self.artifacts.evaluations[name] = scores
            self._log('evaluate').info(
                f"{name}: probe {scores['probe_accuracy']:.4f}, kNN {scores['knn_accuracy']:.4f}"
            )
        rows = {
            f'{name}.{metric}': value
            for name, scores in self.artifacts.evaluations.items()
            for metric, value in scores.items()
        }
        self.metrics.write('evaluate', 0, rows)
        return self.artifacts.evaluations

    def write_summary(self, status: str, error: Optional[str] = None) -> Path:
        summary = {
            'run_id': self.run_id,
            'config_hash': self.hash,
            'seed': self.config.seed,
            'status': status,
            'objective': self.config.search.objective,
            'search_losses': self.artifacts.search_losses,
            'evaluations': self.artifacts.evaluations,
            'artifacts': {name: str(path) for name, path in self.artifacts.paths.items()},
        }
        if error is not None:
            summary['error'] = error
        path = self.out_dir / SUMMARY_JSON
        path.write_text(json.dumps(summary, indent=2, sort_keys=True) + '\n', encoding='utf-8')
        return self._record('summary', path)

    def run(self) -> PipelineArtifacts:
        """Execute every stage; on failure the completed artifacts stay on disk."""
        self.write_snapshot()
        try:
            unlabeled, labeled = self.load()
            images = pretraining_images(unlabeled)
            base = self.pretrain_base(images)
            self.encoders['base'] = base.encoder
            searched = self.search(base, images)
            policies = self.finalize(searched.params)
            for i, (name, policy) in enumerate(policies.items()):
                self.encoders[name] = self.retrain(name, images, policy, primary=i == 0).encoder
            for name in self.config.baselines:
                policy = stamped_policy(baseline_policy(name, self.config), self.config)
                self.encoders[name] = self.retrain(name, images, policy).encoder
            self.evaluate(labeled)
        except PipelineStageError as e:
            self.write_summary('failed', str(e))
            e.persisted = [str(p) for p in self.artifacts.paths.values()]
            self._log(e.stage).error(f'Pipeline halted; {len(e.persisted)} artifacts persisted')
            raise
        self._record('loss_curves', plot_loss_curves(read_metrics(self.metrics.path), self.out_dir / LOSS_CURVES))
        self.write_summary('completed')
        self._log('done').info(f'Pipeline finished; artifacts in {self.out_dir}')
        return self.artifacts


def run_pipeline(config: RunConfig, out_dir: Optional[Path] = None) -> PipelineArtifacts:
    """Run the full pipeline for ``config`` and return its artifacts."""
    return Pipeline(config, out_dir).run()
