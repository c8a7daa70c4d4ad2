import json

import numpy as np
import pandas as pd
import pytest

from dimaug.augment.policy import PolicyParams, load_policy
from dimaug.config import RunConfig, config_hash
from dimaug.contrastive.checkpoint import load_checkpoint
from dimaug.exceptions import PipelineStageError, SearchError
from dimaug.metrics import read_metrics
from dimaug.search.pipeline import (
    CONFIG_SNAPSHOT,
    FINAL_ENCODER,
    INITIAL_ENCODER,
    METRICS_CSV,
    POLICY_JSON,
    POLICY_PARAMS,
    SUMMARY_JSON,
    Pipeline,
    baseline_policy,
    load_corpora,
    load_encoder,
    run_pipeline,
)

from .conftest import tiny_config_dict


pytestmark = pytest.mark.slow


class TestPipelineRun:
    def test_artifacts_are_written(self, tiny_config):
        artifacts = run_pipeline(tiny_config)
        out = artifacts.out_dir
        for name in (INITIAL_ENCODER, POLICY_PARAMS, POLICY_JSON, FINAL_ENCODER, METRICS_CSV, CONFIG_SNAPSHOT, SUMMARY_JSON):
            assert (out / name).is_file(), name
        summary = json.loads((out / SUMMARY_JSON).read_text())
        assert summary['status'] == 'completed'
        assert summary['config_hash'] == config_hash(tiny_config)
        assert set(summary['evaluations']) == {'base', 'dda'}
        assert len(summary['search_losses']) == tiny_config.search.epochs

    def test_policy_and_checkpoints_carry_provenance(self, tiny_config):
        artifacts = run_pipeline(tiny_config)
        policy = load_policy(artifacts.out_dir / POLICY_JSON)
        assert policy.provenance == {'config_hash': config_hash(tiny_config), 'seed': 0}
        assert len(policy.subpolicies) == tiny_config.augment.n_subpolicies
        arrays, metadata = load_checkpoint(artifacts.out_dir / POLICY_PARAMS)
        assert metadata['kind'] == 'policy_params'
        params = PolicyParams.from_state(arrays, metadata)
        assert params.n_subpolicies == tiny_config.augment.n_subpolicies
        _, _, encoder_meta = load_encoder(artifacts.out_dir / FINAL_ENCODER, tiny_config)
        assert encoder_meta['config_hash'] == config_hash(tiny_config)

    def test_metrics_stream_covers_every_stage(self, tiny_config):
        artifacts = run_pipeline(tiny_config)
        frame = read_metrics(artifacts.out_dir / METRICS_CSV)
        assert list(dict.fromkeys(frame['stage'])) == ['pretrain', 'search', 'retrain', 'evaluate']
        assert set(frame['run_id']) == {artifacts.run_id}

    def test_seeded_runs_reproduce_policy_and_metrics(self, tiny_config, tmp_path):
        first = Pipeline(tiny_config, tmp_path / 'a').run()
        second = Pipeline(tiny_config, tmp_path / 'b').run()
        assert (first.out_dir / POLICY_JSON).read_text() == (second.out_dir / POLICY_JSON).read_text()
        assert first.search_losses == second.search_losses
        rows = [read_metrics(run.out_dir / METRICS_CSV) for run in (first, second)]
        rows = [frame[frame['metric'] != 'seconds'].drop(columns='run_id').reset_index(drop=True) for frame in rows]
        assert len(rows[0]) > 0
        pd.testing.assert_frame_equal(rows[0].drop(columns='value'), rows[1].drop(columns='value'))
        np.testing.assert_allclose(rows[0]['value'], rows[1]['value'], rtol=0, atol=1e-4)

    def test_baselines_and_extra_modes(self, tmp_path):
        raw = tiny_config_dict(
            tmp_path / 'run',
            baselines=['random', 'excessive', 'manual'],
            augment={'n_subpolicies': 2, 'finalize_modes': ['argmax']},
        )
        artifacts = run_pipeline(RunConfig.model_validate(raw))
        assert set(artifacts.evaluations) == {'base', 'dda', 'dda-argmax', 'random', 'excessive', 'manual'}
        assert (artifacts.out_dir / 'policy.argmax.json').is_file()

    def test_selfaugment_objective(self, tmp_path):
        raw = tiny_config_dict(tmp_path / 'run', search={'objective': 'selfaugment'})
        artifacts = run_pipeline(RunConfig.model_validate(raw))
        assert 'selfaugment' in artifacts.evaluations
        stages = set(read_metrics(artifacts.out_dir / METRICS_CSV)['stage'])
        assert 'rotation_head' in stages


class TestPipelineFailure:
    def test_failed_search_keeps_earlier_artifacts(self, tiny_config, mocker):
        mocker.patch('dimaug.search.pipeline.dda_search', side_effect=SearchError('Non-finite search loss nan'))
        pipeline = Pipeline(tiny_config)
        with pytest.raises(PipelineStageError) as info:
            pipeline.run()
        assert info.value.stage == 'search'
        assert str(pipeline.out_dir / INITIAL_ENCODER) in info.value.persisted
        assert (pipeline.out_dir / INITIAL_ENCODER).is_file()
        assert not (pipeline.out_dir / POLICY_JSON).exists()
        summary = json.loads((pipeline.out_dir / SUMMARY_JSON).read_text())
        assert summary['status'] == 'failed'
        assert 'search' in summary['error']

    def test_missing_corpus_fails_in_load(self, tmp_path):
        raw = tiny_config_dict(tmp_path / 'run', data={'path': str(tmp_path / 'nowhere')})
        with pytest.raises(PipelineStageError, match="'load'"):
            run_pipeline(RunConfig.model_validate(raw))


def test_unknown_baseline(tiny_config):
    with pytest.raises(ValueError, match='Unknown baseline'):
        baseline_policy('autoaugment', tiny_config)


def test_toy_corpus_serves_both_roles(tiny_config):
    unlabeled, labeled = load_corpora(tiny_config)
    assert unlabeled is labeled
    assert np.all(labeled.labels < 3)
