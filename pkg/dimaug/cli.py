"""Command-line interface.

Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import List, NoReturn, Optional

import numpy as np
import pandas as pd
from loguru import logger

from dimaug import __version__
from dimaug.augment.policy import load_policy
from dimaug.config import LIDConfig, RunConfig, load_run_config
from dimaug.contrastive.trainer import PretrainResult
from dimaug.data.corpus import write_images, write_packed
from dimaug.data.synthetic import make_toy_corpus
from dimaug.exceptions import DimAugError, UsageError
from dimaug.lid import estimate_lid
from dimaug.logging_setup import configure_logging
from dimaug.search.pipeline import (
    FINAL_ENCODER,
    INITIAL_ENCODER,
    POLICY_JSON,
    Pipeline,
    evaluate_encoder,
    load_corpora,
    load_encoder,
    pretraining_images,
)
from dimaug.settings import AppSettings
from dimaug.visualization.ascii_table import render_policy
from dimaug.visualization.plots import plot_policy_heatmap


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise UsageError(message, usage=self.format_usage(), prog=self.prog)


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per pipeline stage or tool."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=Path, help='Run config file (.toml or .json).')
    common.add_argument('--seed', type=int, help='Override the configured seed.')
    common.add_argument('--out-dir', type=Path, help='Override the configured output directory.')
    common.add_argument('--log-level', default=None, help='Console log level (default from DIMAUG_LOG_LEVEL).')

    parser = _Parser(prog='dimaug', description='Dimensionality-driven augmentation search.')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', required=True)

    sub.add_parser('pretrain', parents=[common], help='Pretrain an encoder with the base augmentation.')

    search = sub.add_parser('search', parents=[common], help='Search a policy on a frozen encoder.')
    search.add_argument('--encoder', type=Path, help=f'Encoder checkpoint (default <out-dir>/{INITIAL_ENCODER}).')

    retrain = sub.add_parser('retrain', parents=[common], help='Pretrain a fresh encoder with a policy.')
    retrain.add_argument('--policy', type=Path, help=f'Policy JSON (default <out-dir>/{POLICY_JSON}).')

    sub.add_parser('pipeline', parents=[common], help='Run pretrain, search, retrain and evaluation.')

    evaluate = sub.add_parser('eval', parents=[common], help='Linear probe and kNN accuracy of an encoder.')
    evaluate.add_argument('--encoder', type=Path, help=f'Encoder checkpoint (default <out-dir>/{FINAL_ENCODER}).')

    lid = sub.add_parser('lid-estimate', parents=[common], help='Estimate LID for every row of a CSV matrix.')
    lid.add_argument('matrix', type=Path, help='CSV of floats, one row per point.')
    lid.add_argument('--output', type=Path, help='Output CSV (default: standard output).')
    lid.add_argument('--k', type=int, default=None, help='Neighbourhood size.')
    lid.add_argument('--estimator', choices=['mom', 'mle'], default=None)

    render = sub.add_parser('render-policy', parents=[common], help='Print a policy as a table.')
    render.add_argument('policy', type=Path, help='Policy JSON file.')
    render.add_argument('--plot', type=Path, help='Also write a heat map image.')

    toy = sub.add_parser('make-toy', parents=[common], help='Write the synthetic toy corpus.')
    toy.add_argument('output', type=Path, help='Packed file, or a directory with --format png.')
    toy.add_argument('--per-class', type=int, default=64)
    toy.add_argument('--format', choices=['packed', 'png'], default='packed')
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Load the config file (or defaults) and apply command-line overrides."""
    config = load_run_config(args.config) if args.config is not None else RunConfig()
    updates = {}
    if args.seed is not None:
        updates['seed'] = args.seed
    if args.out_dir is not None:
        updates['out_dir'] = str(args.out_dir)
    return config.model_copy(update=updates) if updates else config


def _require(path: Path) -> Path:
    if not path.is_file():
        raise FileNotFoundError(f'File not found: {path}')
    return path


def open_run(config: RunConfig) -> Pipeline:
    """Start the run bookkeeping every subcommand shares (config snapshot plus metrics stream)."""
    pipeline = Pipeline(config)
    pipeline.write_snapshot()
    return pipeline


def cmd_pretrain(config: RunConfig) -> int:
    """Pretrain the initial encoder with the base augmentation."""
    pipeline = open_run(config)
    unlabeled, _ = pipeline.load()
    pipeline.pretrain_base(pretraining_images(unlabeled))
    return EXIT_OK


def cmd_search(config: RunConfig, encoder_path: Optional[Path]) -> int:
    """Search and finalize a policy on a saved initial encoder."""
    pipeline = open_run(config)
    encoder, projector, _ = load_encoder(_require(encoder_path or pipeline.out_dir / INITIAL_ENCODER), config)
    unlabeled, _ = pipeline.load()
    searched = pipeline.search(PretrainResult(encoder, projector), pretraining_images(unlabeled))
    policy = pipeline.finalize(searched.params)
    print(render_policy(next(iter(policy.values()))), end='')
    return EXIT_OK


def cmd_retrain(config: RunConfig, policy_path: Optional[Path]) -> int:
    """Pretrain a fresh encoder with a saved policy."""
    pipeline = open_run(config)
    policy = load_policy(_require(policy_path or pipeline.out_dir / POLICY_JSON))
    unlabeled, _ = pipeline.load()
    pipeline.retrain('policy', pretraining_images(unlabeled), policy, primary=True)
    return EXIT_OK


def cmd_eval(config: RunConfig, encoder_path: Optional[Path]) -> int:
    """Probe an encoder checkpoint and print its scores as JSON."""
    pipeline = open_run(config)
    path = _require(encoder_path or pipeline.out_dir / FINAL_ENCODER)
    encoder, _, metadata = load_encoder(path, config)
    _, labeled = load_corpora(config)
    scores = evaluate_encoder(encoder, labeled, config)
    kind = metadata.get('kind') or 'encoder'
    pipeline.metrics.write('evaluate', 0, {f'{kind}.{name}': value for name, value in scores.items()})
    print(json.dumps({'encoder': str(path), 'kind': metadata.get('kind'), **scores}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_lid_estimate(config: RunConfig, args: argparse.Namespace) -> int:
    """Write per-point LID estimates of a CSV matrix."""
    pipeline = open_run(config)
    points = pd.read_csv(_require(args.matrix), header=None).to_numpy(dtype=np.float64)
    updates = {key: value for key, value in (('k', args.k), ('estimator', args.estimator)) if value is not None}
    lid_config = LIDConfig.model_validate({**config.lid.model_dump(), **updates})
    estimates = estimate_lid(points, lid_config)
    frame = pd.DataFrame(
        {
            'query_index': [e.query_index for e in estimates],
            'estimate': [e.estimate for e in estimates],
            'collapse_flag': [int(e.collapsed) for e in estimates],
        }
    )
    if args.output is not None:
        args.output.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(args.output, index=False)
    else:
        frame.to_csv(sys.stdout, index=False)
    median, collapsed = float(frame['estimate'].median()), int(frame['collapse_flag'].sum())
    logger.info(f'LID over {len(frame)} points: median {median:.4f}, {collapsed} collapsed')
    pipeline.metrics.write('lid_estimate', 0, {'points': len(frame), 'median_lid': median, 'collapsed': collapsed})
    return EXIT_OK


def cmd_render_policy(config: RunConfig, args: argparse.Namespace) -> int:
    """Print a policy table and optionally its heat map."""
    pipeline = open_run(config)
    policy = load_policy(_require(args.policy))
    print(render_policy(policy), end='')
    if args.plot is not None:
        plot_policy_heatmap(policy, args.plot, title=args.policy.name)
    pipeline.metrics.write(
        'render_policy', 0, {'subpolicies': len(policy.subpolicies), 'ops': sum(len(s.ops) for s in policy.subpolicies)}
    )
    return EXIT_OK


def cmd_make_toy(config: RunConfig, args: argparse.Namespace) -> int:
    """Write the toy corpus as a packed file or a PNG class tree."""
    if args.per_class < 1:
        raise UsageError(f'--per-class must be positive, got {args.per_class}')
    pipeline = open_run(config)
    corpus = make_toy_corpus(config.seed, args.per_class, config.train.resolution)
    if args.format == 'png':
        write_images(args.output, corpus)
    else:
        write_packed(args.output, corpus.images, corpus.labels)
    logger.info(f'Wrote {len(corpus)} toy images to {args.output}')
    pipeline.metrics.write('make_toy', 0, {'images': len(corpus), 'classes': len(corpus.class_names)})
    return EXIT_OK


def run(args: argparse.Namespace) -> int:
    """Dispatch a parsed command line and return its exit code."""
    config = resolve_config(args)
    if args.command == 'render-policy':
        return cmd_render_policy(config, args)
    if args.command == 'pretrain':
        return cmd_pretrain(config)
    if args.command == 'search':
        return cmd_search(config, args.encoder)
    if args.command == 'retrain':
        return cmd_retrain(config, args.policy)
    if args.command == 'pipeline':
        Pipeline(config).run()
        return EXIT_OK
    if args.command == 'eval':
        return cmd_eval(config, args.encoder)
    if args.command == 'lid-estimate':
        return cmd_lid_estimate(config, args)
    return cmd_make_toy(config, args)


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one subcommand and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f'{e.usage}{e.prog}: error: {e}', file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        return EXIT_OK if e.code is None else int(e.code)
    log_file = args.out_dir / 'run.log' if args.out_dir is not None else None
    configure_logging(args.log_level or AppSettings.LOG_LEVEL, log_file, serialize=AppSettings.LOG_JSON)
    try:
        return run(args)
    except UsageError as e:
        print(f'{e.prog}: error: {e}', file=sys.stderr)
        return EXIT_USAGE
    except (DimAugError, OSError) as e:
        logger.error(f'{args.command} failed: {e}')
        return EXIT_RUNTIME


if __name__ == '__main__':
    sys.exit(main())
