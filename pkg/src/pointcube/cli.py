"""
Command-line entry point.

    pointcube [--log-level LEVEL] <subcommand> [options]

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Logs go to standard error as JSON; results go to the paths given (or
standard output for rankings and reports).
"""

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .blocks import FRAMES, partition, partition_record
from .config_utils import apply_overrides, load_config
from .errors import DataError, NumericError, PointCubeError, UsageError
from .geometry import load_entry, load_manifest, load_xyz, merge_clouds, normalize
from .gradcheck import model_gradcheck
from .inference import (embed_object, embed_objects, evaluate, export_embeddings, export_heatmap,
                        part_reason, rank_classes)
from .labels import (FALLBACK_DIM, classification_labels, embed_label_sets, fallback_embed,
                     ingest_embeddings, ingest_global_embeddings, read_label_texts, write_embeddings)
from .logging_utils import setup_logging
from .losses import KERNEL_MODES, LOCAL_MODES
from .synth import ARCHETYPES, SynthSpec, generate, write_dataset
from .training import load_checkpoint, save_checkpoint, train

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

# flag dest -> config key it overrides
FLAG_OVERRIDES = {
    'seed': 'train.seed',
    'tau': 'loss.tau',
    'kernel': 'loss.kernel_mode',
    'local_loss': 'loss.local_mode',
    'min_points': 'loss.min_points',
    'd_e': 'model.d_e',
    'd_out': 'model.d_out',
    'frame': 'train.frame',
    'threads': 'train.threads',
}


@dataclass
class CliConfig:
    subcommand: str
    config_path: Path | None = None
    overrides: list = field(default_factory=list)


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting."""

    def error(self, message):
        raise UsageError(message, usage=self.format_usage())


def _common_options():
    common = CliParser(add_help=False)
    group = common.add_argument_group('configuration')
    group.add_argument('--config', type=Path, help='TOML config with [train], [model], [loss]')
    group.add_argument('--set', dest='overrides', action='append', default=[], metavar='SECTION.KEY=VALUE',
                       help='Override one config key (repeatable)')
    group.add_argument('--seed', type=int)
    group.add_argument('--tau', type=float)
    group.add_argument('--kernel', choices=KERNEL_MODES)
    group.add_argument('--local-loss', choices=LOCAL_MODES)
    group.add_argument('--min-points', type=int)
    group.add_argument('--d-e', type=int)
    group.add_argument('--d-out', type=int)
    group.add_argument('--frame', choices=FRAMES)
    group.add_argument('--threads', type=int, help='Worker threads (0 = machine parallelism)')
    return common


def build_parser():
    parser = CliParser(prog='pointcube', description='Global/local contrastive 3D understanding over 3x3x3 blocks')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    parser.add_argument('--log-level', help='DEBUG, INFO, WARNING or ERROR (default from POINTCUBE_LOG_LEVEL)')
    sub = parser.add_subparsers(dest='command', required=True, parser_class=CliParser)
    common = _common_options()

    p = sub.add_parser('synth', parents=[common], help='Write a synthetic dataset')
    p.add_argument('--out', type=Path, required=True)
    p.add_argument('--archetype', action='append', choices=ARCHETYPES,
                   help='Archetype to include (repeatable; default slab-table, vertical-pole, pole-on-slab)')
    p.add_argument('--count', type=int, default=40, help='Objects per archetype')
    p.add_argument('--points', type=int, default=512)
    p.add_argument('--jitter', type=float, default=0.01)
    p.add_argument('--dim', type=int, default=FALLBACK_DIM, help='Fallback embedding width')

    p = sub.add_parser('partition-dump', parents=[common], help='Write partition audit records as JSON lines')
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument('--object', type=Path)
    source.add_argument('--manifest', type=Path)
    p.add_argument('--out', type=Path, required=True)

    p = sub.add_parser('embed-labels', parents=[common], help='Fallback-embed label texts')
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument('--labels', type=Path, help='JSON-lines label text records')
    source.add_argument('--classes', nargs='+', help='Class names for classification labels')
    p.add_argument('--out', type=Path, required=True)
    p.add_argument('--dim', type=int, default=FALLBACK_DIM)

    p = sub.add_parser('train', parents=[common], help='Train and write a checkpoint')
    p.add_argument('--manifest', type=Path, required=True)
    p.add_argument('--embeddings', type=Path, required=True)
    p.add_argument('--out', type=Path, required=True, help='Checkpoint path')
    p.add_argument('--metrics', type=Path, help='JSON-lines metrics path')

    for name, helptext in (('classify', 'Rank classes by global similarity'),
                           ('reason', 'Rank classes against reasoning prompts')):
        p = sub.add_parser(name, parents=[common], help=helptext)
        source = p.add_mutually_exclusive_group(required=True)
        source.add_argument('--object', type=Path)
        source.add_argument('--manifest', type=Path, help='Report top-1 accuracy over a manifest')
        p.add_argument('--ckpt', type=Path, required=True)
        p.add_argument('--embeddings', type=Path, required=True)

    p = sub.add_parser('part-reason', parents=[common], help='Score the 27 blocks against a prompt')
    p.add_argument('--prompt-file', type=Path, required=True,
                   help='Prompt text (fallback-embedded) or a JSON list holding a raw embedding')
    p.add_argument('--object', type=Path, action='append', required=True,
                   help='Object file; repeat to merge several objects into one scene')
    p.add_argument('--offset', action='append', default=[], metavar='X,Y,Z',
                   help='Shift of the matching --object (multi-object scenes)')
    p.add_argument('--ckpt', type=Path, required=True)
    p.add_argument('--out-json', type=Path)
    p.add_argument('--out-ply', type=Path)

    p = sub.add_parser('gradcheck', parents=[common], help='Finite-difference check of the backward pass')
    p.add_argument('--samples', type=int, default=200)
    p.add_argument('--tol', type=float, default=1e-3)

    p = sub.add_parser('export-embeddings', parents=[common], help='Write global/local embeddings to .npz')
    p.add_argument('--manifest', type=Path, required=True)
    p.add_argument('--ckpt', type=Path, required=True)
    p.add_argument('--out', type=Path, required=True)
    return parser


def cli_config(args):
    overrides = [f"{key}={getattr(args, dest)}" for dest, key in FLAG_OVERRIDES.items()
                 if getattr(args, dest, None) is not None]
    return CliConfig(args.command, args.config, list(args.overrides) + overrides)


def resolve_config(cli):
    """File (or defaults), then --set overrides, then dedicated flags."""
    return apply_overrides(load_config(cli.config_path), cli.overrides)


def _emit(record):
    print(json.dumps(record))


def cmd_synth(args, cfg):
    archetypes = args.archetype or ['slab-table', 'vertical-pole', 'pole-on-slab']
    try:
        specs = [SynthSpec(a, points=args.points, jitter=args.jitter, seed=cfg.seed) for a in archetypes]
    except ValueError as e:
        raise UsageError(str(e))
    paths = write_dataset(generate(specs, args.count), args.out, args.dim)
    _emit({'manifest': str(paths.manifest), 'embeddings': str(paths.embeddings),
           'classification': str(paths.classification), 'paraphrases': str(paths.paraphrases)})


def cmd_partition_dump(args, cfg):
    if args.object is not None:
        clouds = [load_xyz(args.object)]
    else:
        clouds = [load_entry(e) for e in load_manifest(args.manifest).entries]
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, 'w', encoding='utf-8') as f:
        for cloud in clouds:
            part = partition(normalize(cloud), min_points=cfg.loss.min_points, frame=cfg.frame)
            f.write(json.dumps(partition_record(cloud, part)) + '\n')
    logger.info(f"Wrote {len(clouds)} partition records to {args.out}")


def cmd_embed_labels(args, cfg):
    label_sets = read_label_texts(args.labels) if args.labels else classification_labels(args.classes)
    write_embeddings(embed_label_sets(label_sets, args.dim), args.out)
    logger.info(f"Embedded {len(label_sets)} label sets into {args.out}")


def cmd_train(args, cfg):
    manifest = load_manifest(args.manifest)
    embeddings = ingest_embeddings(args.embeddings)
    result = train(manifest, None, embeddings, cfg, metrics_path=args.metrics)
    save_checkpoint(result.checkpoint, args.out)
    _emit({'checkpoint': str(args.out), 'steps': result.checkpoint.step,
           'initial_loss': result.epoch_losses[0], 'final_loss': result.epoch_losses[-1]})


def _rank(args, candidates):
    ckpt = load_checkpoint(args.ckpt)
    if args.manifest is not None:
        report = evaluate(load_manifest(args.manifest), None, ckpt, candidates, threads=ckpt.config.workers)
        _emit({'top1': report.top1, 'per_class': report.per_class})
        return
    _, out = embed_object(load_xyz(args.object), ckpt)
    for rank, s in enumerate(rank_classes(out.global_emb.vector, ckpt.params, candidates), start=1):
        _emit({'rank': rank, 'class': s.class_name, 'score': s.score})


def cmd_classify(args, cfg):
    _rank(args, ingest_embeddings(args.embeddings))


def cmd_reason(args, cfg):
    _rank(args, ingest_global_embeddings(args.embeddings))


def _read_prompt(path, dim):
    try:
        text = Path(path).read_text(encoding='utf-8').strip()
    except OSError as e:
        raise DataError(f"Cannot read prompt file {path}: {e}")
    if text.startswith('['):
        try:
            vector = np.asarray(json.loads(text), dtype=np.float64)
        except (json.JSONDecodeError, TypeError, ValueError) as e:
            raise DataError(f"Prompt file {path} is not a JSON vector: {e}")
        if vector.ndim != 1 or not np.all(np.isfinite(vector)):
            raise DataError(f"Prompt file {path} must hold a flat list of finite numbers")
        return vector, None
    return fallback_embed(text, dim), text


def _parse_offset(text):
    try:
        values = [float(v) for v in text.split(',')]
    except ValueError:
        values = []
    if len(values) != 3:
        raise UsageError(f"--offset must be X,Y,Z, got {text!r}")
    return values


def cmd_part_reason(args, cfg):
    ckpt = load_checkpoint(args.ckpt)
    clouds = [load_xyz(p) for p in args.object]
    if args.offset and len(args.offset) != len(clouds):
        raise UsageError("give one --offset per --object or none")
    if len(clouds) == 1 and not args.offset:
        cloud = clouds[0]
    else:
        offsets = [_parse_offset(o) for o in args.offset] if args.offset else None
        cloud = merge_clouds(clouds, offsets, object_id='+'.join(c.id for c in clouds))
    embedding, text = _read_prompt(args.prompt_file, ckpt.params.config.d_et)
    heatmap = part_reason(cloud, embedding, ckpt, prompt_text=text)
    stem = args.object[0].with_suffix('')
    out_json = args.out_json or stem.with_name(stem.name + '.heatmap.json')
    out_ply = args.out_ply or stem.with_name(stem.name + '.heatmap.ply')
    export_heatmap(heatmap, cloud, out_json, out_ply)
    best = heatmap.argmax()
    _emit({'json': str(out_json), 'ply': str(out_ply), 'best_block': best.j,
           'grid': list(best.grid), 'score': best.score})


def cmd_gradcheck(args, cfg):
    modes = [args.local_loss] if args.local_loss else ['hard', 'soft']
    for mode in modes:
        report = model_gradcheck(seed=cfg.seed, local_mode=mode, samples=args.samples, tol=args.tol,
                                 kernel_mode=cfg.loss.kernel_mode)
        _emit({'local_mode': mode, 'max_rel_err': report.max_rel_err, 'checked': report.checked,
               'skipped': report.skipped, 'passed': report.passed})


def cmd_export_embeddings(args, cfg):
    ckpt = load_checkpoint(args.ckpt)
    export_embeddings(embed_objects(load_manifest(args.manifest), None, ckpt), args.out)


COMMANDS = {
    'synth': cmd_synth,
    'partition-dump': cmd_partition_dump,
    'embed-labels': cmd_embed_labels,
    'train': cmd_train,
    'classify': cmd_classify,
    'reason': cmd_reason,
    'part-reason': cmd_part_reason,
    'gradcheck': cmd_gradcheck,
    'export-embeddings': cmd_export_embeddings,
}


def run(argv=None):
    """
    Parse arguments, run one subcommand and map errors to exit codes.

    Returns:
        Process exit code
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        sys.stderr.write(f"{e.usage or parser.format_usage()}pointcube: error: {e}\n")
        return EXIT_USAGE
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_OK

    setup_logging('pointcube', level=args.log_level)
    try:
        cli = cli_config(args)
        cfg = resolve_config(cli)
        logger.debug(f"Running {cli.subcommand} with overrides {cli.overrides}")
        COMMANDS[args.command](args, cfg)
    except UsageError as e:
        sys.stderr.write(f"{e.usage or parser.format_usage()}pointcube: error: {e}\n")
        return EXIT_USAGE
    except DataError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_DATA
    except NumericError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_NUMERIC
    except PointCubeError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_DATA
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_DATA
    return EXIT_OK


def main():
    sys.exit(run())
