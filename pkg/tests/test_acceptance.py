"""
End-to-end training runs on the synthetic archetypes.

These take minutes; run them with ./run_tests.sh --all.
"""
import dataclasses

import numpy as np
import pytest

from pointcube.inference import evaluate, part_reason
from pointcube.labels import embed_label_sets, fallback_embed, label_axis_position
from pointcube.synth import SynthSpec, generate
from pointcube.training import TrainConfig, train

pytestmark = pytest.mark.slow

CLASSES = ('slab-table', 'vertical-pole', 'pole-on-slab')
DIM = 256


def _dataset(seed, count):
    return generate([SynthSpec(name, points=512, seed=seed) for name in CLASSES], count)


@pytest.fixture(scope='module')
def train_set():
    return _dataset(seed=0, count=40)


@pytest.fixture(scope='module')
def held_out():
    return _dataset(seed=1000, count=20)


@pytest.fixture(scope='module')
def embeddings(train_set):
    return embed_label_sets(train_set.label_sets, DIM)


def _run(train_set, embeddings, local_mode):
    cfg = TrainConfig(epochs=200, batch_size=8, seed=0, threads=0)
    cfg = dataclasses.replace(cfg, loss=dataclasses.replace(cfg.loss, local_mode=local_mode))
    return train(train_set.manifest, train_set.label_sets, embeddings, cfg, clouds=train_set.clouds)


@pytest.fixture(scope='module')
def hard_run(train_set, embeddings):
    return _run(train_set, embeddings, 'hard')


def test_loss_halves_over_training(hard_run):
    assert hard_run.epoch_losses[-1] <= 0.5 * hard_run.epoch_losses[0]


def test_held_out_classification(hard_run, held_out):
    candidates = embed_label_sets(held_out.classification_sets, DIM)
    report = evaluate(held_out.manifest, held_out.clouds, hard_run.checkpoint, candidates, threads=4)
    assert report.top1 >= 0.90


def test_held_out_reasoning_with_paraphrases(hard_run, held_out):
    candidates = {name: np.stack([fallback_embed(t, DIM) for t in texts])
                  for name, texts in held_out.paraphrases.items()}
    report = evaluate(held_out.manifest, held_out.clouds, hard_run.checkpoint, candidates, threads=4)
    assert report.top1 >= 0.80


def test_soft_mode_keeps_up_with_hard(hard_run, train_set, embeddings, held_out):
    candidates = embed_label_sets(held_out.classification_sets, DIM)
    soft_run = _run(train_set, embeddings, 'soft')

    hard = evaluate(held_out.manifest, held_out.clouds, hard_run.checkpoint, candidates, threads=4).top1
    soft = evaluate(held_out.manifest, held_out.clouds, soft_run.checkpoint, candidates, threads=4).top1

    assert soft >= hard - 0.05


def test_bottom_label_lights_up_the_base(hard_run, embeddings):
    assert label_axis_position(7) == ('z', 'bottom')
    objects = generate(SynthSpec('pole-on-slab', points=512, seed=77), 50).clouds.values()
    prompt = embeddings['pole-on-slab'].local_vectors[7 - 1]

    bottom = [part_reason(cloud, prompt, hard_run.checkpoint).argmax().grid.z == 1 for cloud in objects]

    assert np.mean(bottom) >= 0.90
