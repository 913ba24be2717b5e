import json

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from pointcube.errors import (DataError, DimensionMismatch, EmptyText, MalformedLine, MissingEmbeddings,
                              MissingLocalK, ZeroVector)
from pointcube.labels import (LabelSet, TextEmbeddingSet, classification_labels, embed_label_sets,
                              embedding_checksum, fallback_embed, ingest_embeddings,
                              ingest_global_embeddings, label_axis_position, read_label_texts,
                              render_prompts, write_embeddings, write_global_embeddings)


def _write_records(path, records):
    path.write_text(''.join(json.dumps(r) + '\n' for r in records))


def _class_records(name, dim=4, skip_k=None, globals_=1):
    records = [{'class': name, 'kind': 'global', 'text': f'{name} {g}', 'vector': [1.0] + [0.0] * (dim - 1)}
               for g in range(globals_)]
    for k in range(1, 10):
        if k != skip_k:
            records.append({'class': name, 'kind': 'local', 'k': k, 'text': f'{name} part {k}',
                            'vector': [0.0] * (k % dim) + [1.0] + [0.0] * (dim - 1 - k % dim)})
    return records


@pytest.mark.parametrize('k, expected', [(1, ('x', 'left')), (5, ('y', 'center')), (9, ('z', 'top')),
                                         (7, ('z', 'bottom'))])
def test_label_axis_position(k, expected):
    assert label_axis_position(k) == expected


def test_render_prompts_fills_templates():
    bundle = render_prompts('lamp')

    assert bundle.global_prompt == 'Give a one-sentence description of lamp'
    assert len(bundle.local_prompts) == 9
    assert bundle.local_prompts[0].startswith('For the left region of the x-axis of lamp')
    assert 'bottom region of the z-axis' in bundle.local_prompts[6]
    assert 'EXACTLY ONE sentence' in bundle.local_prompts[8]
    assert not any(line.startswith('#') for line in bundle.guidance.splitlines())


def test_classification_labels():
    sets = classification_labels(['chair', 'table'])

    assert list(sets) == ['chair', 'table']
    assert sets['chair'].global_labels == ('chair',)
    assert sets['table'].local_labels[0] == 'left region of the x-axis for table'
    assert sets['table'].local_labels[8] == 'top region of the z-axis for table'
    with pytest.raises(DataError):
        classification_labels([])


def test_label_set_requires_nine_local_labels():
    with pytest.raises(DataError):
        LabelSet('chair', ('a chair',), ('x',) * 8)
    with pytest.raises(DataError):
        LabelSet('chair', (), ('x',) * 9)


def test_fallback_embed_is_deterministic_and_unit_norm():
    a = fallback_embed('A wide flat top resting on four thin legs', dim=64)
    b = fallback_embed('a wide, flat top -- resting on four thin legs!', dim=64)

    assert_array_equal(a, b)
    assert np.linalg.norm(a) == pytest.approx(1.0)
    assert a.shape == (64,)


def test_fallback_embed_separates_texts():
    a = fallback_embed('a single thin rod standing upright')
    b = fallback_embed('a round hollow sphere with a curved surface')
    assert float(a @ b) < 0.9


def test_fallback_embed_rejects_empty_text():
    with pytest.raises(EmptyText):
        fallback_embed('  ...  ')


def test_text_embedding_set_is_frozen():
    s = TextEmbeddingSet('c', np.ones((1, 3)), np.eye(9, 3) + 0.1)
    with pytest.raises(ValueError):
        s.global_vectors[0, 0] = 2.0
    assert s.dim == 3


def test_write_and_ingest_round_trip(tmp_path):
    sets = embed_label_sets(classification_labels(['chair', 'lamp']), dim=16)
    path = tmp_path / 'embeddings.jsonl'

    write_embeddings(sets, path)
    loaded = ingest_embeddings(path)

    assert list(loaded) == ['chair', 'lamp']
    assert loaded['lamp'].local_texts == sets['lamp'].local_texts
    assert embedding_checksum(loaded) == embedding_checksum(sets)


def test_ingest_reports_missing_local_label(tmp_path):
    path = tmp_path / 'e.jsonl'
    _write_records(path, _class_records('chair', skip_k=7))

    with pytest.raises(MissingLocalK) as excinfo:
        ingest_embeddings(path)
    assert (excinfo.value.class_name, excinfo.value.k) == ('chair', 7)


def test_ingest_requires_a_global_label(tmp_path):
    path = tmp_path / 'e.jsonl'
    _write_records(path, _class_records('chair', globals_=0))
    with pytest.raises(MissingEmbeddings):
        ingest_embeddings(path)


def test_ingest_rejects_mixed_dimensions(tmp_path):
    path = tmp_path / 'e.jsonl'
    _write_records(path, _class_records('chair', dim=4) + _class_records('lamp', dim=5))
    with pytest.raises(DimensionMismatch) as excinfo:
        ingest_embeddings(path)
    assert (excinfo.value.expected, excinfo.value.got) == (4, 5)


def test_ingest_rejects_zero_vector(tmp_path):
    records = _class_records('chair')
    records[3]['vector'] = [0.0, 0.0, 0.0, 0.0]
    path = tmp_path / 'e.jsonl'
    _write_records(path, records)
    with pytest.raises(ZeroVector):
        ingest_embeddings(path)


@pytest.mark.parametrize('line', ['{not json', '{"kind": "global", "vector": [1]}',
                                  '{"class": "c", "kind": "local", "k": 10, "vector": [1]}'])
def test_ingest_rejects_malformed_records(tmp_path, line):
    path = tmp_path / 'e.jsonl'
    path.write_text(line + '\n')
    with pytest.raises(MalformedLine) as excinfo:
        ingest_embeddings(path)
    assert excinfo.value.line_no == 1


@pytest.mark.parametrize('vector', ['"warm"', '["a", "b"]', '[[1, 2], [3]]', '{"x": 1}', '[1, NaN]', '[]'])
def test_ingest_rejects_non_numeric_vectors(tmp_path, vector):
    path = tmp_path / 'e.jsonl'
    path.write_text('{"class": "c", "kind": "global", "text": "ok", "vector": [1, 2]}\n'
                    f'{{"class": "c", "kind": "global", "text": "bad", "vector": {vector}}}\n')

    for ingest in (ingest_embeddings, ingest_global_embeddings):
        with pytest.raises(MalformedLine) as excinfo:
            ingest(path)
        assert excinfo.value.line_no == 2


def test_ingest_global_embeddings_skips_local_records(tmp_path):
    path = tmp_path / 'prompts.jsonl'
    write_global_embeddings({'ball': ['a smooth spherical shell', 'a round ball'], 'pole': ['a tall post']},
                            path, dim=8)
    with open(path, 'a') as f:
        f.write(json.dumps({'class': 'pole', 'kind': 'local', 'k': 1, 'vector': [1.0] * 8}) + '\n')

    vectors = ingest_global_embeddings(path)

    assert vectors['ball'].shape == (2, 8)
    assert vectors['pole'].shape == (1, 8)
    assert_array_equal(vectors['pole'][0], fallback_embed('a tall post', 8))


def test_read_label_texts(tmp_path):
    path = tmp_path / 'labels.jsonl'
    _write_records(path, _class_records('chair', globals_=2))

    label_sets = read_label_texts(path)

    assert label_sets['chair'].global_labels == ('chair 0', 'chair 1')
    assert label_sets['chair'].local_labels[4] == 'chair part 5'


def test_checksum_changes_with_any_vector():
    sets = embed_label_sets(classification_labels(['chair']), dim=8)
    before = embedding_checksum(sets)
    s = sets['chair']
    local = s.local_vectors.copy()
    local[8, 0] += 1e-12
    sets['chair'] = TextEmbeddingSet('chair', s.global_vectors, local)

    assert embedding_checksum(sets) != before
