import io
import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from deuteropt.dataset import (
    Dataset,
    DatasetError,
    Record,
    complement,
    fc_like_truth,
    load_dataset,
    one_cold,
    parse_feature_vector,
    r_squared,
    render_feature_vector,
    render_hd,
    save_dataset,
    select_training_set,
    synth_dataset,
)
from deuteropt.hamiltonian import QuboModel


@pytest.mark.parametrize(
    "text, bits",
    [
        ("[111111]", (1, 1, 1, 1, 1, 1)),
        ("[000000]", (0, 0, 0, 0, 0, 0)),
        ("100110", (1, 0, 0, 1, 1, 0)),
    ],
)
def test_parse_feature_vector(text, bits):
    assert parse_feature_vector(text) == bits


@pytest.mark.parametrize("bad", ["", "[]", "10a1", "1021"])
def test_parse_feature_vector_rejects(bad):
    with pytest.raises(DatasetError):
        parse_feature_vector(bad)


def test_render_roundtrip_all_six_bit_strings():
    for bits in itertools.product("01", repeat=6):
        s = "".join(bits)
        assert render_feature_vector(parse_feature_vector(s)) == s
        assert render_feature_vector(parse_feature_vector(f"[{s}]"), brackets=True) == f"[{s}]"


def test_render_hd():
    assert render_hd(parse_feature_vector("100110")) == "HDDHHD"


def test_load_table1_rows():
    ds = load_dataset(b"bitstring,value\n000000,1.15E-05\r\n111111,2.71E-05\n", 6)
    assert ds.records[0] == Record((0,) * 6, 1.15e-5)
    assert ds.records[1] == Record((1,) * 6, 2.71e-5)


@pytest.mark.parametrize(
    "payload, message",
    [
        (b"", "no records"),
        (b"bitstring,value\n", "no records"),
        (b"bitstring,value\n000000,1.0\n000000,2.0\n", "duplicate"),
        (b"bitstring,value\n00000,1.0\n", "length mismatch"),
        (b"bitstring,value\n000000\n", "malformed"),
        (b"bitstring,value\n000000,abc\n", "line 2"),
        (b"x,y\n000000,1\n", "header"),
    ],
)
def test_load_dataset_errors(payload, message):
    with pytest.raises(DatasetError, match=message):
        load_dataset(io.BytesIO(payload), 6)


def test_save_load_bit_exact():
    ds = synth_dataset(fc_like_truth(6, 3), noise_sigma=1e-7, seed=5)
    again = load_dataset(save_dataset(ds), 6)
    assert again.records == ds.records


def _full():
    return synth_dataset(fc_like_truth(6, 0))


@pytest.mark.parametrize("stage, size", [(0, 3), (4, 11), (5, 13)])
def test_select_training_set_sizes(stage, size):
    train, test = select_training_set(_full(), stage, seed=11)
    assert len(train) == size
    assert len(test) == 64 - size


def test_select_training_set_stage0_content():
    train, _ = select_training_set(_full(), 0, seed=2)
    xs = [r.x for r in train]
    assert xs[0] == (1,) * 6
    assert sum(xs[1]) == 5 and xs[2] == complement(xs[1])


@given(stage=st.integers(0, 5), seed=st.integers(0, 2**31))
def test_select_training_set_partition(stage, seed):
    ds = _full()
    train, test = select_training_set(ds, stage, seed)
    tr = {r.x for r in train}
    te = {r.x for r in test}
    assert tr | te == {r.x for r in ds}
    assert not tr & te
    for x in tr:
        if sum(x) == 5:
            assert complement(x) in tr


def test_select_training_set_is_incremental():
    ds = _full()
    prev = set()
    for stage in range(6):
        cur = {r.x for r in select_training_set(ds, stage, 7)[0]}
        assert prev < cur
        prev = cur


def test_select_training_set_errors():
    ds = _full()
    with pytest.raises(DatasetError, match="stage"):
        select_training_set(ds, 6, 0)
    partial = Dataset(tuple(r for r in ds.records if r.x != one_cold(6, 2)), 6)
    with pytest.raises(DatasetError, match="lacks"):
        select_training_set(partial, 0, 0)


def test_r_squared_examples():
    t = [1.0, 3.0, 2.0, 7.0]
    assert r_squared(t, t) == pytest.approx(1.0)
    assert r_squared([2 * v + 5 for v in t], t) == pytest.approx(1.0)
    # hand evaluation: r = 3 / sqrt(2 * 14/3), r^2 = 27/28
    assert r_squared([1, 2, 3], [1, 2, 4]) == pytest.approx(0.9643, abs=1e-4)
    assert r_squared([1, 2, 3], [1, 2, 4]) == pytest.approx(27 / 28, rel=1e-12)


def test_r_squared_errors():
    with pytest.raises(ValueError):
        r_squared([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        r_squared([1, 1, 1], [1, 2, 3])


@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=20), st.integers(0, 1000))
def test_r_squared_symmetric(a, seed):
    b = np.random.default_rng(seed).normal(size=len(a))
    a = np.asarray(a)
    if np.ptp(a) < 1e-6:
        return
    assert r_squared(a, b) == pytest.approx(r_squared(b, a), abs=1e-12)
    assert r_squared(a, -a) == pytest.approx(1.0)
    assert 0.0 <= r_squared(a, b) <= 1.0


def test_synth_dataset_examples():
    zero = synth_dataset(QuboModel.zeros(6))
    assert all(r.y == 0.0 for r in zero)
    assert len(zero) == 64
    single = synth_dataset(QuboModel.from_terms(6, {0: 1.0}))
    assert all(r.y == r.x[0] for r in single)
    noisy_a = synth_dataset(fc_like_truth(6, 1), 1e-7, seed=9)
    noisy_b = synth_dataset(fc_like_truth(6, 1), 1e-7, seed=9)
    assert noisy_a.records == noisy_b.records


def test_synth_dataset_too_large():
    with pytest.raises(DatasetError):
        synth_dataset(QuboModel.zeros(17))


def test_fc_like_truth_is_monotone():
    ds = synth_dataset(fc_like_truth(6, 4))
    table = ds.lookup()
    for x, y in table.items():
        for i in range(6):
            if x[i] == 0:
                up = x[:i] + (1,) + x[i + 1:]
                assert table[up] > y
