import json

import numpy as np
import pytest

from linktrace.design import (
    DesignParams,
    ObservedSample,
    ReducedData,
    draw_sample,
    observe,
    read_sample,
    reduce,
    sample_from_dict,
    sample_to_dict,
    with_roles,
    write_sample,
)

from conftest import fig1_sample, four_population, four_sample, small_population


def test_params_validation_and_broadcast():
    p = DesignParams([0.2, 0.3], 0.5)
    assert p.beta.shape == (2, 2)
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        DesignParams([1.2], 0.5)
    with pytest.raises(ValueError, match="2x2"):
        DesignParams([0.2, 0.3], np.ones((3, 3)))
    assert DesignParams.from_dict(p.to_dict()).to_dict() == p.to_dict()
    with pytest.raises(ValueError, match="number of strata"):
        DesignParams.from_dict({"alpha": 0.1})


def test_census_design():
    pop = four_population()
    d0 = draw_sample(pop, DesignParams.uniform(1, 1.0, 0.5), np.random.default_rng(0))
    assert d0.units.tolist() == [1, 2, 3, 4]
    assert d0.waves.tolist() == [0, 0, 0, 0]


def test_no_tracing():
    pop = small_population(2)
    for seed in range(5):
        d0 = draw_sample(pop, DesignParams.uniform(2, 0.3, 0.0), np.random.default_rng(seed))
        assert np.all(d0.waves == 0)


def test_forced_initial_full_tracing():
    pop = four_population()
    d0 = draw_sample(pop, DesignParams.uniform(1, 0.0, 1.0, certainty_units=[1, 2]), np.random.default_rng(0))
    assert d0.units[d0.initial].tolist() == [1, 2]
    assert d0.units[~d0.initial].tolist() == [3, 4]


def test_observed_fields(four):
    assert four.out_counts.ravel().tolist() == [2, 2, 1, 1]
    assert four.adj.astype(int).tolist() == [[0, 1, 1, 0], [1, 0, 0, 1], [0, 0, 0, 1], [0, 0, 1, 0]]
    assert four.responses["z"].tolist() == [1.0, 3.0, 2.0, 5.0]
    assert "degree" in four.responses
    assert four.n0.tolist() == [2]


def test_reduce_counts(four):
    dR = reduce(four)
    assert isinstance(dR, ReducedData)
    assert dR.n0.tolist() == [2]
    assert not hasattr(dR, "waves")


def test_reduce_without_wave_one():
    pop = four_population()
    dR = reduce(observe(pop, [1, 2, 3], [], DesignParams.uniform(1, 0.5, 0.5)))
    assert dR.n == int(dR.n0.sum()) == 3


def _same_reduced(a, b):
    return sample_to_dict(a) == sample_to_dict(b)


def test_reordering_pair_gives_same_reduced_data():
    d0 = fig1_sample()
    v = with_roles(d0, [3, 2])
    assert v.units[v.initial].tolist() == [2, 3]
    assert _same_reduced(reduce(d0), reduce(v))
    assert not _same_reduced(d0, v)


def test_observe_rejects_overlap_and_k_mismatch():
    pop = four_population()
    with pytest.raises(ValueError, match="both"):
        observe(pop, [1, 2], [2], DesignParams.uniform(1, 0.5, 0.5))
    with pytest.raises(ValueError, match="strata"):
        observe(pop, [1], [], DesignParams.uniform(2, 0.5, 0.5))


def test_mask_helpers(four):
    assert four.mask([1, 3]).tolist() == [True, False, True, False]
    assert four.as_mask(np.array([True, True, False, False])).tolist() == [True, True, False, False]
    with pytest.raises(ValueError):
        four.mask([9])


@pytest.mark.parametrize("reduced", [False, True])
def test_json_round_trip(tmp_path, reduced):
    pop = small_population(7)
    d = draw_sample(pop, DesignParams.uniform(2, 0.3, 0.4, [1]), np.random.default_rng(1))
    d = reduce(d) if reduced else d
    path = tmp_path / "s.json"
    write_sample(d, path)
    back = read_sample(path)
    assert type(back) is type(d)
    assert sample_to_dict(back) == sample_to_dict(d)
    assert json.loads(path.read_text())["schema"].startswith("linktrace.")


def test_json_validation():
    doc = sample_to_dict(four_sample())
    with pytest.raises(ValueError, match="schema"):
        sample_from_dict({**doc, "schema": "other"})
    bad = json.loads(json.dumps(doc))
    bad["links"].append([1, 9])
    with pytest.raises(ValueError, match="non-member"):
        sample_from_dict(bad)
    bad = json.loads(json.dumps(doc))
    bad["members"][0]["out_counts"] = [0]
    with pytest.raises(ValueError, match="out_counts"):
        sample_from_dict(bad)


def test_common_random_numbers_couple_designs():
    pop = small_population(3)
    a = draw_sample(pop, DesignParams.uniform(2, 0.2, 0.3), np.random.default_rng(9))
    b = draw_sample(pop, DesignParams.uniform(2, 0.2, 0.3, [int(pop.units[0])]), np.random.default_rng(9))
    # the forced unit only adds to the initial sample
    assert set(a.units[a.initial]) <= set(b.units[b.initial])


def test_sample_mean_size_matches_alpha():
    pop = small_population(5, sizes=(40, 60))
    params = DesignParams([0.2, 0.5], 0.3)
    rng = np.random.default_rng(0)
    n0 = np.array([draw_sample(pop, params, rng).n0 for _ in range(2000)])
    # binomial standard errors: sqrt(40*.2*.8/2000)=0.057, sqrt(60*.25/2000)=0.087
    assert abs(n0[:, 0].mean() - 8) < 4 * 0.057
    assert abs(n0[:, 1].mean() - 30) < 4 * 0.087
    assert isinstance(draw_sample(pop, params, rng), ObservedSample)
