import io

import numpy as np
import pytest

from linktrace.population import (
    Population,
    PopulationError,
    StratumMeta,
    SyntheticSpec,
    generate_synthetic,
    link_counts,
    load_population,
    save_population,
    surrogate_spec,
    top_degree_units,
)

from conftest import FOUR_EDGES, four_population


def test_four_node_population():
    pop = four_population()
    assert (pop.N, pop.K) == (4, 1)
    assert pop.stratum_sizes.tolist() == [4]
    assert len(pop.edges) == 6


def test_unknown_unit_rejected():
    with pytest.raises(PopulationError, match="unknown unit"):
        Population.from_edges([1, 2, 3, 4], [1] * 4, [(1, 5)])


@pytest.mark.parametrize(
    "units, strata, edges, msg",
    [
        ([1, 1, 2], [1, 1, 1], [], "duplicate"),
        ([1, 2], [1, 1], [(1, 1)], "self-loop"),
        ([1, 2], [1, 3], [], "contiguous"),
        ([1, 2], [1], [], "length"),
    ],
)
def test_validation_errors(units, strata, edges, msg):
    with pytest.raises(PopulationError, match=msg):
        Population.from_edges(units, strata, edges)


def test_symmetrize_closes_links():
    pop = Population.from_edges([1, 2], [1, 1], [(1, 2)], symmetrize=True)
    assert pop.adjacency.toarray().tolist() == [[0, 1], [1, 0]]
    assert pop.is_reciprocated()


def test_duplicate_edges_collapse():
    pop = Population.from_edges([1, 2], [1, 1], [(1, 2), (1, 2)])
    assert len(pop.edges) == 1


def test_arrays_are_read_only():
    pop = four_population()
    with pytest.raises(ValueError):
        pop.units[0] = 9


def test_link_counts_four_node():
    lc = link_counts(four_population())
    assert lc.w_lk.tolist() == [[10]]
    assert lc.w == 10


def test_link_counts_empty_graph():
    pop = Population.from_edges(range(5), [1, 1, 2, 2, 2], [])
    assert link_counts(pop).w_lk.tolist() == [[2, 0], [0, 3]]


def test_link_counts_single_cross_link():
    pop = Population.from_edges([1, 2], [1, 2], [(1, 2)])
    assert link_counts(pop).w_lk[0, 1] == 1
    assert link_counts(pop).w_lk[1, 0] == 0


def test_degree_and_out_counts():
    pop = four_population()
    assert pop.degree().tolist() == [2, 2, 2, 2]
    assert pop.out_counts(np.arange(4)).ravel().tolist() == [2, 2, 1, 1]
    assert pop.response("degree").tolist() == [2, 2, 2, 2]


def test_csv_round_trip(tmp_path):
    pop = four_population()
    nodes, edges = tmp_path / "n.csv", tmp_path / "e.csv"
    save_population(pop, nodes, edges)
    assert load_population(nodes, edges).same_as(pop)


def test_load_from_streams_and_errors():
    pop = load_population(io.StringIO("unit,stratum\n1,1\n2,2\n"), io.StringIO("src,dst\n1,2\n"))
    assert pop.K == 2
    with pytest.raises(PopulationError, match="unit,stratum"):
        load_population(io.StringIO("id,stratum\n1,1\n"), io.StringIO("src,dst\n"))
    with pytest.raises(PopulationError, match="src,dst"):
        load_population(io.StringIO("unit,stratum\n1,1\n"), io.StringIO("a,b\n"))
    with pytest.raises(PopulationError, match="bad nodes row"):
        load_population(io.StringIO("unit,stratum\nx,1\n"), io.StringIO("src,dst\n"))


def test_surrogate_matches_target_summary():
    pop = generate_synthetic(surrogate_spec(), seed=1)
    assert pop.N == 595
    assert pop.stratum_sizes.tolist() == [253, 342]
    assert pop.response("idu").mean() == pytest.approx(0.575, abs=5e-4)
    # 729 reciprocated links: 2 * 729 / 595 = 2.4504
    assert pop.degree().mean() == pytest.approx(2.45, abs=5e-3)
    assert pop.is_reciprocated()
    assert pop.info["summary"]["N"] == 595


def test_edgeless_from_zero_densities():
    pop = generate_synthetic(SyntheticSpec(sizes=(5, 5), densities=((0, 0), (0, 0))), seed=3)
    assert len(pop.edges) == 0
    assert pop.degree().mean() == 0


def test_generation_deterministic():
    a = generate_synthetic(surrogate_spec(), seed=4)
    b = generate_synthetic(surrogate_spec(), seed=4)
    c = generate_synthetic(surrogate_spec(), seed=5)
    assert a.same_as(b)
    assert not a.same_as(c)


def test_directed_generation_and_spec_round_trip():
    spec = SyntheticSpec(sizes=(20, 10), mean_degree=2.0, reciprocated=False)
    pop = generate_synthetic(spec, seed=0)
    assert len(pop.edges) == 60
    assert SyntheticSpec.from_dict(spec.to_dict()) == spec


def test_infeasible_mean_degree():
    with pytest.raises(PopulationError, match="needs"):
        generate_synthetic(SyntheticSpec(sizes=(3,), mean_degree=5.0), seed=0)


def test_spec_rejects_unknown_fields_and_bad_modes():
    with pytest.raises(PopulationError, match="unknown"):
        SyntheticSpec.from_dict({"sizes": [3], "mean_degree": 1, "colour": 1})
    with pytest.raises(PopulationError, match="exactly one"):
        generate_synthetic(SyntheticSpec(sizes=(3,)), seed=0)


def test_top_degree_ties_by_smallest_id():
    pop = Population.from_edges([5, 4, 3, 2, 1], [1] * 5, [(5, 4), (3, 2)], symmetrize=True)
    # degrees: 5,4,3,2 all 1, unit 1 isolated
    assert top_degree_units(pop, 3).tolist() == [2, 3, 4]


def test_with_strata_keeps_graph():
    pop = four_population()
    two = pop.with_strata([1, 1, 2, 2], [StratumMeta(), StratumMeta(certainty=True)])
    assert two.K == 2
    assert np.array_equal(two.edges, pop.edges)
    assert two.stratum_meta[1].certainty
    with pytest.raises(PopulationError):
        pop.with_strata([1, 1, 2])
