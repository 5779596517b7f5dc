import numpy as np
import pytest

from vcdn.sim import (
    CausalSummaryGraph,
    EdgeSpec,
    EdgeType,
    InvalidConfigError,
    InvalidInterventionError,
    apply_intervention,
    sample_summary_graph,
    unordered_pairs,
)


def test_single_body_has_no_edges():
    g = sample_summary_graph(1, np.random.default_rng(0))
    assert g.n_bodies == 1
    assert g.edges == ()


def test_invalid_body_count_rejected():
    with pytest.raises(InvalidConfigError):
        sample_summary_graph(0, np.random.default_rng(0))


def test_five_bodies_cover_all_pairs_with_params_in_range():
    rng = np.random.default_rng(3)
    for _ in range(200):
        g = sample_summary_graph(5, rng)
        assert len(unordered_pairs(5)) == 10
        for e in g.edges:
            assert e.type in (EdgeType.RIGID, EdgeType.SPRING)
            assert 20.0 <= e.param <= 120.0
        pairs = {(e.i, e.j) for e in g.edges}
        assert len(pairs) == len(g.edges)


def test_sampler_marginals_uniform_over_types():
    # chi-square against uniform(3) at alpha=0.01 over 10k single-pair samples
    rng = np.random.default_rng(12345)
    counts = np.zeros(3)
    n = 10_000
    for _ in range(n):
        g = sample_summary_graph(2, rng)
        counts[g.pair_type(0, 1)] += 1
    freqs = counts / n
    assert np.all(freqs >= 0.32) and np.all(freqs <= 0.347), freqs
    chi2 = ((counts - n / 3) ** 2 / (n / 3)).sum()
    assert chi2 < 9.21  # chi2 critical value, 2 dof, alpha=0.01


def test_edge_spec_invariants():
    with pytest.raises(ValueError):
        EdgeSpec(1, 0, EdgeType.SPRING, 50.0)  # needs i < j
    with pytest.raises(ValueError):
        EdgeSpec(0, 1, EdgeType.NULL, 50.0)  # null carries no param
    with pytest.raises(ValueError):
        EdgeSpec(0, 1, EdgeType.SPRING, None)  # non-null needs param
    with pytest.raises(ValueError):
        EdgeSpec(0, 1, EdgeType.RIGID, -3.0)  # param must be positive


def test_graph_rejects_duplicate_pairs():
    e1 = EdgeSpec(0, 1, EdgeType.SPRING, 40.0)
    e2 = EdgeSpec(0, 1, EdgeType.RIGID, 60.0)
    with pytest.raises(ValueError):
        CausalSummaryGraph(3, (e1, e2))


def test_graph_json_roundtrip(tmp_path):
    g = CausalSummaryGraph(
        4, (EdgeSpec(0, 2, EdgeType.SPRING, 33.5), EdgeSpec(1, 3, EdgeType.RIGID, 77.0))
    )
    path = tmp_path / "graph.json"
    g.save(path)
    assert CausalSummaryGraph.load(path) == g


def test_intervention_changes_only_target_pair():
    g = CausalSummaryGraph(
        3, (EdgeSpec(0, 1, EdgeType.SPRING, 50.0), EdgeSpec(1, 2, EdgeType.RIGID, 70.0))
    )
    g2 = apply_intervention(g, (0, 1), EdgeType.SPRING, 80.0)
    assert g2.edge_for(0, 1).param == 80.0
    assert g2.edge_for(1, 2) == g.edge_for(1, 2)
    assert g.edge_for(0, 1).param == 50.0  # original untouched


def test_intervention_to_null_removes_edge():
    g = CausalSummaryGraph(3, (EdgeSpec(0, 1, EdgeType.SPRING, 50.0),))
    g2 = apply_intervention(g, (1, 0), EdgeType.NULL)
    assert g2.edges == ()


def test_intervention_allows_out_of_range_param():
    g = CausalSummaryGraph(2, ())
    g2 = apply_intervention(g, (0, 1), EdgeType.SPRING, 140.0)
    assert g2.edge_for(0, 1).param == 140.0


def test_intervention_validation():
    g = CausalSummaryGraph(3, ())
    with pytest.raises(InvalidInterventionError):
        apply_intervention(g, (1, 1), EdgeType.NULL)
    with pytest.raises(InvalidInterventionError):
        apply_intervention(g, (0, 5), EdgeType.NULL)
    with pytest.raises(InvalidInterventionError):
        apply_intervention(g, (0, 1), EdgeType.SPRING, None)
