import numpy as np
import pytest

from bosegraph.ccr import DoubledSpace, StateModel
from bosegraph.graphs import lattice, regular_tree
from bosegraph.spectral import transience_test
from bosegraph.structure import RefusalError, bec_detect, classify, graph_state, spectral_snapshot


def test_fock_is_pure_factor_not_faithful():
    st = StateModel.from_space(DoubledSpace(np.eye(2), np.zeros((2, 2)), np.zeros(2)))
    rep = classify(st)
    assert rep.verdicts == {"faithful": "no", "factor": "yes", "pure": "yes"}
    assert rep.gap_to_0 == pytest.approx(0.0, abs=1e-14)


def test_thermal_is_faithful_factor_mixed():
    st = StateModel.from_space(DoubledSpace(np.eye(2), np.diag([0.5, 2.0]), np.zeros(2)))
    rep = classify(st)
    assert rep.verdicts == {"faithful": "yes", "factor": "yes", "pure": "no"}
    assert rep.to_dict()["schema_version"] == 1


def test_exact_null_mode_gives_non_factor():
    # a mode with zero one-particle norm but a condensate: S has eigenvalue 1/2 exactly
    sp = DoubledSpace(np.diag([1.0, 0.0]), np.diag([0.3, 0.0]), [0.0, 1.0], D=2.0)
    rep = classify(StateModel.from_space(sp))
    assert rep.verdicts["factor"] == "no"
    assert rep.gap_to_half < 1e-12
    # continuity in D: without the condensate the Gram data is singular and refused
    with pytest.raises(Exception):
        StateModel.from_space(sp.with_D(0.0))


def test_snapshot_routes_agree():
    sp = DoubledSpace(np.eye(3), np.diag([0.1, 1.0, 3.0]), [1.0, 0.5, 0.0], D=0.7)
    derived = StateModel.from_space(sp)
    explicit = StateModel(sp, derived.form_matrix())
    a, b = spectral_snapshot(derived), spectral_snapshot(explicit)
    assert a.route == "pencil" and b.route == "full"
    np.testing.assert_allclose(a.eigenvalues, b.eigenvalues, atol=1e-12)


def test_recurrent_graph_is_refused():
    with pytest.raises(RefusalError, match="recurrent"):
        bec_detect(lattice(1), 1.0, 1.0)


@pytest.fixture(scope="module")
def tree_transience():
    return transience_test(regular_tree(3), radii=range(7, 14))


def test_tree_condensate_is_non_factor(tree_transience):
    assert tree_transience.verdict == "transient"
    rep = bec_detect(regular_tree(3), 2.0, 0.5, radii=(6, 7, 8), transience=tree_transience)
    assert rep.bec["bec"] == "yes"
    assert rep.verdicts["factor"] == "no"
    # the half gap shrinks along the filtration
    gaps = [e["gap_to_half"] for e in rep.filtration_trend]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def test_tree_without_condensate_is_factor(tree_transience):
    rep = bec_detect(regular_tree(3), 2.0, 0.0, radii=(6, 7, 8), transience=tree_transience)
    assert rep.bec["bec"] == "no"
    assert rep.verdicts["factor"] == "yes"


def test_truncation_norm_must_stay_below_estimate():
    with pytest.raises(RefusalError):
        graph_state(lattice(3), 4, 1.0, 0.0, 5.0)
