import math
import warnings
from fractions import Fraction

import numpy as np
import pytest

from qgheat import alpha_engine as ae
from qgheat import discrete_walk as dw
from qgheat import faber_krahn as fk
from qgheat import graph_model as gm
from qgheat import spectral as sp
from qgheat.artifacts import CsvTable
from qgheat.curves import compare_curves

from .conftest import MID_GRID


@pytest.fixture(scope="module")
def pitchfork_spectra():
    return fk.path_spectrum(gm.pitchfork())


@pytest.fixture(scope="module")
def pitchfork_scan():
    return fk.crossover_scan(gm.pitchfork(), ae.default_t_grid(1.0, 1e-3, 1e2, 5))


def test_single_edge_expansion(mid_table):
    # tau = 2 surely: Q = (1/2) [alpha_0 * 2 + (alpha_1 - alpha_0) * 1]
    g = gm.named_graph("path1")
    curve = fk.probabilistic_curve(g, mid_table)
    a0, a1 = mid_table.values[:, 0], mid_table.values[:, 1]
    assert np.allclose(curve.values, 0.5 * (2 * a0 + (a1 - a0)), atol=1e-12)
    assert float(dw.return_time_identity(g)) == 2


def test_small_time_limit_is_total_length(small_t_table):
    t = small_t_table.t_grid[0]
    # heat lost by small t is 2 sqrt(t/pi) through the single Dirichlet end
    exact_loss = 2 * math.sqrt(t / math.pi)
    for name in ("path1", "path2", "path3", "path4"):
        g = gm.named_graph(name)
        c = fk.probabilistic_curve(g, small_t_table)
        assert np.all(np.diff(c.values) < 0)
        lost = g.total_length - c.values[0]
        assert abs(lost - exact_loss) <= c.errors[0] + 1e-12, name
        if name in ("path1", "path2"):
            assert lost == pytest.approx(exact_loss, rel=1e-4)


def test_route_agreement_suite(suite, mid_table):
    for g in suite.values():
        p = fk.probabilistic_curve(g, mid_table)
        m = sp.mercer_curve(g, MID_GRID)
        assert np.all(compare_curves(p, m) <= 1), g.name
        assert all(p.check().values())


def test_forms_agree(suite, mid_table):
    for g in suite.values():
        a = fk.probabilistic_curve(g, mid_table, form="pre")
        b = fk.probabilistic_curve(g, mid_table, form="rearranged")
        assert np.all(np.abs(a.values - b.values) <= 1e-6 * b.values), g.name


def test_exact_and_float_walks_agree(mid_table):
    g = gm.pitchfork()
    a = fk.probabilistic_curve(g, mid_table, exact=True)
    b = fk.probabilistic_curve(g, mid_table)
    assert np.all(np.abs(a.values - b.values) <= a.errors + b.errors)


def test_single_point_matches_curve(mid_table):
    g = gm.pitchfork()
    curve = fk.probabilistic_curve(g, mid_table)
    t = mid_table.t_grid[7]
    est = fk.probabilistic_heat_content(g, mid_table, t=t)
    assert est.value == pytest.approx(curve.values[7], rel=1e-14)
    with pytest.raises(KeyError):
        fk.probabilistic_heat_content(g, mid_table, t=0.1234)


def test_truncation_budget(mid_table, small_t_table):
    assert fk.truncation_budget_ok(gm.pitchfork(), mid_table)
    assert fk.truncation_budget_ok(gm.pitchfork(), small_t_table.restrict(2))
    # at t = 0.05 one increment leaves deficit 5.4e-4, times E[tau] = 6
    assert not fk.truncation_budget_ok(gm.pitchfork(), mid_table.restrict(1))


def test_compare_identical_is_zero(mid_table):
    g = gm.pitchfork()
    c = fk.compare_graphs(g, g, mid_table, MID_GRID[20])
    assert c.value == 0 and all(d == 0 for d in c.inner)


def test_compare_antisymmetric(mid_table):
    p, g = fk.comparison_path(gm.pitchfork()), gm.pitchfork()
    for t in mid_table.t_grid[::8]:
        a = fk.compare_graphs(p, g, mid_table, t)
        b = fk.compare_graphs(g, p, mid_table, t)
        assert a.value + b.value == 0
        assert all(x + y == 0 for x, y in zip(a.inner, b.inner))


def test_compare_inner_sums_pitchfork(mid_table):
    p, g = fk.comparison_path(gm.pitchfork()), gm.pitchfork()
    c = fk.compare_graphs(p, g, mid_table, MID_GRID[0])
    k0 = fk.small_time_k0(g)
    assert all(c.inner[n] == 0 for n in range(k0 + 1))
    assert c.inner[k0 + 1] == Fraction(1, 6)
    assert c.sign == 1


def test_compare_matches_curve_difference(mid_table):
    p, g = fk.comparison_path(gm.pitchfork()), gm.pitchfork()
    a, b = fk.probabilistic_curve(p, mid_table), fk.probabilistic_curve(g, mid_table)
    for i in range(0, len(MID_GRID), 5):
        c = fk.compare_graphs(p, g, mid_table, MID_GRID[i])
        assert abs(c.value - (a.values[i] - b.values[i])) <= c.error + a.errors[i] + b.errors[i]


def test_compare_preconditions(mid_table):
    with pytest.raises(ValueError):
        fk.compare_graphs(gm.pitchfork(), gm.named_graph("path4"), mid_table, 1.0)
    with pytest.raises(ValueError):
        fk.compare_graphs(gm.named_graph("path6"), gm.complete_graph(4), mid_table, 1.0)


def test_small_time_certificate_pitchfork(small_t_table):
    cert = fk.small_time_certificate(gm.pitchfork(), small_t_table)
    assert cert.k0 == 2 and cert.C == Fraction(1, 6)
    assert cert.t0 is not None and cert.t0 > 0
    assert cert.verified
    text = cert.to_csv().dumps()
    assert "# C=1/6" in text and CsvTable.loads(text).dumps() == text


def test_small_time_certificate_three_edge_star(small_t_table):
    cert = fk.small_time_certificate(gm.star(3), small_t_table)
    assert cert.k0 == 2 and cert.C == Fraction(1, 2) - Fraction(1, 3)


def test_small_time_certificate_rejects_path(small_t_table):
    with pytest.raises(fk.CertificateError, match="graph is a path"):
        fk.small_time_certificate(gm.named_graph("path3"), small_t_table)


def test_small_time_warns_on_high_dirichlet_degree(small_t_table):
    with pytest.warns(fk.ReductionWarning):
        fk.small_time_certificate(gm.complete_graph(4), small_t_table)


def test_certificate_soundness_suite(suite, small_t_table):
    for g in suite.values():
        if g.is_path():
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", fk.ReductionWarning)
            try:
                cert = fk.small_time_certificate(g, small_t_table)
            except fk.CertificateError:
                assert g.name == "figure_eight"
                continue
        assert cert.t0 is not None, g.name
        assert all(s != -1 for *_, s in cert.verification), g.name


def test_large_time_certificate_pitchfork(pitchfork_spectra):
    s_p, s_g = pitchfork_spectra
    grid = ae.default_t_grid(1.0, 0.1, 100.0, 10)
    pc = sp.mercer_curve(gm.named_graph("path3"), grid)
    gc = sp.mercer_curve(gm.pitchfork(), grid)
    cert = fk.large_time_certificate(s_p, s_g, 3.0, pc, gc)
    assert cert.gap_lower > 0 and math.isfinite(cert.T0)
    assert cert.verification and cert.verified
    text = cert.to_csv().dumps()
    assert CsvTable.loads(text).dumps() == text


def test_large_time_certificate_path_vs_itself():
    s = sp.spectral_data(gm.named_graph("path3"))
    with pytest.raises(fk.CertificateUnresolved):
        fk.large_time_certificate(s, s, 3.0)


def test_unit_path_first_overlap():
    s_p, _ = fk.path_spectrum(gm.named_graph("path1"))
    assert s_p.overlaps_sq[0] == pytest.approx(8 / math.pi**2, abs=1e-6)


def test_large_time_suite(suite):
    for g in suite.values():
        if g.is_path():
            continue
        s_p, s_g = fk.path_spectrum(g)
        cert = fk.large_time_certificate(s_p, s_g, g.total_length)
        assert cert.gap_lower > 0 and math.isfinite(cert.T0), g.name


def test_scan_pitchfork_extremes(pitchfork_scan):
    scan = pitchfork_scan
    assert scan.extremes_resolved()
    assert scan.rows[0].verdict == 1 and scan.rows[-1].verdict == 1
    assert all(r.verdict != -1 for r in scan.rows)
    text = scan.to_csv().dumps()
    assert CsvTable.loads(text).dumps() == text


@pytest.mark.filterwarnings("ignore::qgheat.faber_krahn.ReductionWarning")
def test_scan_figure_eight():
    scan = fk.crossover_scan(gm.figure_eight(), ae.default_t_grid(1.0, 1e-2, 1e2, 5))
    assert scan.small is None and scan.large is not None
    assert all(np.isfinite(d) for r in scan.rows for d, _, _ in r.differences.values())
    assert scan.rows[-1].verdict == 1


def test_report_sections(pitchfork_spectra, pitchfork_scan):
    g = gm.pitchfork()
    text = fk.report(g, pitchfork_scan, ae.SELECTED_CONVENTION, pitchfork_spectra)
    heads = ["== inputs ==", "== convention ==", "== small-time certificate ==", "== spectra ==",
             "== large-time certificate ==", "== scan =="]
    pos = [text.index(h) for h in heads]
    assert pos == sorted(pos)
    assert "k0 = 2" in text and "C = 1/6" in text and "T0 =" in text and "FULL/TWO_SIDED" in text


def test_convention_selection():
    sel = fk.select_convention(per_decade=5, n_max=80)
    assert sel.winner == ae.SELECTED_CONVENTION
    assert set(sel.deviations) == {c.tag for c in ae.ALL_CONVENTIONS}
    best = sel.deviations[sel.winner.tag]
    assert best < 1e-3 and all(v > 100 * best for k, v in sel.deviations.items() if k != sel.winner.tag)
