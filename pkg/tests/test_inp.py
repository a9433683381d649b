"""Parsing, validation, serialization and graph derivation."""

from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import two_node_inp
from wdnpress.benchmarks import BUNDLED, load_network, network_path
from wdnpress.errors import DuplicateId, InvalidModel, MalformedLine, MissingRequiredSection, UnknownNodeReference
from wdnpress.inp import FLOW_TO_SI, UnsupportedSectionWarning, parse_inp, serialize_inp
from wdnpress.network import NodeKind, structurally_equal, to_graph, validate

# Element counts per bundled file, frozen from a plain line count over each
# section (see _count_section_lines below, which re-derives them).
EXPECTED_COUNTS = {
    "anytown": dict(JUNCTIONS=19, RESERVOIRS=3, TANKS=0, PIPES=40, PUMPS=1, VALVES=0),
    "ltown": dict(JUNCTIONS=782, RESERVOIRS=2, TANKS=1, PIPES=905, PUMPS=1, VALVES=3),
    "hanoi": dict(JUNCTIONS=31, RESERVOIRS=1, TANKS=0, PIPES=34, PUMPS=0, VALVES=0),
    "net1": dict(JUNCTIONS=9, RESERVOIRS=1, TANKS=1, PIPES=12, PUMPS=1, VALVES=0),
}


def _count_section_lines(text: str) -> dict[str, int]:
    counts: dict[str, int] = {}
    section = None
    for raw in text.splitlines():
        body = raw.split(";")[0].strip()
        if not body:
            continue
        if body.startswith("["):
            section = body.strip("[]").upper()
            continue
        counts[section] = counts.get(section, 0) + 1
    return counts


class TestParseMinimal:
    def test_two_node_counts(self) -> None:
        m = parse_inp(two_node_inp())
        assert m.n_nodes == 2 and m.n_links == 1
        assert m.reservoirs[0].head == 50.0
        assert m.junctions[0].elevation == 10.0

    def test_si_conversion_lps(self) -> None:
        m = parse_inp(two_node_inp(demand_lps=50.0))
        assert m.junctions[0].base_demand == pytest.approx(0.05, rel=1e-12)
        assert m.pipes[0].diameter == pytest.approx(0.3, rel=1e-12)

    def test_comments_and_blank_lines(self) -> None:
        text = two_node_inp().replace("[JUNCTIONS]", "[junctions]  ; trailing\n\n;whole line\n")
        assert parse_inp(text).n_nodes == 2

    def test_end_stops_parsing(self) -> None:
        text = two_node_inp() + "\n[PIPES]\nP9 X Y 1 1 1\n"
        assert parse_inp(text).n_links == 1

    def test_unknown_node_reference(self) -> None:
        text = two_node_inp().replace("P1  R1  J1", "P1  R1  J99")
        with pytest.raises(UnknownNodeReference) as exc:
            parse_inp(text)
        assert exc.value.node_id == "J99"

    def test_duplicate_node(self) -> None:
        text = two_node_inp().replace("R1  50.0", "J1  50.0")
        with pytest.raises(DuplicateId):
            parse_inp(text)

    def test_duplicate_link(self) -> None:
        text = two_node_inp().replace("[OPTIONS]", "P1 R1 J1 10 100 100\n[OPTIONS]")
        with pytest.raises(DuplicateId):
            parse_inp(text)

    def test_malformed_line_reports_lineno(self) -> None:
        text = two_node_inp().replace("1000.0  300.0", "abc  300.0")
        with pytest.raises(MalformedLine) as exc:
            parse_inp(text)
        assert exc.value.lineno == text.splitlines().index(next(l for l in text.splitlines() if "abc" in l)) + 1

    def test_wrong_token_count(self) -> None:
        with pytest.raises(MalformedLine):
            parse_inp(two_node_inp().replace("P1  R1  J1  1000.0  300.0  100.0", "P1  R1  J1  1000.0"))

    @pytest.mark.parametrize("section", ["JUNCTIONS", "PIPES"])
    def test_missing_required(self, section: str) -> None:
        text = two_node_inp().replace(f"[{section}]", "[IGNORED]")
        with pytest.raises(MissingRequiredSection):
            parse_inp(text)

    def test_missing_fixed_head_section(self) -> None:
        with pytest.raises(MissingRequiredSection):
            parse_inp(two_node_inp().replace("[RESERVOIRS]\nR1  50.0", "").replace("R1  J1", "J1  J1"))

    def test_unsupported_section_recorded(self) -> None:
        m = parse_inp(two_node_inp().replace("[OPTIONS]", "[ENERGY]\nGlobal Efficiency 75\n[OPTIONS]"))
        assert "ENERGY" in m.unsupported
        assert any("ENERGY" in w for w in m.warnings)


class TestBundled:
    @pytest.mark.parametrize("name", BUNDLED)
    def test_counts_match_line_count(self, name: str) -> None:
        text = network_path(name).read_text(encoding="utf-8")
        brute = _count_section_lines(text)
        expected = EXPECTED_COUNTS[name]
        assert {k: brute.get(k, 0) for k in expected} == expected
        m = load_network(name)
        got = dict(
            JUNCTIONS=len(m.junctions), RESERVOIRS=len(m.reservoirs), TANKS=len(m.tanks),
            PIPES=len(m.pipes), PUMPS=len(m.pumps), VALVES=len(m.valves),
        )
        assert got == expected

    @pytest.mark.parametrize("name", BUNDLED)
    def test_valid(self, name: str) -> None:
        assert validate(load_network(name)).ok

    @pytest.mark.parametrize("name", BUNDLED)
    def test_round_trip(self, name: str) -> None:
        m = load_network(name)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UnsupportedSectionWarning)
            again = parse_inp(serialize_inp(m), name=name)
        assert structurally_equal(m, again)

    def test_ltown_node_count(self) -> None:
        m = load_network("ltown")
        g = to_graph(m)
        assert g.n_nodes == 782 + 2 + 1


class TestValidate:
    def test_connected_single_reservoir(self, two_node) -> None:
        assert validate(two_node).ok

    def test_disconnected(self) -> None:
        text = two_node_inp().replace("J1  10.0  0.0", "J1  10.0  0.0\nJ2 1 0\nJ3 1 0").replace(
            "[OPTIONS]", "P2 J2 J3 10 100 100\n[OPTIONS]"
        )
        report = validate(parse_inp(text))
        assert "Disconnected" in report.codes()
        d = next(v for v in report.violations if v.code == "Disconnected")
        assert sorted(d.details["component_sizes"]) == [2, 2]

    def test_closed_pipe_disconnects(self) -> None:
        report = validate(parse_inp(two_node_inp().replace("0  Open", "0  Closed")))
        assert "Disconnected" in report.codes()

    def test_no_fixed_head(self, two_node) -> None:
        two_node.reservoirs.clear()
        assert "NoFixedHeadNode" in validate(two_node).codes()

    def test_negative_demand(self) -> None:
        assert "NegativeDemand" in validate(parse_inp(two_node_inp(demand_lps=-1.0))).codes()

    def test_nonpositive_geometry(self) -> None:
        assert "NonPositiveLength" in validate(parse_inp(two_node_inp(length=0.0))).codes()

    def test_report_json_lines(self, two_node) -> None:
        two_node.reservoirs.clear()
        lines = validate(two_node).to_jsonl().splitlines()
        assert lines and all(l.startswith("{") for l in lines)


class TestGraph:
    def test_two_node(self, two_node) -> None:
        g = to_graph(two_node)
        assert g.n_nodes == 2 and g.n_arcs == 2
        np.testing.assert_array_equal(g.edge_index, [[1, 0], [0, 1]])
        np.testing.assert_allclose(g.edge_attr[:, :3], [[1000.0, 0.3, 100.0]] * 2)
        assert list(g.node_kind) == [NodeKind.JUNCTION, NodeKind.RESERVOIR]

    def test_pump_sentinel_attrs(self, anytown) -> None:
        g = to_graph(anytown)
        pumps = g.edge_attr[:, 4] == 1.0
        assert pumps.sum() == 2
        assert np.all(g.edge_attr[pumps, :3] == 0.0)

    def test_invalid_raises(self, two_node) -> None:
        two_node.reservoirs.clear()
        with pytest.raises(InvalidModel):
            to_graph(two_node)

    @pytest.mark.parametrize("name", BUNDLED)
    def test_reverse_arcs(self, name: str) -> None:
        g = to_graph(load_network(name))
        arcs = {(int(u), int(v)): tuple(a) for u, v, a in zip(*g.edge_index, g.edge_attr)}
        for (u, v), attr in arcs.items():
            assert arcs[(v, u)] == attr

    def test_deterministic(self) -> None:
        text = network_path("anytown").read_text()
        a, b = to_graph(parse_inp(text)), to_graph(parse_inp(text))
        assert a.same_as(b)
        assert a.edge_attr.tobytes() == b.edge_attr.tobytes()


def _random_network_text(units: str, demands, lengths, diams, elevs, head) -> str:
    n = len(demands)
    j = "\n".join(f"J{i} {elevs[i]!r} {demands[i]!r}" for i in range(n))
    p = "\n".join(
        f"P{i} {'R1' if i == 0 else f'J{i - 1}'} J{i} {lengths[i]!r} {diams[i]!r} 110" for i in range(n)
    )
    return f"[JUNCTIONS]\n{j}\n[RESERVOIRS]\nR1 {head!r}\n[PIPES]\n{p}\n[OPTIONS]\nUnits {units}\n[END]\n"


pos = st.floats(min_value=0.1, max_value=1e4, allow_nan=False)


class TestProperties:
    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(pos, pos, pos, st.floats(-100, 1000)), min_size=1, max_size=6), st.floats(1, 500))
    def test_round_trip_random(self, rows, head) -> None:
        d, l, dm, z = map(list, zip(*rows))
        m = parse_inp(_random_network_text("LPS", d, l, dm, z, head))
        assert structurally_equal(m, parse_inp(serialize_inp(m)))

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(pos, pos, pos, st.floats(-100, 1000)), min_size=1, max_size=6), st.floats(1, 500))
    def test_gpm_equals_lps(self, rows, head) -> None:
        ft, inch = 0.3048, 0.0254
        d, l, dm, z = map(list, zip(*rows))
        gpm = parse_inp(_random_network_text("GPM", d, l, dm, z, head))
        to_lps = FLOW_TO_SI["GPM"] / FLOW_TO_SI["LPS"]
        lps = parse_inp(
            _random_network_text(
                "LPS",
                [x * to_lps for x in d],
                [x * ft for x in l],
                [x * inch * 1000 for x in dm],
                [x * ft for x in z],
                head * ft,
            )
        )
        lps.flow_units = gpm.flow_units
        assert structurally_equal(gpm, lps, rtol=1e-9)

    def test_serialized_keeps_digits(self) -> None:
        m = parse_inp(two_node_inp(length=1234.56789, elev=3.14159265))
        with warnings.catch_warnings():
            warnings.simplefilter("error", UnsupportedSectionWarning)
            again = parse_inp(serialize_inp(m))
        assert again.pipes[0].length == m.pipes[0].length
        assert again.junctions[0].elevation == m.junctions[0].elevation

    def test_serialize_warns_on_skipped_section(self) -> None:
        m = parse_inp(two_node_inp().replace("[OPTIONS]", "[ENERGY]\nGlobal Efficiency 75\n[OPTIONS]"))
        with pytest.warns(UnsupportedSectionWarning):
            text = serialize_inp(m)
        assert "[ENERGY]" not in text
