"""Shared INP snippets and small network builders."""

from __future__ import annotations

import pytest

from wdnpress.inp import parse_inp


def two_node_inp(demand_lps: float = 0.0, head: float = 50.0, elev: float = 10.0,
                 length: float = 1000.0, diam_mm: float = 300.0, c: float = 100.0) -> str:
    return f"""
[TITLE]
two node test
[JUNCTIONS]
;id elev demand
J1  {elev}  {demand_lps}
[RESERVOIRS]
R1  {head}
[PIPES]
P1  R1  J1  {length}  {diam_mm}  {c}  0  Open
[OPTIONS]
Units  LPS
Headloss  H-W
[END]
"""


def series_inp(d1: float, d2: float) -> str:
    return f"""
[JUNCTIONS]
J1  5   {d1}
J2  2   {d2}
[RESERVOIRS]
R1  60
[PIPES]
P1  R1  J1  800   250  120
P2  J1  J2  600   200  110
[OPTIONS]
Units LPS
[END]
"""


def parallel_inp(demand_lps: float) -> str:
    return f"""
[JUNCTIONS]
J1  0  {demand_lps}
[RESERVOIRS]
R1  30
[PIPES]
P1  R1  J1  500  200  100
P2  R1  J1  500  200  100
[OPTIONS]
Units LPS
[END]
"""


def pump_inp(q_rated_lps: float = 100.0, h_rated: float = 20.0) -> str:
    return f"""
[JUNCTIONS]
J1  0  0
J2  0  {q_rated_lps}
[RESERVOIRS]
R1  0
[PIPES]
P1  J1  J2  1  1000  140
[PUMPS]
PU1  R1  J1  HEAD C1
[CURVES]
C1  {q_rated_lps}  {h_rated}
[OPTIONS]
Units LPS
[END]
"""


@pytest.fixture
def two_node():
    return parse_inp(two_node_inp())


@pytest.fixture(scope="session")
def anytown():
    from wdnpress.benchmarks import load_network

    return load_network("anytown")


@pytest.fixture(scope="session")
def ltown():
    from wdnpress.benchmarks import load_network

    return load_network("ltown")


# --- acceptance summary --------------------------------------------------------

ACCEPTANCE: list[str] = []


def record_acceptance(criterion: int, passed: bool, detail: str, seconds: float) -> None:
    line = f"C{criterion} {'PASS' if passed else 'FAIL'} ({seconds:.1f} s) {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter) -> None:
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
