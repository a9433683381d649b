"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class WDNError(Exception):
    """Base class for all domain errors raised by wdnpress."""


# --- parsing -----------------------------------------------------------------


class ParseError(WDNError):
    pass


class MalformedLine(ParseError):
    def __init__(self, lineno: int, message: str, line: str = ""):
        self.lineno = lineno
        self.line = line
        super().__init__(f"line {lineno}: {message}" + (f" ({line.strip()!r})" if line else ""))


class UnknownNodeReference(ParseError):
    def __init__(self, node_id: str, link_id: str | None = None):
        self.node_id = node_id
        self.link_id = link_id
        where = f" (link {link_id!r})" if link_id else ""
        super().__init__(f"{node_id}{where}")


class DuplicateId(ParseError):
    def __init__(self, ident: str, kind: str = "node"):
        self.ident = ident
        self.kind = kind
        super().__init__(f"duplicate {kind} id {ident!r}")


class MissingRequiredSection(ParseError):
    def __init__(self, section: str):
        self.section = section
        super().__init__(section)


class InvalidModel(WDNError):
    def __init__(self, report):
        self.report = report
        codes = ", ".join(sorted({v.code for v in report.violations}))
        super().__init__(f"model failed validation: {codes}")


# --- hydraulics --------------------------------------------------------------


class NonPositiveGeometry(WDNError):
    pass


class ClosedLink(WDNError):
    pass


class BadPumpCurve(WDNError):
    pass


class SingularSystem(WDNError):
    pass


class NotConverged(WDNError):
    """The Newton loop ran out of iterations; ``state`` holds the last iterate."""

    def __init__(self, state):
        self.state = state
        super().__init__(
            f"no convergence after {state.iterations} iterations "
            f"(mass residual {state.max_nodal_residual:.3e} m3/s, "
            f"energy residual {state.max_energy_residual:.3e} m)"
        )


# --- data generation ---------------------------------------------------------


class GenerationStalled(WDNError):
    pass


class TopologyMismatch(WDNError):
    pass


# --- learning ----------------------------------------------------------------


class RatioOutOfRange(WDNError):
    pass


class ShapeMismatch(WDNError):
    pass


class NonFiniteActivation(WDNError):
    pass


class NonFiniteGradient(WDNError):
    pass


class EmptyMaskSupport(WDNError):
    pass


class DivergedTraining(WDNError):
    pass


class EmptyDataset(WDNError):
    pass


class SchemaMismatch(WDNError):
    pass


class NoSensors(WDNError):
    pass
