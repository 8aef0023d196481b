import pytest

from delaywatch.library import CellKind, DriveStrength, intrinsic_delay, load_coeff, pin_cap
from delaywatch.netlist import (
    Design,
    DesignGenConfig,
    DesignIndex,
    Gate,
    P2PWire,
    SubPath,
    SubPathKind,
    TimingPath,
    WireSegment,
    generate_design,
)


@pytest.fixture(scope="session")
def small_design() -> Design:
    # small enough that the per-endpoint cap never truncates: the enumerated
    # path set is exhaustive and brute-force oracles can recount it
    cfg = DesignGenConfig(registers=12, combinational_gates=90, max_logic_depth=5,
                          path_cap_per_endpoint=4000)
    return generate_design(cfg, seed=42)


@pytest.fixture(scope="session")
def small_index(small_design) -> DesignIndex:
    return DesignIndex(small_design)


@pytest.fixture(scope="session")
def medium_design() -> Design:
    cfg = DesignGenConfig(registers=60, combinational_gates=800, max_logic_depth=10,
                          path_cap_per_endpoint=40)
    return generate_design(cfg, seed=7)


@pytest.fixture(scope="session")
def medium_index(medium_design) -> DesignIndex:
    return DesignIndex(medium_design)


def make_gate(gid, kind=CellKind.INV, strength=DriveStrength.X1, setup=0.0, region=0):
    return Gate(gid, kind, strength, intrinsic_delay(kind, strength),
                load_coeff(kind, strength), pin_cap(kind, strength),
                region=region, ir_weight=1.0, setup_ps=setup)


def seg(layer="M2", length=10.0):
    from delaywatch.library import LAYER_CAP_PER_UM, LAYER_RES_PER_UM, MetalLayer
    ml = MetalLayer(layer)
    return WireSegment(layer, length, LAYER_CAP_PER_UM[ml], LAYER_RES_PER_UM[ml])


def wire(driver, sink_pin, segments=None):
    return P2PWire(f"{driver}.Y", sink_pin, tuple(segments or [seg()]))


@pytest.fixture()
def two_reg_inverter() -> Design:
    """r0 -Q-> g0 (INV) -> r1.D with no clock buffers."""
    r0 = make_gate("r0", CellKind.DFF, DriveStrength.X2, setup=30.0)
    r1 = make_gate("r1", CellKind.DFF, DriveStrength.X2, setup=30.0)
    g0 = make_gate("g0", CellKind.INV, DriveStrength.X1)
    wires = (wire("r0", "g0.A0"), wire("g0", "r1.D"))
    dp = SubPath(SubPathKind.DATA, ("r0", "g0"), ("g0.A0", "r1.D"))
    empty_lp = SubPath(SubPathKind.LAUNCH_CLOCK, (), ())
    empty_cp = SubPath(SubPathKind.CAPTURE_CLOCK, (), ())
    path = TimingPath("p000000", empty_lp, empty_cp, dp, 30.0, "r1")
    return Design(gates=(r0, r1, g0), wires=wires, paths=(path,), clock_period_ps=700.0)
