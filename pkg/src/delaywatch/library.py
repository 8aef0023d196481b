"""Standard-cell and interconnect characterization data.

A small fixed library in the spirit of a 32nm flow: per cell kind and drive
strength we keep a first-order delay model (intrinsic delay plus a linear
load coefficient) and an input pin capacitance. Interconnect is described
per metal layer by capacitance and resistance per micrometer.

Units: delays ps, capacitance fF, load coefficients ps/fF, lengths um,
resistance ohm/um.
"""

from __future__ import annotations

from enum import Enum


class CellKind(str, Enum):
    INV = "INV"
    NAND2 = "NAND2"
    NOR2 = "NOR2"
    AOI = "AOI"
    BUF = "BUF"
    DFF = "DFF"


class DriveStrength(str, Enum):
    X0 = "x0"
    X1 = "x1"
    X2 = "x2"
    X4 = "x4"
    X8 = "x8"
    X16 = "x16"
    X32 = "x32"


STRENGTHS = tuple(DriveStrength)

# Relative drive of each strength class (x0 is a half-drive cell).
DRIVE_FACTOR = {
    DriveStrength.X0: 0.5,
    DriveStrength.X1: 1.0,
    DriveStrength.X2: 2.0,
    DriveStrength.X4: 4.0,
    DriveStrength.X8: 8.0,
    DriveStrength.X16: 16.0,
    DriveStrength.X32: 32.0,
}

# Smaller cells are a little slower unloaded; the curve flattens past x8.
_INTRINSIC_SCALE = {
    DriveStrength.X0: 1.30,
    DriveStrength.X1: 1.15,
    DriveStrength.X2: 1.00,
    DriveStrength.X4: 0.92,
    DriveStrength.X8: 0.85,
    DriveStrength.X16: 0.80,
    DriveStrength.X32: 0.78,
}

# Per-kind base numbers at x2 drive: intrinsic ps, load coeff ps/fF at x1,
# input pin cap fF at x1. The DFF intrinsic is its clk-to-Q delay.
_KIND_BASE = {
    CellKind.INV: (14.0, 3.2, 1.1),
    CellKind.NAND2: (18.0, 3.8, 1.6),
    CellKind.NOR2: (20.0, 4.1, 1.7),
    CellKind.AOI: (26.0, 4.6, 2.1),
    CellKind.BUF: (20.0, 2.8, 1.3),
    CellKind.DFF: (42.0, 3.4, 1.9),
}

# Fan-in count of the data pins per kind (DFF has one data pin; its clock
# pin is accounted for separately by the clock tree).
KIND_ARITY = {
    CellKind.INV: 1,
    CellKind.NAND2: 2,
    CellKind.NOR2: 2,
    CellKind.AOI: 3,
    CellKind.BUF: 1,
    CellKind.DFF: 1,
}


def intrinsic_delay(kind: CellKind, strength: DriveStrength) -> float:
    return _KIND_BASE[kind][0] * _INTRINSIC_SCALE[strength]


def load_coeff(kind: CellKind, strength: DriveStrength) -> float:
    return _KIND_BASE[kind][1] / DRIVE_FACTOR[strength]


def pin_cap(kind: CellKind, strength: DriveStrength) -> float:
    # Bigger drivers present bigger input gates.
    return _KIND_BASE[kind][2] * DRIVE_FACTOR[strength] ** 0.5


class MetalLayer(str, Enum):
    M1 = "M1"
    M2 = "M2"
    M3 = "M3"
    M4 = "M4"
    M5 = "M5"
    M6 = "M6"
    M7 = "M7"


LAYERS = tuple(MetalLayer)

# fF/um and ohm/um per layer. Lower layers are thin and resistive; upper
# layers are wide, faster and used for long routes and clock spines.
LAYER_CAP_PER_UM = {
    MetalLayer.M1: 0.22,
    MetalLayer.M2: 0.21,
    MetalLayer.M3: 0.20,
    MetalLayer.M4: 0.18,
    MetalLayer.M5: 0.16,
    MetalLayer.M6: 0.14,
    MetalLayer.M7: 0.12,
}

LAYER_RES_PER_UM = {
    MetalLayer.M1: 8.0,
    MetalLayer.M2: 6.0,
    MetalLayer.M3: 4.0,
    MetalLayer.M4: 2.5,
    MetalLayer.M5: 1.2,
    MetalLayer.M6: 0.6,
    MetalLayer.M7: 0.3,
}

# Typical routed length (um, lognormal median) by layer for signal nets.
LAYER_MEDIAN_LEN = {
    MetalLayer.M1: 6.0,
    MetalLayer.M2: 10.0,
    MetalLayer.M3: 18.0,
    MetalLayer.M4: 40.0,
    MetalLayer.M5: 70.0,
    MetalLayer.M6: 110.0,
    MetalLayer.M7: 170.0,
}
