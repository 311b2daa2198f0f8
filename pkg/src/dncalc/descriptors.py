"""JSON descriptors for systems (scalar, diagonal, matrix, plate)."""

from __future__ import annotations

from .errors import InputError
from .symbols import DNSystem, diagonal_system, matrix_system, symbol_from_descriptor
from .thermoplate import PlateParams, build_plate_system

__all__ = ["system_from_descriptor", "plate_params_from_descriptor"]


def plate_params_from_descriptor(d: dict) -> PlateParams:
    return PlateParams(eta=float(d.get("eta", 2.0)),
                       alpha=float(d.get("alpha", 0.9)),
                       beta=float(d.get("beta", 0.75)),
                       damping=float(d.get("damping", 1.0)))


def system_from_descriptor(d: dict, n: int = 1) -> DNSystem:
    """Build a DN system from a JSON-style descriptor.

    Kinds: ``scalar`` (one symbol with ``l``, ``m``), ``diagonal`` (list of
    symbols), ``matrix`` (full entry grid), ``plate`` (the built-in
    thermoelastic family, excised).
    """
    kind = d.get("kind")
    if kind is None:
        raise InputError("system descriptor needs a 'kind' field")
    n = int(d.get("n", n))
    delta = float(d.get("delta", 0.0))
    if kind == "plate":
        return build_plate_system(plate_params_from_descriptor(d), n=n).system
    if kind == "scalar":
        sym = symbol_from_descriptor(d["symbol"], n=n)
        l = float(d.get("l", 0.0))
        m = float(d.get("m", sym.order - l))
        return diagonal_system([sym], l=[l], m=[m], delta=delta, dim=n)
    if kind == "diagonal":
        syms = [symbol_from_descriptor(sd, n=n) for sd in d["entries"]]
        l = d.get("l")
        m = d.get("m")
        return diagonal_system(syms, l=l, m=m, delta=delta, dim=n)
    if kind == "matrix":
        entries = [[symbol_from_descriptor(sd, n=n) for sd in row]
                   for row in d["entries"]]
        return matrix_system(entries, d["l"], d["m"], delta=delta, dim=n)
    raise InputError(f"unknown system kind {kind!r}")
