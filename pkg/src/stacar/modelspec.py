"""The model space: main-effect structures plus interaction types.

A specification selects structures for the temporal and age main effects
(absent, iid, or first-order random walk) and a type (I-IV, or absent) for
each of the three pairwise interactions.  The spatial Leroux effect and the
intercept are always present.  Interactions require their main effects:
space-time needs the temporal effect, space-age needs the age effect, and
time-age needs both.

Serialized form, used in CLI flags and result tables::

    delta=<iid|rw1|->;gamma=<iid|rw1|->;z1=<I|II|III|IV|->;z2=...;z3=...
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import SpecificationError
from .structures import INTERACTION_TYPES

__all__ = [
    "ModelSpec",
    "parse_spec",
    "enumerate_models",
    "enumeration_families",
    "eq5_family",
    "EQ5_FAMILY_PATTERNS",
]

MAIN_STRUCTURES = ("iid", "rw1")

# (delta, gamma) combinations in enumeration order: delta varies fastest.
_MAIN4 = (("iid", "iid"), ("rw1", "iid"), ("iid", "rw1"), ("rw1", "rw1"))


@dataclass(frozen=True)
class ModelSpec:
    """One point in the model space.

    ``time`` / ``age`` are main-effect structures (None, "iid" or "rw1");
    ``space_time`` / ``space_age`` / ``time_age`` are interaction types
    (None or "I".."IV").  The spatial effect is always the Leroux mixture.
    """

    time: str | None = None
    age: str | None = None
    space_time: str | None = None
    space_age: str | None = None
    time_age: str | None = None

    def __post_init__(self):
        for name, value in (("time", self.time), ("age", self.age)):
            if value is not None and value not in MAIN_STRUCTURES:
                raise SpecificationError(f"{name} structure must be iid, rw1 or absent")
        for name, value in (("space_time", self.space_time),
                            ("space_age", self.space_age),
                            ("time_age", self.time_age)):
            if value is not None and value not in INTERACTION_TYPES:
                raise SpecificationError(f"{name} type must be one of I-IV or absent")
        if self.space_time is not None and self.time is None:
            raise SpecificationError("space-time interaction requires the temporal main effect")
        if self.space_age is not None and self.age is None:
            raise SpecificationError("space-age interaction requires the age main effect")
        if self.time_age is not None and (self.time is None or self.age is None):
            raise SpecificationError("time-age interaction requires both temporal and age main effects")
        if self.time is None and self.age is None:
            raise SpecificationError("at least one of the temporal or age main effects must be present")

    def to_string(self) -> str:
        def main(v):
            return v if v is not None else "-"

        def inter(v):
            return v if v is not None else "-"

        return (f"delta={main(self.time)};gamma={main(self.age)};"
                f"z1={inter(self.space_time)};z2={inter(self.space_age)};"
                f"z3={inter(self.time_age)}")

    def present_blocks(self) -> tuple[str, ...]:
        """Latent block names in canonical order (intercept and spatial always)."""
        blocks = ["intercept", "spatial"]
        if self.time is not None:
            blocks.append("time")
        if self.age is not None:
            blocks.append("age")
        if self.space_time is not None:
            blocks.append("space_time")
        if self.space_age is not None:
            blocks.append("space_age")
        if self.time_age is not None:
            blocks.append("time_age")
        return tuple(blocks)


def parse_spec(text: str) -> ModelSpec:
    """Parse the serialized ``delta=...;gamma=...;z1=...`` form."""
    parts = [p for p in text.strip().split(";") if p]
    values: dict[str, str] = {}
    for part in parts:
        key, sep, value = part.partition("=")
        if not sep:
            raise SpecificationError(f"bad spec fragment {part!r}")
        key = key.strip().lower()
        if key in values:
            raise SpecificationError(f"duplicate spec key {key!r}")
        values[key] = value.strip()
    expected = {"delta", "gamma", "z1", "z2", "z3"}
    if set(values) != expected:
        raise SpecificationError(
            f"spec must define exactly {sorted(expected)}, got {sorted(values)}"
        )

    def main(v: str) -> str | None:
        v = v.lower()
        if v == "-":
            return None
        if v in MAIN_STRUCTURES:
            return v
        raise SpecificationError(f"bad main-effect structure {v!r}")

    def inter(v: str) -> str | None:
        v = v.upper()
        if v == "-":
            return None
        if v in INTERACTION_TYPES:
            return v
        raise SpecificationError(f"bad interaction type {v!r}")

    return ModelSpec(time=main(values["delta"]), age=main(values["gamma"]),
                     space_time=inter(values["z1"]), space_age=inter(values["z2"]),
                     time_age=inter(values["z3"]))


def _two_axis_type_order() -> list[tuple[str, str]]:
    """Shell ordering of type pairs: all pairs with max type s appear in the
    shell for s, first varying the second axis, then the first, then (s, s)."""
    order = []
    for s, t_s in enumerate(INTERACTION_TYPES):
        for t2 in INTERACTION_TYPES[:s]:
            order.append((t_s, t2))
        for t1 in INTERACTION_TYPES[:s]:
            order.append((t1, t_s))
        order.append((t_s, t_s))
    return order


def _three_axis_type_order() -> list[tuple[str, str, str]]:
    """Type triples: first every triple with a type-I space-age or time-age
    slot, grouped by the space-time type; then the rest swept with the
    time-age axis slowest."""
    rest = INTERACTION_TYPES[1:]
    order: list[tuple[str, str, str]] = [("I", "I", "I")]
    order += [(t1, "I", "I") for t1 in rest]
    order += [("I", t2, "I") for t2 in rest]
    order += [("I", "I", t3) for t3 in rest]
    for t1 in rest:
        order += [(t1, t2, "I") for t2 in rest]
        order += [(t1, "I", t3) for t3 in rest]
    for t3 in rest:
        for t1 in INTERACTION_TYPES:
            order += [(t1, t2, t3) for t2 in rest]
    return order


def enumeration_families() -> list[tuple[str, list[ModelSpec]]]:
    """The nested model subsets, each with its specs in canonical order."""
    types = INTERACTION_TYPES
    families: list[tuple[str, list[ModelSpec]]] = []

    families.append(("delta", [ModelSpec(time=dt) for dt in MAIN_STRUCTURES]))
    families.append(("gamma", [ModelSpec(age=at) for at in MAIN_STRUCTURES]))
    families.append(("delta+gamma",
                     [ModelSpec(time=dt, age=at) for dt, at in _MAIN4]))
    families.append(("delta+z1",
                     [ModelSpec(time=dt, space_time=t)
                      for dt in MAIN_STRUCTURES for t in types]))
    families.append(("delta+gamma+z1",
                     [ModelSpec(time=dt, age=at, space_time=t)
                      for t in types for dt, at in _MAIN4]))
    families.append(("gamma+z2",
                     [ModelSpec(age=at, space_age=t)
                      for at in MAIN_STRUCTURES for t in types]))
    families.append(("delta+gamma+z2",
                     [ModelSpec(time=dt, age=at, space_age=t)
                      for t in types for dt, at in _MAIN4]))
    families.append(("delta+gamma+z3",
                     [ModelSpec(time=dt, age=at, time_age=t)
                      for t in types for dt, at in _MAIN4]))
    families.append(("delta+gamma+z1+z2",
                     [ModelSpec(time=dt, age=at, space_time=t1, space_age=t2)
                      for t1, t2 in _two_axis_type_order() for dt, at in _MAIN4]))
    families.append(("delta+gamma+z1+z3",
                     [ModelSpec(time=dt, age=at, space_time=t1, time_age=t3)
                      for t1, t3 in _two_axis_type_order() for dt, at in _MAIN4]))
    families.append(("delta+gamma+z2+z3",
                     [ModelSpec(time=dt, age=at, space_age=t2, time_age=t3)
                      for t2, t3 in _two_axis_type_order() for dt, at in _MAIN4]))
    families.append(("delta+gamma+z1+z2+z3",
                     [ModelSpec(time=dt, age=at, space_time=t1, space_age=t2, time_age=t3)
                      for t1, t2, t3 in _three_axis_type_order() for dt, at in _MAIN4]))
    return families


def enumerate_models() -> list[ModelSpec]:
    """All 520 model specifications, subset by subset in canonical order."""
    out: list[ModelSpec] = []
    for _, specs in enumeration_families():
        out.extend(specs)
    return out


# Effect-presence patterns (time, age, space_time, space_age, time_age) of
# the eight nested predictor families used for best-per-family reporting.
EQ5_FAMILY_PATTERNS: dict[tuple[bool, bool, bool, bool, bool], int] = {
    (True, False, False, False, False): 1,
    (True, False, True, False, False): 2,
    (False, True, False, False, False): 3,
    (False, True, False, True, False): 4,
    (True, True, False, False, False): 5,
    (True, True, True, False, False): 6,
    (True, True, True, True, False): 7,
    (True, True, True, True, True): 8,
}


def eq5_family(spec: ModelSpec) -> int | None:
    """Family number (1-8) for best-per-family reporting, or None if the
    spec's effect pattern is outside the eight nested families."""
    pattern = (spec.time is not None, spec.age is not None,
               spec.space_time is not None, spec.space_age is not None,
               spec.time_age is not None)
    return EQ5_FAMILY_PATTERNS.get(pattern)
