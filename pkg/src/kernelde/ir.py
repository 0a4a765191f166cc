"""Circuit intermediate representation with zone tracking.

A circuit is an immutable sequence of instructions over ``n_sites`` atoms.
Every atom is either in the computation zone, where it receives gates, or in
the storage zone.  ``Move`` instructions toggle membership and global gates
act on exactly the atoms currently in the computation zone.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from kernelde.qsim import GLOBAL_KINDS, Gate, KrausChannel, SimulationError


@dataclass(frozen=True)
class Move:
    site: int
    into: bool

    @property
    def targets(self) -> tuple[int, ...]:
        return (self.site,)


@dataclass(frozen=True)
class Measure:
    sites: tuple[int, ...]

    @property
    def targets(self) -> tuple[int, ...]:
        return self.sites


@dataclass(frozen=True, eq=False)
class ChannelRef:
    channel: KrausChannel

    @property
    def targets(self) -> tuple[int, ...]:
        return self.channel.targets


Instruction = Gate | Move | Measure | ChannelRef


class CircuitError(ValueError):
    pass


@dataclass(frozen=True)
class Circuit:
    n_sites: int
    instructions: tuple[Instruction, ...]
    initial_zone: frozenset[int]
    anchors: tuple[tuple[str, int], ...] = ()
    name: str = ""
    zones: tuple[frozenset[int], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "instructions", tuple(self.instructions))
        object.__setattr__(self, "initial_zone", frozenset(self.initial_zone))
        object.__setattr__(self, "zones", tuple(_zones(self.initial_zone, self.instructions)))

    def __len__(self) -> int:
        return len(self.instructions)

    @property
    def anchor_map(self) -> dict[str, int]:
        return dict(self.anchors)

    def anchor(self, name: str) -> int:
        try:
            return self.anchor_map[name]
        except KeyError:
            raise CircuitError(f"unknown anchor {name!r}; known: {sorted(self.anchor_map)}") from None

    @property
    def measured_sites(self) -> tuple[int, ...]:
        sites: list[int] = []
        for ins in self.instructions:
            if isinstance(ins, Measure):
                sites.extend(s for s in ins.sites if s not in sites)
        return tuple(sites)

    def with_instructions(self, instructions: Sequence[Instruction], anchors=None) -> "Circuit":
        return replace(self, instructions=tuple(instructions), anchors=self.anchors if anchors is None else anchors)

    def insert(self, index: int, ins: Instruction) -> "Circuit":
        """New circuit with ``ins`` placed before instruction ``index``."""
        if not 0 <= index <= len(self.instructions):
            raise CircuitError(f"location {index} outside circuit of length {len(self.instructions)}")
        if isinstance(ins, Gate) and ins.is_global and not ins.targets:
            zone = self.zone_before(index)
            ins = Gate(ins.kind, tuple(sorted(zone)), ins.angle)
        new = list(self.instructions)
        new.insert(index, ins)
        anchors = tuple((k, v + 1 if v > index else v) for k, v in self.anchors)
        return self.with_instructions(new, anchors)

    def zone_before(self, index: int) -> frozenset[int]:
        if index < len(self.zones):
            return self.zones[index]
        zone = set(self.initial_zone)
        for ins in self.instructions:
            if isinstance(ins, Move):
                (zone.add if ins.into else zone.discard)(ins.site)
        return frozenset(zone)

    def validate(self) -> None:
        """Check zone discipline; raise :class:`CircuitError` on violation."""
        for idx, (ins, zone) in enumerate(zip(self.instructions, self.zones)):
            for t in ins.targets:
                if not 0 <= t < self.n_sites:
                    raise CircuitError(f"instruction {idx}: site {t} out of range")
            if isinstance(ins, Gate):
                if ins.is_global and set(ins.targets) != set(zone):
                    raise CircuitError(f"instruction {idx}: global {ins.kind} on {ins.targets}, zone is {sorted(zone)}")
                missing = set(ins.targets) - zone
                if missing:
                    raise CircuitError(f"instruction {idx}: {ins.kind} on sites {sorted(missing)} in storage")
            if isinstance(ins, Move):
                if ins.into == (ins.site in zone):
                    where = "computation" if ins.into else "storage"
                    raise CircuitError(f"instruction {idx}: site {ins.site} already in {where} zone")

    def dump(self) -> str:
        """One line per instruction: ``IDX KIND TARGETS ANGLE ZONE``."""
        lines = []
        for idx, (ins, zone) in enumerate(zip(self.instructions, self.zones)):
            angle = "-"
            if isinstance(ins, Gate):
                kind = ins.kind
                if ins.angle is not None:
                    angle = f"{ins.angle:.9g}"
            elif isinstance(ins, Move):
                kind = "MoveIn" if ins.into else "MoveOut"
            elif isinstance(ins, Measure):
                kind = "Measure"
            else:
                kind = f"Channel[{ins.channel.label or ins.channel.kind}]"
            targets = ",".join(str(t) for t in ins.targets) or "-"
            zone_s = ",".join(str(s) for s in sorted(zone)) or "-"
            lines.append(f"{idx} {kind} {targets} {angle} {zone_s}")
        return "\n".join(lines) + "\n"


def _zones(initial: Iterable[int], instructions: Sequence[Instruction]):
    zone = set(initial)
    for ins in instructions:
        yield frozenset(zone)
        if isinstance(ins, Move):
            (zone.add if ins.into else zone.discard)(ins.site)


class CircuitBuilder:
    """Incremental builder that resolves global gates against the live zone."""

    def __init__(self, n_sites: int, zone: Iterable[int] | None = None, name: str = ""):
        self.n_sites = n_sites
        self.initial_zone = frozenset(range(n_sites) if zone is None else zone)
        self.zone = set(self.initial_zone)
        self.instructions: list[Instruction] = []
        self.anchors: dict[str, int] = {}
        self.name = name

    def gate(self, kind: str, *targets: int, angle: float | None = None) -> "CircuitBuilder":
        if kind in GLOBAL_KINDS:
            if targets:
                raise CircuitError("global gates take their targets from the zone")
            targets = tuple(sorted(self.zone))
        self.instructions.append(Gate(kind, targets, angle))
        return self

    def move_in(self, site: int) -> "CircuitBuilder":
        self.instructions.append(Move(site, True))
        self.zone.add(site)
        return self

    def move_out(self, site: int) -> "CircuitBuilder":
        self.instructions.append(Move(site, False))
        self.zone.discard(site)
        return self

    def measure(self, *sites: int) -> "CircuitBuilder":
        self.instructions.append(Measure(tuple(sites)))
        return self

    def channel(self, ch: KrausChannel) -> "CircuitBuilder":
        self.instructions.append(ChannelRef(ch))
        return self

    def mark(self, name: str) -> "CircuitBuilder":
        self.anchors[name] = len(self.instructions)
        return self

    def extend(self, fragment: Circuit, site_map: Sequence[int] | None = None, prefix: str = "") -> "CircuitBuilder":
        """Append a fragment, relabelling its site ``i`` to ``site_map[i]``."""
        site_map = list(range(fragment.n_sites)) if site_map is None else list(site_map)
        offset = len(self.instructions)
        for ins in fragment.instructions:
            self.instructions.append(_relabel(ins, site_map))
            if isinstance(ins, Move):
                (self.zone.add if ins.into else self.zone.discard)(site_map[ins.site])
        for name, idx in fragment.anchors:
            self.anchors[prefix + name] = offset + idx
        return self

    def build(self) -> Circuit:
        circ = Circuit(
            self.n_sites,
            tuple(self.instructions),
            self.initial_zone,
            tuple(self.anchors.items()),
            self.name,
        )
        circ.validate()
        return circ


def _relabel(ins: Instruction, site_map: Sequence[int]) -> Instruction:
    if isinstance(ins, Gate):
        return Gate(ins.kind, tuple(site_map[t] for t in ins.targets), ins.angle)
    if isinstance(ins, Move):
        return Move(site_map[ins.site], ins.into)
    if isinstance(ins, Measure):
        return Measure(tuple(site_map[s] for s in ins.sites))
    if isinstance(ins, ChannelRef):
        return ChannelRef(ins.channel.retarget([site_map[t] for t in ins.channel.targets]))
    raise SimulationError(f"unsupported instruction {ins!r}")
