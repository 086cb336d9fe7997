"""Scenario model and the ``tfcp-scenario v1`` text format.

A scenario file is a header line, optional top-level ``key = value`` lines,
then three sections::

    tfcp-scenario v1
    name = happy-path
    seed = 7

    [network]
    min_bail = 100
    immediate_fee_fraction = 1/4

    [actors]
    # name   role        balance  key=value ...
    alice    donor       0        death_block=20 civil_name="Alice Liddell"
    r1       registrar   1000

    [schedule]
    # block  actor  action  key=value ...
    1        r1     stake   amount=100 expiry=500

Rows are split shell-style, so quoted values may contain spaces. ``#``
starts a comment. Schedule rows must be sorted by block.
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass, field, fields
from enum import Enum
from fractions import Fraction

from .incentives import NetworkParams

HEADER = "tfcp-scenario v1"


class Role(str, Enum):
    DONOR = "donor"
    REGISTRAR = "registrar"
    WITNESS = "witness"
    KEY_TRANSFER = "attacker-keytransfer"
    WHALE = "attacker-whale"
    OBSERVER = "observer"


ACTIONS = {
    "stake": {Role.REGISTRAR},
    "release": {Role.REGISTRAR},
    "open": {Role.DONOR},
    "accept": {Role.REGISTRAR},
    "distribute": {Role.DONOR},
    "finalize": {Role.DONOR},
    "ante": {Role.WITNESS, Role.WHALE, Role.KEY_TRANSFER},
    "move": {Role.DONOR, Role.KEY_TRANSFER},
    "sweep": {Role.DONOR, Role.KEY_TRANSFER},
    "transfer": set(Role),
    "observe": {Role.OBSERVER},
}


class ScenarioError(ValueError):
    """A scenario is structurally invalid (unknown actor, bad action...)."""


class ScenarioParseError(ScenarioError):
    def __init__(self, line: int, column: int, message: str):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column
        self.message = message


@dataclass
class ActorSpec:
    name: str
    role: Role
    initial_balance: int = 0
    params: dict[str, str] = field(default_factory=dict)

    @property
    def death_block(self) -> int | None:
        value = self.params.get("death_block", "never")
        return None if value == "never" else int(value)


@dataclass
class Action:
    block: int
    actor: str
    action: str
    args: dict[str, str] = field(default_factory=dict)
    line: int = 0


@dataclass
class Scenario:
    name: str
    seed: int
    actors: list[ActorSpec] = field(default_factory=list)
    schedule: list[Action] = field(default_factory=list)
    network: NetworkParams = field(default_factory=NetworkParams)

    def actor(self, name: str) -> ActorSpec:
        for a in self.actors:
            if a.name == name:
                return a
        raise ScenarioError(f"unknown actor {name!r}")

    def validate(self) -> None:
        names = [a.name for a in self.actors]
        if len(set(names)) != len(names):
            raise ScenarioError("duplicate actor names")
        by_name = {a.name: a for a in self.actors}
        for a in self.actors:
            if a.role is Role.DONOR:
                try:
                    a.death_block
                except ValueError:
                    raise ScenarioError(f"donor {a.name}: bad death_block "
                                        f"{a.params['death_block']!r}") from None
            holder = a.params.get("holds")
            if holder is not None and by_name.get(holder, None) is None:
                raise ScenarioError(f"{a.name} holds keys of unknown actor {holder!r}")
        last = 0
        for row in self.schedule:
            where = f" (line {row.line})" if row.line else ""
            if row.block < last:
                raise ScenarioError(f"schedule not sorted by block at {row.block}{where}")
            last = row.block
            actor = by_name.get(row.actor)
            if actor is None:
                raise ScenarioError(f"schedule references unknown actor {row.actor!r}{where}")
            allowed = ACTIONS.get(row.action)
            if allowed is None:
                raise ScenarioError(f"unknown action {row.action!r}{where}")
            if actor.role not in allowed:
                raise ScenarioError(f"{actor.role.value} {row.actor!r} cannot {row.action}{where}")
            for key in ("donor", "to"):
                ref = row.args.get(key)
                if ref is not None and ref not in by_name:
                    raise ScenarioError(f"{key}={ref!r} is not an actor{where}")


_NETWORK_TYPES = {
    "min_bail": int,
    "immediate_fee_fraction": Fraction,
    "default_x": int,
    "default_span": int,
    "min_registrar_fee": int,
    "faucet_balance": int,
}


def _split(text: str, lineno: int) -> list[str]:
    try:
        return shlex.split(text, comments=True)
    except ValueError as exc:
        raise ScenarioParseError(lineno, 1, str(exc)) from None


def _col(raw: str, token: str) -> int:
    return raw.find(token) + 1 if token in raw else 1


def _kv(tokens: list[str], raw: str, lineno: int) -> dict[str, str]:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ScenarioParseError(lineno, _col(raw, tok), f"expected key=value, got {tok!r}")
        key, value = tok.split("=", 1)
        out[key] = value
    return out


def _int(token: str, raw: str, lineno: int, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise ScenarioParseError(lineno, _col(raw, token), f"{what} must be an integer, got {token!r}") from None


def parse_scenario(text: str) -> Scenario:
    lines = text.splitlines()
    section = None
    top: dict[str, str] = {}
    network: dict = {}
    actors: list[ActorSpec] = []
    schedule: list[Action] = []
    seen_header = False
    for lineno, raw in enumerate(lines, start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if not seen_header:
            if stripped != HEADER:
                raise ScenarioParseError(lineno, 1, f"first line must be {HEADER!r}")
            seen_header = True
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ScenarioParseError(lineno, len(raw.rstrip()), "unterminated section header")
            section = stripped[1:-1].strip()
            if section not in ("network", "actors", "schedule"):
                raise ScenarioParseError(lineno, _col(raw, section), f"unknown section {section!r}")
            continue
        if section in (None, "network"):
            if "=" not in stripped:
                raise ScenarioParseError(lineno, 1, "expected key = value")
            key, value = (p.strip() for p in stripped.split("=", 1))
            if section is None:
                if key not in ("name", "seed"):
                    raise ScenarioParseError(lineno, _col(raw, key), f"unknown setting {key!r}")
                top[key] = value.strip('"')
            else:
                conv = _NETWORK_TYPES.get(key)
                if conv is None:
                    raise ScenarioParseError(lineno, _col(raw, key), f"unknown network parameter {key!r}")
                try:
                    network[key] = conv(value)
                except (ValueError, ZeroDivisionError):
                    raise ScenarioParseError(lineno, _col(raw, value), f"bad value for {key}: {value!r}") from None
            continue
        tokens = _split(raw, lineno)
        if section == "actors":
            if len(tokens) < 3:
                raise ScenarioParseError(lineno, 1, "actor rows need: name role balance")
            name, role, balance = tokens[:3]
            try:
                role_enum = Role(role)
            except ValueError:
                raise ScenarioParseError(lineno, _col(raw, role), f"unknown role {role!r}") from None
            actors.append(ActorSpec(name, role_enum, _int(balance, raw, lineno, "balance"),
                                    _kv(tokens[3:], raw, lineno)))
        else:
            if len(tokens) < 3:
                raise ScenarioParseError(lineno, 1, "schedule rows need: block actor action")
            block = _int(tokens[0], raw, lineno, "block")
            schedule.append(Action(block, tokens[1], tokens[2], _kv(tokens[3:], raw, lineno), lineno))
    if not seen_header:
        raise ScenarioParseError(1, 1, f"missing {HEADER!r} header")
    try:
        seed = int(top.get("seed", "0"))
    except ValueError:
        raise ScenarioParseError(1, 1, "seed must be an integer") from None
    scenario = Scenario(top.get("name", "unnamed"), seed, actors, schedule, NetworkParams(**network))
    scenario.validate()
    return scenario


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def _quote(value: str) -> str:
    return shlex.quote(str(value))


def dump_scenario(scenario: Scenario) -> str:
    out = [HEADER, f"name = {scenario.name}", f"seed = {scenario.seed}", "", "[network]"]
    defaults = NetworkParams()
    for f in fields(NetworkParams):
        value = getattr(scenario.network, f.name)
        if value != getattr(defaults, f.name) and value is not None:
            out.append(f"{f.name} = {value}")
    out += ["", "[actors]"]
    for a in scenario.actors:
        extra = " ".join(f"{k}={_quote(v)}" for k, v in a.params.items())
        out.append(f"{a.name} {a.role.value} {a.initial_balance} {extra}".rstrip())
    out += ["", "[schedule]"]
    for row in scenario.schedule:
        extra = " ".join(f"{k}={_quote(v)}" for k, v in row.args.items())
        out.append(f"{row.block} {row.actor} {row.action} {extra}".rstrip())
    return "\n".join(out) + "\n"


class ScenarioBuilder:
    """Programmatic construction; rows are kept stably sorted by block."""

    def __init__(self, name: str, seed: int = 0, network: NetworkParams | None = None):
        self.scenario = Scenario(name, seed, network=network or NetworkParams())

    def actor(self, name: str, role: Role, balance: int = 0, **params) -> "ScenarioBuilder":
        self.scenario.actors.append(
            ActorSpec(name, role, balance, {k: str(v) for k, v in params.items()}))
        return self

    def at(self, block: int, actor: str, action: str, **args) -> "ScenarioBuilder":
        self.scenario.schedule.append(Action(block, actor, action, {k: str(v) for k, v in args.items()}))
        return self

    def build(self) -> Scenario:
        self.scenario.schedule.sort(key=lambda r: r.block)
        self.scenario.validate()
        return self.scenario
