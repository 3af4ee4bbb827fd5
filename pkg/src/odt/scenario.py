"""Scenario files: scripted devices, processes and attacks, replayed exactly.

One directive per line, ``name key=value ...``; ``#`` starts a comment::

    seed value=7
    runs n=1
    omega words=4096                   # optional start=0x10000000000
    locations m=5
    device id=D otee=yes
    device id=D2
    process id=agent device=D2 seed=42 size=4096
    clone id=mirror src=agent device=D fraction=0.5
    route process=agent via=D proxy=mirror
    interrupt device=D session=1 read=3
    server mode=aggressor expect_seed=42 expect_size=4096
    connect process=agent
    expect verdict=Inconclusive        # or: expect rate=0.03125

Clones and default route proxies are redrawn on every run. A route without
``proxy=`` fronts the connection with an independent random image. All
randomness comes from one generator seeded by ``seed``.
"""
from __future__ import annotations

import random
import shlex
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from scipy import stats

from .device import (
    DEFAULT_OMEGA,
    DeviceSim,
    Network,
    Omega,
    ProcessImage,
    RoutingRule,
    clone_memory_subset,
    load_process,
)
from .endpoints import (
    Otee,
    OteeIdentity,
    Registry,
    Server,
    Verdict,
    client_for,
    odt_message,
    run_loopback,
)
from .witness import DEFAULT_LOCATIONS

DIRECTIVES = {
    "seed": ({"value"}, set()),
    "runs": ({"n"}, set()),
    "omega": ({"words"}, {"start"}),
    "locations": ({"m"}, set()),
    "device": ({"id"}, {"otee"}),
    "process": ({"id", "device", "seed", "size"}, set()),
    "clone": ({"id", "src", "device", "fraction"}, set()),
    "route": ({"process", "via"}, {"proxy"}),
    "interrupt": ({"device", "session", "read"}, set()),
    "server": ({"mode"}, {"expect_seed", "expect_size"}),
    "connect": ({"process"}, set()),
    "expect": (set(), {"verdict", "rate"}),
}


class ScenarioError(ValueError):
    """Malformed scenario file or dangling reference."""


def _int(text: str) -> int:
    return int(text, 0)


def _bool(text: str) -> bool:
    if text.lower() in ("yes", "true", "1"):
        return True
    if text.lower() in ("no", "false", "0"):
        return False
    raise ScenarioError(f"not a boolean: {text!r}")


@dataclass
class ScenarioSpec:
    name: str = "scenario"
    seed: int = 0
    runs: int = 1
    omega: Omega = DEFAULT_OMEGA
    locations: int = DEFAULT_LOCATIONS
    devices: dict[str, bool] = field(default_factory=dict)
    processes: dict[str, dict] = field(default_factory=dict)
    clones: dict[str, dict] = field(default_factory=dict)
    routes: list[dict] = field(default_factory=list)
    interrupts: list[dict] = field(default_factory=list)
    server: dict = field(default_factory=lambda: {"mode": "aggressor"})
    connects: list[str] = field(default_factory=list)
    expect_verdict: Optional[Verdict] = None
    expect_rate: Optional[float] = None

    @classmethod
    def parse(cls, text: str, name: str = "scenario") -> "ScenarioSpec":
        spec = cls(name=name)
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                spec._directive(*_split(line))
            except (ValueError, KeyError) as exc:
                raise ScenarioError(f"{name}:{lineno}: {exc}") from None
        spec._check()
        return spec

    @classmethod
    def load(cls, path) -> "ScenarioSpec":
        path = Path(path)
        return cls.parse(path.read_text(), path.name)

    def _directive(self, kind: str, kv: dict[str, str]) -> None:
        if kind not in DIRECTIVES:
            raise ScenarioError(f"unknown directive {kind!r}")
        required, optional = DIRECTIVES[kind]
        missing = required - kv.keys()
        extra = kv.keys() - required - optional
        if missing or extra:
            raise ScenarioError(
                f"{kind}: missing {sorted(missing)} unexpected {sorted(extra)}"
            )
        if kind == "seed":
            self.seed = _int(kv["value"])
        elif kind == "runs":
            self.runs = _int(kv["n"])
        elif kind == "omega":
            start = _int(kv.get("start", hex(DEFAULT_OMEGA.ranges[0][0])))
            self.omega = Omega(((start, start + 8 * _int(kv["words"])),))
        elif kind == "locations":
            self.locations = _int(kv["m"])
        elif kind == "device":
            self.devices[kv["id"]] = _bool(kv.get("otee", "no"))
        elif kind == "process":
            self.processes[kv["id"]] = {
                "device": kv["device"], "seed": _int(kv["seed"]), "size": _int(kv["size"])
            }
        elif kind == "clone":
            self.clones[kv["id"]] = {
                "src": kv["src"], "device": kv["device"], "fraction": float(kv["fraction"])
            }
        elif kind == "route":
            self.routes.append(dict(kv))
        elif kind == "interrupt":
            self.interrupts.append(
                {"device": kv["device"], "session": _int(kv["session"]), "read": _int(kv["read"])}
            )
        elif kind == "server":
            if kv["mode"] not in ("plain", "aggressor"):
                raise ScenarioError(f"server mode must be plain or aggressor, not {kv['mode']!r}")
            self.server = dict(kv)
        elif kind == "connect":
            self.connects.append(kv["process"])
        elif kind == "expect":
            if "verdict" in kv:
                self.expect_verdict = Verdict(kv["verdict"])
            if "rate" in kv:
                self.expect_rate = float(kv["rate"])

    def _check(self) -> None:
        images = set(self.processes) | set(self.clones)
        for pid, p in self.processes.items():
            if p["device"] not in self.devices:
                raise ScenarioError(f"process {pid}: unknown device {p['device']}")
        for cid, c in self.clones.items():
            if c["src"] not in self.processes:
                raise ScenarioError(f"clone {cid}: unknown source {c['src']}")
            if c["device"] not in self.devices:
                raise ScenarioError(f"clone {cid}: unknown device {c['device']}")
        for r in self.routes:
            if r["process"] not in images:
                raise ScenarioError(f"route: unknown process {r['process']}")
            if r["via"] not in self.devices:
                raise ScenarioError(f"route: unknown device {r['via']}")
            if "proxy" in r and r["proxy"] not in images:
                raise ScenarioError(f"route: unknown proxy {r['proxy']}")
        for i in self.interrupts:
            if i["device"] not in self.devices:
                raise ScenarioError(f"interrupt: unknown device {i['device']}")
        for pid in self.connects:
            if pid not in images:
                raise ScenarioError(f"connect: unknown process {pid}")
        if self.server["mode"] == "aggressor" and not {"expect_seed", "expect_size"} <= self.server.keys():
            raise ScenarioError("an aggressor server needs expect_seed and expect_size")
        if not self.connects:
            raise ScenarioError("scenario has no connect directive")


def _split(line: str) -> tuple[str, dict[str, str]]:
    kind, *pairs = shlex.split(line)
    kv = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ScenarioError(f"expected key=value, got {pair!r}")
        kv[key] = value
    return kind, kv


@dataclass(frozen=True)
class ConnectionResult:
    """One connection, with the facts needed to audit a Protected verdict."""

    process: str
    verdict: Verdict
    measured_device: Optional[str]
    measured_process: Optional[str]
    b_co: Optional[int]
    signer_device: Optional[str]
    keys_agree: bool


@dataclass
class ScenarioResult:
    spec: ScenarioSpec
    runs: list[list[ConnectionResult]]

    @property
    def verdicts(self) -> list[Verdict]:
        return [c.verdict for run in self.runs for c in run]

    @property
    def protected(self) -> int:
        return sum(v == Verdict.PROTECTED for v in self.verdicts)

    @property
    def rate(self) -> float:
        return self.protected / len(self.verdicts)

    def rate_interval(self, level: float = 0.95) -> tuple[float, float]:
        ci = stats.binomtest(self.protected, len(self.verdicts)).proportion_ci(level, "exact")
        return ci.low, ci.high

    @property
    def expectation_met(self) -> bool:
        ok = True
        if self.spec.expect_verdict is not None:
            ok &= all(v == self.spec.expect_verdict for v in self.verdicts)
        if self.spec.expect_rate is not None:
            low, high = self.rate_interval()
            ok &= low <= self.spec.expect_rate <= high
        return ok

    def summary(self) -> dict:
        low, high = self.rate_interval()
        return {
            "scenario": self.spec.name,
            "runs": len(self.runs),
            "connections": len(self.verdicts),
            "protected": self.protected,
            "rate": self.rate,
            "rate_ci95": [low, high],
            "verdicts": sorted({v.value for v in self.verdicts}),
            "expected_verdict": self.spec.expect_verdict.value if self.spec.expect_verdict else None,
            "expected_rate": self.spec.expect_rate,
            "expectation_met": self.expectation_met,
        }


class _Images:
    """Seeded images are built once and shared read-only across runs."""

    def __init__(self, omega: Omega):
        self.omega = omega
        self._cache: dict[tuple[int, int], dict] = {}

    def place(self, device: DeviceSim, pid: str, seed: int, size: int) -> ProcessImage:
        key = (seed, size)
        if key not in self._cache:
            self._cache[key] = load_process(DeviceSim("template"), seed, size, pid, self.omega).memory
        return device.add_process(ProcessImage(pid, device.id, self._cache[key]))


def run_scenario(spec: ScenarioSpec, runs: Optional[int] = None, seed: Optional[int] = None) -> ScenarioResult:
    rng = random.Random(spec.seed if seed is None else seed)
    images = _Images(spec.omega)
    return ScenarioResult(spec, [_run_once(spec, rng, images) for _ in range(runs or spec.runs)])


def _run_once(spec: ScenarioSpec, rng: random.Random, images: _Images) -> list[ConnectionResult]:
    network = Network()
    registry = Registry()
    otees: dict[str, Otee] = {}
    for dev_id, has_otee in spec.devices.items():
        device = network.add_device(DeviceSim(dev_id, has_otee))
        if has_otee:
            identity = OteeIdentity.generate(dev_id, rng)
            registry.register(identity)
            otees[dev_id] = Otee(identity, device, spec.locations, spec.omega)

    procs: dict[str, ProcessImage] = {}
    for pid, p in spec.processes.items():
        procs[pid] = images.place(network.devices[p["device"]], pid, p["seed"], p["size"])
    for cid, c in spec.clones.items():
        procs[cid] = clone_memory_subset(
            procs[c["src"]], network.devices[c["device"]], c["fraction"], rng, cid
        )
    for r in spec.routes:
        src, egress = procs[r["process"]], network.devices[r["via"]]
        if "proxy" in r:
            proxy = procs[r["proxy"]]
            if proxy.device != egress.id:
                raise ScenarioError(f"proxy {proxy.pid} is not on {egress.id}")
        else:
            proxy = load_process(
                egress, rng.getrandbits(64), len(src.memory), f"{src.pid}-proxy", spec.omega
            )
        network.set_route(RoutingRule(src.device, src.pid, egress.id, proxy.pid))
    for i in spec.interrupts:
        network.devices[i["device"]].schedule_interrupt(i["session"], i["read"])

    if spec.server["mode"] == "aggressor":
        expected = images.place(
            DeviceSim("aggressor"), "expected",
            _int(spec.server["expect_seed"]), _int(spec.server["expect_size"]),
        )
        server = Server("aggressor", expected, registry, rng, spec.locations, spec.omega)
    else:
        server = Server("plain", rng=rng, m=spec.locations, omega=spec.omega)

    results = []
    for pid in spec.connects:
        client = client_for(network, procs[pid], otees, rng)
        session = server.new_session()
        run_loopback(client, session)
        record = server.finish(session)
        outcome = record.outcome
        verdict = outcome.verdict if outcome else Verdict.INCONCLUSIVE
        signer = None
        if record.token is not None:
            signer = registry.signer_of(
                odt_message(record.token.y, record.token.z, record.k), record.token.sigma
            )
        measured = client.process if client.otee else None
        results.append(
            ConnectionResult(
                process=pid,
                verdict=verdict,
                measured_device=measured.device if measured else None,
                measured_process=measured.pid if measured else None,
                b_co=client.measurement.b_co if client.measurement else None,
                signer_device=signer,
                keys_agree=client.secrets is not None and client.secrets.k == record.k,
            )
        )
    return results
