from pathlib import Path

import pytest

from odt.endpoints import Verdict
from odt.scenario import ScenarioError, ScenarioSpec, run_scenario

SCENARIOS = Path(__file__).parent.parent / "scenarios"

HEADER = """\
omega words=512
device id=D otee=yes
device id=D2
process id=agent device=D seed=5 size=512
process id=far device=D2 seed=5 size=512
server mode=aggressor expect_seed=5 expect_size=512
"""


def parse(body):
    return ScenarioSpec.parse(HEADER + body)


def assert_binding_chain(result):
    # every Protected verdict must come with the facts it is supposed to imply
    for run in result.runs:
        for c in run:
            if c.verdict == Verdict.PROTECTED:
                assert c.signer_device == c.measured_device
                assert c.b_co == 1 and c.keys_agree


@pytest.mark.parametrize(
    "name, verdict",
    [
        ("honest", Verdict.PROTECTED),
        ("routing_attack", Verdict.INCONCLUSIVE),
        ("interrupt", Verdict.INCONCLUSIVE),
        ("plain_server", Verdict.INCONCLUSIVE),
    ],
)
def test_shipped_scenarios(name, verdict):
    spec = ScenarioSpec.load(SCENARIOS / f"{name}.cfg")
    result = run_scenario(spec)
    assert set(result.verdicts) == {verdict}
    assert result.expectation_met
    assert_binding_chain(result)


def test_shipped_partial_clone_parses():
    spec = ScenarioSpec.load(SCENARIOS / "partial_clone.cfg")
    assert spec.runs == 10_000 and spec.expect_rate == 0.03125
    assert spec.clones["mirror"]["fraction"] == 0.5


def test_replay_is_exact():
    spec = ScenarioSpec.load(SCENARIOS / "partial_clone.cfg")
    a = run_scenario(spec, runs=200, seed=9)
    b = run_scenario(spec, runs=200, seed=9)
    assert a.runs == b.runs
    assert_binding_chain(a)


def test_full_and_empty_clones():
    body = "clone id=m src=far device=D fraction={}\nroute process=far via=D proxy=m\nconnect process=far\n"
    full = run_scenario(parse(body.format(1.0)), runs=5)
    assert set(full.verdicts) == {Verdict.PROTECTED}
    assert all(c.measured_process == "m" for run in full.runs for c in run)
    empty = run_scenario(parse(body.format(0.0)), runs=5)
    assert set(empty.verdicts) == {Verdict.INCONCLUSIVE}
    assert all(c.b_co == 0 for run in empty.runs for c in run)


def test_interrupt_hits_only_its_session():
    spec = parse("interrupt device=D session=2 read=1\nconnect process=agent\nconnect process=agent\n")
    result = run_scenario(spec)
    assert result.verdicts == [Verdict.PROTECTED, Verdict.INCONCLUSIVE]


def test_expectations():
    ok = parse("connect process=agent\nexpect verdict=Protected\n")
    assert run_scenario(ok).expectation_met
    wrong = parse("connect process=agent\nexpect verdict=Inconclusive\n")
    assert not run_scenario(wrong).expectation_met
    rate = parse("connect process=agent\nexpect rate=0.5\n")
    assert not run_scenario(rate, runs=30).expectation_met
    summary = run_scenario(ok).summary()
    assert summary["verdicts"] == ["Protected"] and summary["expectation_met"]


@pytest.mark.parametrize(
    "text, message",
    [
        ("bogus x=1\nconnect process=agent\n", "unknown directive"),
        ("device otee=yes\n", "missing"),
        ("device id=Z colour=red\n", "unexpected"),
        ("process id=p device=nowhere seed=1 size=4\nconnect process=p\n", "unknown device"),
        ("connect process=ghost\n", "unknown process"),
        ("route process=agent via=D9\nconnect process=agent\n", "unknown device"),
        ("expect verdict=Maybe\nconnect process=agent\n", "Maybe"),
        ("connect process=agent extra\n", "key=value"),
        ("server mode=aggressor\nconnect process=agent\n", "expect_seed"),
        ("server mode=sneaky\n", "plain or aggressor"),
        ("", "no connect"),
    ],
)
def test_parse_errors(text, message):
    with pytest.raises(ScenarioError, match=message):
        parse(text)


def test_comments_and_blank_lines():
    spec = parse("\n# just a note\nconnect process=agent   # trailing\n")
    assert spec.connects == ["agent"]
