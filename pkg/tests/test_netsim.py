from fractions import Fraction
from math import comb

import pytest

from dnas.errors import ChainUnavailable, ScenarioFormatError, UnknownScenario
from dnas.ledger import dump_chain, validate_chain
from dnas.netsim import SimConfig, Simulation
from dnas.scenarios import (ScenarioRunner, catalog, honest_document, honest_run, linkability_metric,
                            load_scenario, measure_linkability, parse_document, run_scenario, run_trials)

CATALOG = sorted(catalog())


def _register(sim: Simulation, pid: str, **kw):
    return sim.submit_as("producer", "register_product",
                         {"pid": pid, "tag_uid_digest": "00" * 32, "payload_digest": "00" * 32}, **kw)


# simulation core -------------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(validators=0)
    with pytest.raises(ValueError):
        SimConfig(block_time=4, latency=1)


def test_liveness_within_validator_count_rounds():
    sim = Simulation(SimConfig(seed=1))
    digests = [_register(sim, f"L-{i}").digest() for i in range(6)]
    rounds = sim.wait_for(digests, max_rounds=4)
    assert rounds <= 4
    assert all(sim.finalized[d].ok for d in digests)


def test_every_node_agrees_after_finality():
    sim = Simulation(SimConfig(seed=2))
    sim.wait_for([_register(sim, "W-0001").digest()])
    sim.run_rounds(1)
    views = [sim.query("W-0001", via=n) for n in sim.nodes]
    assert all(v == views[0] for v in views)
    assert len(set(sim.state_digests().values())) == 1
    assert validate_chain(sim.chain)


def test_kill_one_then_two_then_revive():
    sim = Simulation(SimConfig(seed=3))
    sim.kill("validator-1")
    assert sim.run_rounds(4) == 3  # the dead validator's own round is skipped
    sim.kill("validator-2")
    assert sim.run_rounds(4) == 0
    with pytest.raises(ChainUnavailable):
        sim.query("anything", via="validator-1")
    sim.revive("validator-2")
    produced = sim.run_rounds(10)
    assert produced >= 7
    sim.revive("validator-1")
    sim.run_rounds(2)
    digests = sim.state_digests()
    assert len(set(digests.values())) == 1 and len(digests) == len(sim.nodes)
    assert len({n.chain.height for n in sim.nodes.values()}) == 1


def test_queries_served_while_halted():
    sim = Simulation(SimConfig(seed=4))
    sim.wait_for([_register(sim, "W-0001").digest()])
    sim.kill("validator-0")
    sim.kill("validator-1")
    assert sim.run_rounds(4) == 0
    assert sim.query("W-0001", via="validator-3").pid == "W-0001"


def test_same_config_same_chain():
    dumps = []
    for _ in range(2):
        sim = Simulation(SimConfig(seed=5))
        sim.wait_for([_register(sim, f"D-{i}").digest() for i in range(3)])
        dumps.append(dump_chain(sim.chain))
    assert dumps[0] == dumps[1]
    other = Simulation(SimConfig(seed=6))
    assert other.genesis.digest() != Simulation(SimConfig(seed=5)).genesis.digest()


def test_listener_nodes_do_not_vote():
    sim = Simulation(SimConfig(seed=7))
    sim.wait_for([_register(sim, "W-1").digest()])
    voters = {v.validator for b in sim.chain.blocks[1:] for v in b.votes}
    assert voters <= set(sim.validator_set.validators)
    assert not sim.nodes["node-producer"].is_validator


# scenarios --------------------------------------------------------------------------------

@pytest.mark.parametrize("name", CATALOG)
def test_catalog_scenario_passes(name):
    report = run_scenario(SimConfig(seed=7), name)
    failed = [a for a in report.assertions if not a["passed"]]
    assert report.passed, failed
    assert report.detection is not False


@pytest.mark.parametrize("name", ["happy-path", "t01-clone", "t08-replay"])
def test_scenario_report_bytes_are_stable(name):
    first, r1 = run_trials(SimConfig(seed=11), name)
    second, r2 = run_trials(SimConfig(seed=11), name)
    assert first.to_bytes() == second.to_bytes()
    assert dump_chain(r1.sim.chain) == dump_chain(r2.sim.chain)


def test_happy_path_all_genuine():
    report = run_scenario(SimConfig(seed=1), "happy-path")
    assert report.detection is None
    assert set(report.outcomes()) == {"Genuine"}


def test_clone_detected_at_retailer():
    report = run_scenario(SimConfig(seed=1), "t01-clone")
    last = report.verdicts[-1]
    assert last["actor"] == "retailer" and last["outcome"] == "CloneDetected"


def test_store_history_tracks_write_count():
    _, runner = run_trials(SimConfig(seed=2), "happy-path")
    prod = runner.sim.query("W-0001")
    for name in ("producer", "distributor", "retailer"):
        record = runner.sim.entity(name).store.query_by_pid("W-0001")
        assert len(record.transaction_history) == prod.write_count - 1 == 2


def test_replay_leaves_no_duplicate_history():
    report = run_scenario(SimConfig(seed=3), "t08-replay")
    replay = next(s for s in report.steps if s["op"] == "replay")
    assert replay["result"] == "BadNonce" and replay["custody_events"] == 1
    capture = next(s for s in report.steps if s["op"] == "capture")
    assert capture["state_changed"] is False
    assert any("confidentiality" in o for o in report.observations)


def test_dos_flood_measurements():
    report = run_scenario(SimConfig(seed=4), "t11-dos")
    res = report.steps[0]
    assert res["honest_finalized"] == 10 and res["within_bound"]
    assert res["blocks_to_finalize"] <= res["bound"] == 2
    assert res["spam_pooled"] >= 1000 - res["capacity"] * res["blocks_to_finalize"]
    assert res["max_block_gas"] <= 500 and res["oversized_rejected"] == 5


def test_dos_equal_price_uses_tie_break_order():
    doc = load_scenario("t11-dos")
    doc["id"] = "t11-dos-equal"
    doc["steps"] = [dict(doc["steps"][0], spam=40, spam_price=10, max_rounds=30)]
    doc["steps"][0].pop("expect")
    doc["steps"][0].pop("detect")
    res = run_scenario(SimConfig(seed=5), doc).steps[0]
    assert res["honest_finalized"] == 10
    assert res["honest_order"] == sorted(res["honest_order"])


def test_spoof_rejected():
    report = run_scenario(SimConfig(seed=6), "t14-spoof")
    ops = {s["op"]: s["result"] for s in report.steps if s["op"] in ("forge", "attempt")}
    assert ops == {"forge": "BadSignature", "attempt": "Unauthorized"}


def test_multi_trial_report():
    report = run_scenario(SimConfig(seed=1, trials=3), "t04-modify")
    assert [t["seed"] for t in report.trials] == [1, 2, 3]
    assert report.detection is True


def test_scenario_format_errors(tmp_path):
    with pytest.raises(ScenarioFormatError):
        parse_document("{not json")
    with pytest.raises(ScenarioFormatError):
        parse_document('{"id": "x", "steps": [{"op": "teleport"}]}')
    with pytest.raises(ScenarioFormatError):
        parse_document('{"id": "x", "steps": [{"op": "ship", "from": "a"}]}')
    with pytest.raises(ScenarioFormatError):
        parse_document('{"id": "x", "config": {"warp": 1}, "steps": []}')
    with pytest.raises(UnknownScenario):
        load_scenario("no-such-scenario")
    path = tmp_path / "s.json"
    path.write_text('{"id": "custom", "steps": [{"op": "produce", "actor": "producer", "pid": "Q"}]}')
    assert run_scenario(SimConfig(), str(path)).steps[0]["result"] == "ok"


# linkability --------------------------------------------------------------------------------

def oracle_linkability(n: int, k: int | None) -> Fraction:
    owner = [0 if k is None else i // k for i in range(n)]
    same = sum(1 for i in range(n) for j in range(i + 1, n) if owner[i] == owner[j])
    return Fraction(same, n * (n - 1) // 2)


def test_linkability_metric_definition():
    assert linkability_metric([b"a"] * 5) == 1
    assert linkability_metric([bytes([i]) for i in range(5)]) == 0
    assert oracle_linkability(100, 10) == Fraction(10 * comb(10, 2), comb(100, 2)) == Fraction(1, 11)


@pytest.mark.parametrize("k", [None, 1, 10, 50])
def test_measured_linkability_equals_oracle(k):
    assert measure_linkability(SimConfig(seed=8), k) == oracle_linkability(100, k)


# honest fuzz ------------------------------------------------------------------------------

def test_honest_documents_vary():
    docs = [honest_document(s) for s in range(20)]
    assert len({len(d["steps"]) for d in docs}) > 3


@pytest.mark.parametrize("seed", range(25))
def test_honest_runs_have_no_false_positives(seed):
    report = honest_run(seed)
    assert report.passed
    assert set(report.outcomes()) <= {"Genuine"}


def test_runner_rejects_unknown_tag_handle():
    doc = {"id": "bad", "steps": [{"op": "disable", "tag": "nope"}]}
    with pytest.raises(ScenarioFormatError):
        ScenarioRunner(doc, SimConfig()).run()
