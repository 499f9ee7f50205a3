from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from builders import ROSTER, World, product_params
from dnas.errors import (AlreadyRegistered, BadNonce, BadSignature, BadStatus, DuplicatePid, InvalidRecipient,
                         NotCustodian, Unauthorized, UnknownPid)
from dnas.registry import (CONTRACT_ADDRESS, TRANSITIONS, GasSchedule, RegistryState, Role, Status,
                           state_from_chain)

# role -> methods it may call, written out independently of the contract's table
ALLOWED = {
    Role.ADMINISTRATOR: {"register_entity", "rotate_entity"},
    Role.PRODUCER: {"register_product", "transfer_custody", "flag_product"},
    Role.DISTRIBUTOR: {"transfer_custody", "flag_product"},
    Role.RETAILER: {"transfer_custody", "record_sale_and_deactivate", "flag_product"},
    Role.CONSUMER: set(),
    Role.NONE: set(),
}
METHODS = ("register_entity", "rotate_entity", "register_product", "transfer_custody",
           "record_sale_and_deactivate", "flag_product")


def _call(state: RegistryState, w: World, method: str, sender: bytes) -> None:
    fresh = w.keyring.generate(f"fresh-{method}")
    if method == "register_entity":
        state.register_entity(sender, fresh.public_key, Role.DISTRIBUTOR)
    elif method == "rotate_entity":
        state.rotate_entity(sender, w.addr("distributor"), fresh.public_key)
    elif method == "register_product":
        state.register_product(sender, "M-1", b"\x01" * 32, b"\x02" * 32)
    elif method == "transfer_custody":
        state.transfer_custody(sender, "M-0", w.addr("distributor") if sender != w.addr("distributor")
                               else w.addr("retailer"), b"\x03" * 32)
    elif method == "record_sale_and_deactivate":
        state.record_sale_and_deactivate(sender, "M-0")
    else:
        state.flag_product(sender, "M-0", "test")


@pytest.mark.parametrize("method", METHODS)
@pytest.mark.parametrize("name,role", ROSTER, ids=[n for n, _ in ROSTER])
def test_role_matrix(world, name, role, method):
    state = world.state.copy()
    state.register_product(world.addr("producer"), "M-0", b"\x00" * 32, b"\x00" * 32)
    state.products["M-0"].custodian = world.addr(name)
    before = state.copy()
    if method in ALLOWED[role]:
        _call(state, world, method, world.addr(name))
    else:
        with pytest.raises(Unauthorized):
            _call(state, world, method, world.addr(name))
        assert state.state_root() == before.state_root()


def test_register_entity_cases(world):
    s = world.state
    fresh = world.keyring.generate("newcomer")
    s.register_entity(world.addr("admin"), fresh.public_key, Role.PRODUCER)
    assert s.role_of(fresh.address) is Role.PRODUCER
    with pytest.raises(AlreadyRegistered):
        s.register_entity(world.addr("admin"), fresh.public_key, Role.PRODUCER)
    with pytest.raises(Unauthorized):
        s.register_entity(world.addr("retailer"), world.keyring.generate("x").public_key, Role.PRODUCER)


def test_product_lifecycle(world):
    s = world.state
    p, d, r = world.addr("producer"), world.addr("distributor"), world.addr("retailer")
    s.register_product(p, "W-0001", b"\x01" * 32, b"\x02" * 32)
    prod = s.query_product("W-0001")
    assert prod.write_count == 1 and prod.status is Status.REGISTERED and prod.custodian == p
    with pytest.raises(DuplicatePid):
        s.register_product(p, "W-0001", b"\x01" * 32, b"\x02" * 32)
    with pytest.raises(NotCustodian):
        s.transfer_custody(d, "W-0001", r, b"\x03" * 32)
    with pytest.raises(InvalidRecipient):
        s.transfer_custody(p, "W-0001", world.addr("consumer"), b"\x03" * 32)
    s.transfer_custody(p, "W-0001", d, b"\x03" * 32)
    prod = s.query_product("W-0001")
    assert prod.custodian == d and prod.write_count == 2 and prod.writer == p
    s.transfer_custody(d, "W-0001", r, b"\x04" * 32)
    with pytest.raises(Unauthorized):
        s.record_sale_and_deactivate(d, "W-0001")
    s.record_sale_and_deactivate(r, "W-0001")
    assert s.query_product("W-0001").status is Status.DEACTIVATED
    with pytest.raises(BadStatus):
        s.record_sale_and_deactivate(r, "W-0001")
    with pytest.raises(BadStatus):
        s.transfer_custody(r, "W-0001", d, b"\x05" * 32)


def test_flag_cases(world):
    s = world.state
    p = world.addr("producer")
    s.register_product(p, "W-0001", b"\x01" * 32, b"\x02" * 32)
    with pytest.raises(UnknownPid):
        s.flag_product(p, "W-9999", "x")
    s.flag_product(p, "W-0001", "clone")
    root = s.state_root()
    s.flag_product(p, "W-0001", "clone")
    assert s.query_product("W-0001").status is Status.FLAGGED
    assert s.state_root() == root


def test_query_unknown_pid(world):
    with pytest.raises(UnknownPid):
        world.state.query_product("nope")


def test_gas_total_cost_and_out_of_gas(world):
    tx = world.tx("producer", "register_product", product_params("W-1"), gas_price=3)
    receipt = world.state.execute_transaction(tx)
    assert receipt.ok and receipt.gas_used == 100 and receipt.total_cost == 300
    root = world.state.state_root()
    short = world.tx("producer", "register_product", product_params("W-2"), gas_limit=50)
    receipt = world.state.execute_transaction(short)
    assert receipt.status == "OutOfGas" and receipt.gas_used == 50
    assert world.state.state_root() == root


def test_failed_method_charges_base_gas_and_keeps_nonce(world):
    tx = world.tx("distributor", "register_product", product_params("W-1"), gas_price=2)
    receipt = world.state.execute_transaction(tx)
    assert receipt.status == "Unauthorized" and receipt.total_cost == 200
    assert world.state.nonce_of(world.addr("distributor")) == 0


def test_replay_and_forged_signature(world):
    tx = world.tx("producer", "register_product", product_params("W-1"))
    world.state.execute_transaction(tx)
    with pytest.raises(BadNonce):
        world.state.execute_transaction(tx)
    forged = world.tx("distributor", "register_product", product_params("W-2"))
    with pytest.raises(BadSignature):
        world.state.execute_transaction(replace(forged, sender=world.addr("producer")))


def test_contract_account_cannot_send(world):
    tx = world.tx("producer", "register_product", product_params("W-1"))
    with pytest.raises(BadSignature):
        world.state.execute_transaction(replace(tx, sender=CONTRACT_ADDRESS))
    assert world.state.nonce_of(CONTRACT_ADDRESS) == 0


def test_gas_schedule_rejects_nonpositive_costs():
    with pytest.raises(ValueError):
        GasSchedule(costs={"register_product": 0})


def test_rotate_entity_moves_role_and_custody(world):
    s = world.state
    s.register_product(world.addr("producer"), "W-1", b"\x01" * 32, b"\x02" * 32)
    fresh = world.keyring.generate("producer")
    s.rotate_entity(world.addr("admin"), world.keys["producer"].address, fresh.public_key)
    assert s.role_of(fresh.address) is Role.PRODUCER
    assert s.role_of(world.keys["producer"].address) is Role.NONE
    assert s.query_product("W-1").custodian == fresh.address


def test_two_nodes_replaying_the_chain_agree(world):
    world.seal_next([world.tx("producer", "register_product", product_params("W-1"))])
    world.seal_next([world.tx("producer", "transfer_custody",
                              {"pid": "W-1", "to": world.addr("distributor").hex(),
                               "new_payload_digest": "ab" * 32})])
    a, _ = state_from_chain(world.chain)
    b, receipts = state_from_chain(world.chain)
    assert a.query_product("W-1") == b.query_product("W-1") == world.state.query_product("W-1")
    assert a.query_product("W-1").write_count == 2
    assert [r.status for r in receipts] == ["ok", "ok"]


# state-machine fuzz -----------------------------------------------------------------

ACTORS = [n for n, _ in ROSTER]
PIDS = ["A", "B", "C"]
step = st.tuples(st.sampled_from(ACTORS), st.sampled_from(METHODS[2:]), st.sampled_from(PIDS),
                 st.sampled_from(ACTORS), st.booleans())


@given(st.lists(step, max_size=25))
def test_random_transactions_preserve_invariants(steps):
    w = World(seed=1)
    s = w.state
    for actor, method, pid, other, starve in steps:
        params = {"pid": pid}
        if method == "register_product":
            params = product_params(pid)
        elif method == "transfer_custody":
            params.update(to=w.addr(other).hex(), new_payload_digest="cd" * 32)
        elif method == "flag_product":
            params["reason"] = "fuzz"
        cost = s.gas.cost(method)
        tx = w.tx(actor, method, params, gas_limit=cost - 1 if starve else cost,
                  nonce=s.nonce_of(w.addr(actor)))
        before = s.copy()
        receipt = s.execute_transaction(tx)
        if not receipt.ok:
            assert s.state_root() == before.state_root()
            continue
        assert s.nonce_of(w.addr(actor)) == before.nonce_of(w.addr(actor)) + 1
        for p, prod in s.products.items():
            old = before.products.get(p)
            assert s.role_of(prod.custodian) in (Role.PRODUCER, Role.DISTRIBUTOR, Role.RETAILER)
            if old is None:
                continue
            assert prod.write_count >= old.write_count
            if prod.status is not old.status:
                assert prod.status in TRANSITIONS[old.status] or (
                    old.status is not Status.SOLD and prod.status is Status.DEACTIVATED)
