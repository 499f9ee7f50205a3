"""Batch command-line interface.

Exit codes: 0 success, 1 an expected detection or assertion failed,
2 usage error / malformed input / not found, 3 internal invariant violation.

Settings resolve as command-line flag, then ``--config`` file, then built-in
default. The default seed comes from ``$DNAS_SEED`` when set.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import traceback
from pathlib import Path
from typing import Any, Sequence

from cryptography.exceptions import InvalidTag

from . import __version__
from .doublespend import Mode, format_table, probability_table, table_csv
from .errors import DnasError, InvariantViolation, NotFound
from .keyring import (Keyring, KeyPair, KeyStatus, derive_private, keystore_is_admin, load_keystore,
                      save_keystore)
from .ledger import Chain, chain_lines, dump_chain, merkle_prove, read_chain, verify_proof
from .netsim import SimConfig
from .registry import state_from_chain
from .scenarios import catalog, run_trials
from .store import ProvenanceStore
from .tag import TagState, tag_read
from .validation import validate_product

EXIT_OK, EXIT_MISSED, EXIT_USAGE, EXIT_INVARIANT = 0, 1, 2, 3
SEED_ENV = "DNAS_SEED"
DEFAULT_Q = (0.1, 0.2, 0.3, 0.4, 0.45)
DEFAULT_Z = (0, 1, 2, 4, 6)


class UsageError(DnasError):
    pass


def _print_json(obj: Any) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- settings ----------------------------------------------------------------------------------

def _file_config(args: argparse.Namespace) -> dict[str, Any]:
    path = getattr(args, "config", None)
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return doc


def resolve_seed(args: argparse.Namespace) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    cfg = _file_config(args)
    if "seed" in cfg:
        return int(cfg["seed"])
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"${SEED_ENV} must be an integer, got {env!r}") from None
    return 0


def resolve_sim_config(args: argparse.Namespace) -> SimConfig:
    known = {f.name for f in dataclasses.fields(SimConfig)}
    cfg = {k: v for k, v in _file_config(args).items() if k in known}
    if "entities" in cfg:
        cfg["entities"] = tuple(tuple(e) for e in cfg["entities"])
    cfg["seed"] = resolve_seed(args)
    if getattr(args, "trials", None) is not None:
        cfg["trials"] = args.trials
    try:
        return SimConfig(**cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad simulation config: {exc}") from None


def _out_dir(args: argparse.Namespace) -> Path | None:
    out = getattr(args, "out", None) or _file_config(args).get("out")
    if not out:
        return None
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _chain_path(args: argparse.Namespace) -> Path:
    if getattr(args, "chain", None):
        return Path(args.chain)
    if getattr(args, "run", None):
        return Path(args.run) / "chain.jsonl"
    raise UsageError("need --chain FILE or --run DIR")


def _load_chain(args: argparse.Namespace) -> Chain:
    path = _chain_path(args)
    if not path.exists():
        raise NotFound(f"chain dump {path} not found")
    return read_chain(path)


def _load_store(path: Path, node: str = "") -> ProvenanceStore:
    if not path.exists():
        raise NotFound(f"store {path} not found")
    text = path.read_text()
    if path.suffix == ".jsonl" or not text.strip():
        return ProvenanceStore.load(path, node)
    return ProvenanceStore.from_document(json.loads(text), node)


# -- run ------------------------------------------------------------------------------------------

def cmd_run(args: argparse.Namespace) -> int:
    config = resolve_sim_config(args)
    report, runner = run_trials(config, args.scenario)
    out = _out_dir(args)
    if out is not None:
        (out / "report.json").write_bytes(report.to_bytes())
        (out / "summary.txt").write_text(report.summary())
        sim = runner.sim
        (out / "chain.jsonl").write_text(dump_chain(sim.chain))
        (out / "receipts.jsonl").write_text("".join(
            json.dumps(r.to_json(), sort_keys=True, separators=(",", ":")) + "\n" for r in sim.receipts()))
        stores = out / "stores"
        stores.mkdir(exist_ok=True)
        for name in sorted(sim.entities):
            doc = sim.entities[name].store.dump()
            (stores / f"{name}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        tags = out / "tags"
        tags.mkdir(exist_ok=True)
        for handle in sorted(runner.tags):
            (tags / f"{handle}.json").write_text(json.dumps(runner.tags[handle].to_json(), indent=2,
                                                            sort_keys=True) + "\n")
    sys.stdout.write(report.summary())
    return EXIT_OK if report.passed else EXIT_MISSED


# -- validate -------------------------------------------------------------------------------------

def cmd_validate(args: argparse.Namespace) -> int:
    chain = _load_chain(args)
    state, _ = state_from_chain(chain)
    tag_path = Path(args.tag)
    if not tag_path.exists():
        raise NotFound(f"tag fixture {tag_path} not found")
    try:
        tag = TagState.from_json(json.loads(tag_path.read_text()))
    except (KeyError, ValueError) as exc:
        raise UsageError(f"malformed tag fixture {tag_path}: {exc}") from None
    store = _load_store(Path(args.store), args.node) if args.store else None
    read = None if tag.disabled else tag_read(tag)
    verdict = validate_product(read, args.pid, state, store, node=args.node, time=chain.tip_header.timestamp,
                               step="cli")
    if args.update_tag:
        tag_path.write_text(json.dumps(tag.to_json(), indent=2, sort_keys=True) + "\n")
    _print_json(verdict.to_json())
    if args.expect and verdict.outcome.value != args.expect:
        return EXIT_MISSED
    return EXIT_OK


# -- explore --------------------------------------------------------------------------------------

def cmd_explore(args: argparse.Namespace) -> int:
    chain = _load_chain(args)
    _, receipts = state_from_chain(chain)
    if args.height is not None:
        if not 0 <= args.height <= chain.height:
            raise NotFound(f"no block at height {args.height} (tip {chain.height})")
        block = chain.blocks[args.height]
        view = block.to_json()
        view["tx_hashes"] = [d.hex() for d in block.tx_digests()]
        _print_json(view)
        return EXIT_OK
    if args.tx is not None:
        want = args.tx.lower().removeprefix("0x")
        for block in chain.blocks:
            for i, tx in enumerate(block.body):
                if tx.digest().hex() == want:
                    receipt = next(r for r in receipts if r.tx_hash == tx.digest())
                    proof = merkle_prove(i, block)
                    view = {"height": block.height, "index": i, "tx": tx.to_json(),
                            "params": tx.decoded_params(), "receipt": receipt.to_json(),
                            "merkle_proof": {"path": [[s.hex(), side.value] for s, side in proof.path],
                                             "root": proof.root.hex(), "verified": verify_proof(proof)}}
                    _print_json(view)
                    return EXIT_OK
        raise NotFound(f"no transaction {args.tx}")
    events = [e.to_json() for r in receipts for e in r.events if e.pid == args.pid]
    if not events:
        raise NotFound(f"no events for pid {args.pid}")
    _print_json({"pid": args.pid, "events": events})
    return EXIT_OK


# -- keys -----------------------------------------------------------------------------------------

def _keystore_path(args: argparse.Namespace, entity: str) -> Path:
    return Path(args.keystore) / f"{entity}.json"


def _passphrase(args: argparse.Namespace) -> str | None:
    if not args.passphrase_env:
        return None
    value = os.environ.get(args.passphrase_env)
    if value is None:
        raise UsageError(f"${args.passphrase_env} is not set")
    return value


def _load_keys(args: argparse.Namespace, entity: str) -> list[KeyPair]:
    path = _keystore_path(args, entity)
    if not path.exists():
        raise NotFound(f"no keystore for {entity} at {path}")
    try:
        return load_keystore(path, _passphrase(args))
    except InvalidTag:
        raise UsageError(f"wrong passphrase for {path}") from None


def _key_view(key: KeyPair) -> dict[str, Any]:
    return {"address": key.address.hex(), "public_key": key.public_key.hex(), "status": key.status.value,
            "created_at": key.created_at}


def cmd_keys(args: argparse.Namespace) -> int:
    seed = resolve_seed(args)
    Path(args.keystore).mkdir(parents=True, exist_ok=True)
    path = _keystore_path(args, args.entity)
    if args.action == "gen":
        if path.exists():
            raise UsageError(f"keystore {path} already exists; use 'keys rotate'")
        key = KeyPair.from_private(args.entity, derive_private(seed, args.entity, 0), args.time)
        save_keystore(path, [key], _passphrase(args), admin=args.admin)
        _print_json({"entity": args.entity, "admin": args.admin, **_key_view(key)})
        return EXIT_OK
    keys = _load_keys(args, args.entity)
    if args.action == "status":
        active = [k for k in keys if k.status is KeyStatus.ACTIVE]
        _print_json({"entity": args.entity, "admin": keystore_is_admin(path), "keys": [_key_view(k) for k in keys],
                     "current_address": keys[-1].address.hex(),
                     "active_address": active[-1].address.hex() if active else None})
        return EXIT_OK
    if args.action == "compromise":
        keys[-1].status = KeyStatus.COMPROMISED
        save_keystore(path, keys, _passphrase(args), admin=keystore_is_admin(path))
        _print_json({"entity": args.entity, **_key_view(keys[-1])})
        return EXIT_OK
    # rotate
    if not args.by:
        raise UsageError("keys rotate needs --by ADMIN")
    ring = Keyring(seed)
    ring.keys[args.entity] = keys
    admin_path = _keystore_path(args, args.by)
    ring.keys[args.by] = _load_keys(args, args.by)
    if keystore_is_admin(admin_path):
        ring.admins.add(args.by)
    authorization = ring.authorize_rotation(args.by, args.entity, args.height)
    old = keys[-1]
    new = ring.rotate(args.entity, authorization, args.height)
    save_keystore(path, ring.keys[args.entity], _passphrase(args), admin=keystore_is_admin(path))
    record = {"entity": args.entity, "old_address": old.address.hex(), "new_address": new.address.hex(),
              "height": args.height, "admin": args.by, "admin_signature": authorization.signature.hex()}
    with (Path(args.keystore) / "rotations.jsonl").open("a") as fh:
        fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
    _print_json(record)
    return EXIT_OK


# -- analyze-doublespend ----------------------------------------------------------------------------

def cmd_doublespend(args: argparse.Namespace) -> int:
    qs = args.q or list(DEFAULT_Q)
    zs = args.z or list(DEFAULT_Z)
    rows = probability_table(qs, zs, Mode(args.mode), trials=args.trials, seed=resolve_seed(args))
    sys.stdout.write(format_table(rows))
    if args.csv:
        Path(args.csv).write_text(table_csv(rows))
    out = _out_dir(args)
    if out is not None:
        (out / "doublespend.csv").write_text(table_csv(rows))
    return EXIT_OK


# -- dump -------------------------------------------------------------------------------------------

def cmd_dump(args: argparse.Namespace) -> int:
    if args.store:
        store = _load_store(Path(args.store))
        if args.pid is not None and args.pid not in store.records:
            raise NotFound(f"pid {args.pid} not in store")
        _print_json(store.dump(args.pid))
        return EXIT_OK
    chain = _load_chain(args)
    if args.pid is not None:
        raise UsageError("--pid applies to --store dumps; use 'explore --pid' for chains")
    sys.stdout.write("".join(line + "\n" for line in chain_lines(chain)))
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------------------

def _globals(default: Any) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=default, help=f"RNG seed (default ${SEED_ENV} or 0)")
    p.add_argument("--config", default=default, help="JSON settings file")
    p.add_argument("--out", default=default, help="output directory")
    return p


def build_parser() -> argparse.ArgumentParser:
    # globals are accepted before or after the subcommand; the subcommand copy wins
    parser = argparse.ArgumentParser(prog="dnas", parents=[_globals(None)],
                                     description="Supply-chain provenance ledger simulator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _globals(argparse.SUPPRESS)

    run = sub.add_parser("run", parents=[common], help="run a scenario and write its report")
    run.add_argument("--scenario", required=True,
                     help=f"catalog id ({', '.join(sorted(catalog()))}) or path to a scenario JSON file")
    run.add_argument("--trials", type=int, default=None)
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", parents=[common], help="validate one tag fixture against a chain")
    val.add_argument("--tag", required=True, help="tag state JSON")
    val.add_argument("--pid", required=True)
    val.add_argument("--chain", help="chain dump (jsonl)")
    val.add_argument("--run", help="run directory written by 'run --out'")
    val.add_argument("--store", help="validating node's store (.json dump or .jsonl log)")
    val.add_argument("--node", default="cli")
    val.add_argument("--expect", help="expected outcome; mismatch exits 1")
    val.add_argument("--update-tag", action="store_true", help="write the bumped read counter back")
    val.set_defaults(func=cmd_validate)

    exp = sub.add_parser("explore", parents=[common], help="look up a block, transaction or product")
    exp.add_argument("--chain")
    exp.add_argument("--run")
    what = exp.add_mutually_exclusive_group(required=True)
    what.add_argument("--height", type=int)
    what.add_argument("--tx")
    what.add_argument("--pid")
    exp.set_defaults(func=cmd_explore)

    keys = sub.add_parser("keys", parents=[common], help="manage per-entity keystores")
    keys.add_argument("action", choices=["gen", "rotate", "status", "compromise"])
    keys.add_argument("entity")
    keys.add_argument("--keystore", default="keystore", help="keystore directory")
    keys.add_argument("--admin", action="store_true", help="mark the generated key as an administrator")
    keys.add_argument("--by", help="administrator co-signing a rotation")
    keys.add_argument("--height", type=int, default=0, help="activation height for a rotation")
    keys.add_argument("--time", type=int, default=0, help="simulated creation time for gen")
    keys.add_argument("--passphrase-env", help="environment variable holding the keystore passphrase")
    keys.set_defaults(func=cmd_keys)

    ds = sub.add_parser("analyze-doublespend", parents=[common], help="double-spend success probabilities")
    ds.add_argument("--q", type=float, nargs="+", help=f"attacker fractions (default {list(DEFAULT_Q)})")
    ds.add_argument("--z", type=int, nargs="+", help=f"confirmations (default {list(DEFAULT_Z)})")
    ds.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.CLOSED_FORM.value)
    ds.add_argument("--trials", type=int, default=1_000_000)
    ds.add_argument("--csv", help="also write the table as CSV")
    ds.set_defaults(func=cmd_doublespend)

    dump = sub.add_parser("dump", parents=[common], help="canonical JSON of a store or chain")
    dump.add_argument("--store")
    dump.add_argument("--chain")
    dump.add_argument("--run")
    dump.add_argument("--pid")
    dump.set_defaults(func=cmd_dump)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"dnas: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (DnasError, OSError, ValueError, LookupError) as exc:
        print(f"dnas: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:  # a bug, not bad input
        traceback.print_exc()
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
