from __future__ import annotations

import itertools

import pytest

from conftest import NOW, make_network, make_org
from hearthgate import ledger
from hearthgate.ledger import (
    BadSignature,
    ChannelName,
    InvalidPayload,
    OrgRole,
    PolicyDenied,
    UnknownIdentity,
    make_transaction,
)
from hearthgate.payloads import DataEntry, DeviceRecord, DeviceStatus, RiskAlert
from hearthgate.runtime import seeded_rng


def sample_record(rng, status=DeviceStatus.ACTIVE, ts=NOW) -> DeviceRecord:
    return DeviceRecord(
        device_token=rng.bytes(32),
        server_device_public=rng.bytes(64),
        device_public=rng.bytes(64),
        auth_public=rng.bytes(64),
        device_uid=rng.bytes(16),
        status=status,
        timestamp=ts,
    )


def sample_entry(rng, uid=None, value=21.5, ts=NOW) -> DataEntry:
    return DataEntry(
        device_uid=uid if uid is not None else rng.bytes(16),
        metric="temperature_c",
        value=value,
        unit="C",
        timestamp=ts,
        device_public_ref=rng.bytes(32),
    )


def sample_alert(rng, uid=None) -> RiskAlert:
    return RiskAlert(
        device_uid=uid if uid is not None else rng.bytes(16),
        metric="temperature_c",
        observed=80.0,
        threshold=60.0,
        severity="high",
        notified_roles=("emergency_service",),
        entry_height=1,
        entry_index=0,
    )


def test_server_submits_device_record():
    rng = seeded_rng(1)
    net, orgs = make_network(rng)
    tx = make_transaction(ChannelName.IDENTITY, sample_record(rng),
                          orgs["server-org"], NOW)
    seq = net.submit(tx, NOW)
    net.settle()
    receipt = net.receipt(seq)
    assert receipt is not None
    assert receipt.channel is ChannelName.IDENTITY
    assert receipt.height == 1
    assert net.verify_chain(ChannelName.IDENTITY)


def test_manufacturer_cannot_write_identity():
    rng = seeded_rng(2)
    net, orgs = make_network(rng)
    tx = make_transaction(ChannelName.IDENTITY, sample_record(rng),
                          orgs["acme-devices"], NOW)
    with pytest.raises(PolicyDenied):
        net.submit(tx, NOW)


def test_wrong_payload_type_for_channel():
    rng = seeded_rng(3)
    net, orgs = make_network(rng)
    tx = make_transaction(ChannelName.IDENTITY, sample_entry(rng),
                          orgs["server-org"], NOW)
    with pytest.raises(InvalidPayload):
        net.submit(tx, NOW)


def test_unknown_identity_rejected():
    rng = seeded_rng(4)
    net, _ = make_network(rng)
    ghost = make_org("ghost", OrgRole.SERVER, rng)
    tx = make_transaction(ChannelName.DATA, sample_entry(rng), ghost, NOW)
    with pytest.raises(UnknownIdentity):
        net.submit(tx, NOW)


def test_bad_signature_rejected():
    rng = seeded_rng(5)
    net, orgs = make_network(rng)
    tx = make_transaction(ChannelName.DATA, sample_entry(rng),
                          orgs["server-org"], NOW)
    forged = ledger.LedgerTransaction(tx.channel, tx.payload, tx.submitter,
                                      bytes(64), tx.timestamp)
    with pytest.raises(BadSignature):
        net.submit(forged, NOW)


def test_malformed_payload_rejected():
    rng = seeded_rng(6)
    net, orgs = make_network(rng)
    bad = DataEntry(rng.bytes(16), "", 1.0, "C", NOW, rng.bytes(32))
    tx = make_transaction(ChannelName.DATA, bad, orgs["server-org"], NOW)
    with pytest.raises(InvalidPayload):
        net.submit(tx, NOW)


# ---------------------------------------------------------------------------
# Access matrix
# ---------------------------------------------------------------------------

ORG_BY_ROLE = {
    OrgRole.SERVER: "server-org",
    OrgRole.RISK_ENGINE: "risk-engine",
    OrgRole.MANUFACTURER: "acme-devices",
    OrgRole.INSURER: "homesure",
    OrgRole.EMERGENCY_SERVICE: "fire-dept",
}

EXPECTED_READ = {
    (ChannelName.IDENTITY, OrgRole.SERVER): "all",
    (ChannelName.DATA, OrgRole.SERVER): "all",
    (ChannelName.DATA, OrgRole.INSURER): "all",
    (ChannelName.DATA, OrgRole.MANUFACTURER): "own",
    (ChannelName.RISK_MANAGEMENT, OrgRole.SERVER): "all",
    (ChannelName.RISK_MANAGEMENT, OrgRole.EMERGENCY_SERVICE): "all",
    (ChannelName.RISK_MANAGEMENT, OrgRole.INSURER): "all",
}

EXPECTED_WRITE = {
    (ChannelName.IDENTITY, OrgRole.SERVER),
    (ChannelName.DATA, OrgRole.SERVER),
    (ChannelName.RISK_MANAGEMENT, OrgRole.RISK_ENGINE),
}

PAYLOAD_FOR = {
    ChannelName.IDENTITY: sample_record,
    ChannelName.DATA: sample_entry,
    ChannelName.RISK_MANAGEMENT: sample_alert,
}


def test_full_access_matrix_sweep():
    rng = seeded_rng(7)
    net, orgs = make_network(rng)
    for channel, role in itertools.product(ChannelName, OrgRole):
        org = orgs[ORG_BY_ROLE[role]]
        tx = make_transaction(channel, PAYLOAD_FOR[channel](rng), org, NOW)
        if (channel, role) in EXPECTED_WRITE:
            net.submit(tx, NOW)
        else:
            with pytest.raises(PolicyDenied):
                net.submit(tx, NOW)
        expected_read = EXPECTED_READ.get((channel, role), "none")
        if expected_read == "none":
            with pytest.raises(PolicyDenied):
                net.query(channel, None, org.org_id)
            with pytest.raises(PolicyDenied):
                net.subscribe(channel, None, org.org_id)
        else:
            net.query(channel, None, org.org_id)
            net.subscribe(channel, None, org.org_id)


def test_emergency_service_cannot_read_identity():
    rng = seeded_rng(8)
    net, orgs = make_network(rng)
    with pytest.raises(PolicyDenied):
        net.query(ChannelName.IDENTITY, None, "fire-dept")


def test_manufacturer_reads_only_own_devices():
    rng = seeded_rng(9)
    net, orgs = make_network(rng)
    own_uid = rng.bytes(16)
    other_uid = rng.bytes(16)
    net.register_device_origin(own_uid.hex(), "acme-devices")
    for uid in (own_uid, other_uid):
        tx = make_transaction(ChannelName.DATA, sample_entry(rng, uid=uid),
                              orgs["server-org"], NOW)
        net.submit(tx, NOW)
    net.settle()
    mine = net.query(ChannelName.DATA, None, "acme-devices")
    assert [e.device_uid for e in mine] == [own_uid]
    everything = net.query(ChannelName.DATA, None, "homesure")
    assert {e.device_uid for e in everything} == {own_uid, other_uid}


# ---------------------------------------------------------------------------
# Ordering and block cutting
# ---------------------------------------------------------------------------

def test_block_cut_at_max_txs():
    rng = seeded_rng(10)
    net, orgs = make_network(rng, max_block_txs=2, block_interval=5.0)
    for _ in range(3):
        tx = make_transaction(ChannelName.DATA, sample_entry(rng),
                              orgs["server-org"], NOW)
        net.submit(tx, NOW)
    net.settle()
    sizes = [len(b.txs) for b in net.chains[ChannelName.DATA]]
    assert sizes == [0, 2, 1]


def test_block_cut_at_interval():
    rng = seeded_rng(11)
    net, orgs = make_network(rng, max_block_txs=50, block_interval=0.1, mu=200.0)
    tx = make_transaction(ChannelName.DATA, sample_entry(rng),
                          orgs["server-org"], NOW)
    seq = net.submit(tx, NOW)
    assert net.receipt(seq) is None                  # nothing before the deadline
    net.run_until(NOW + 0.05)
    assert net.receipt(seq) is None
    net.run_until(NOW + 1.0)
    receipt = net.receipt(seq)
    assert receipt is not None
    assert len(net.chains[ChannelName.DATA][receipt.height].txs) == 1
    # Cut at service end + interval.
    assert receipt.commit_time == pytest.approx(NOW + 1 / 200.0 + 0.1)


def test_bulk_commit_thousand_txs():
    rng = seeded_rng(12)
    net, orgs = make_network(rng)
    t = NOW
    for i in range(1000):
        tx = make_transaction(ChannelName.DATA, sample_entry(rng, ts=t),
                              orgs["server-org"], t)
        net.submit(tx, t)
        t += 0.001
    net.settle()
    chain = net.chains[ChannelName.DATA]
    assert [b.height for b in chain] == list(range(len(chain)))
    assert sum(len(b.txs) for b in chain) == 1000
    ok, height, reason = net.verify_chain_detail(ChannelName.DATA)
    assert ok, (height, reason)


def test_commit_receipts_monotone_in_time():
    rng = seeded_rng(13)
    net, orgs = make_network(rng)
    seqs = []
    for i in range(20):
        tx = make_transaction(ChannelName.DATA, sample_entry(rng),
                              orgs["server-org"], NOW + i * 0.01)
        seqs.append(net.submit(tx, NOW + i * 0.01))
    net.settle()
    times = [net.receipt(s).commit_time for s in seqs]
    assert times == sorted(times)


def test_append_only_history_preserved():
    rng = seeded_rng(14)
    net, orgs = make_network(rng)
    tx = make_transaction(ChannelName.DATA, sample_entry(rng),
                          orgs["server-org"], NOW)
    net.submit(tx, NOW)
    net.settle()
    frozen = [b.canonical_bytes() for b in net.chains[ChannelName.DATA]]
    for i in range(5):
        tx = make_transaction(ChannelName.DATA, sample_entry(rng),
                              orgs["server-org"], NOW + 1 + i)
        net.submit(tx, NOW + 1 + i)
    net.settle()
    later = [b.canonical_bytes() for b in net.chains[ChannelName.DATA]]
    assert later[:len(frozen)] == frozen


# ---------------------------------------------------------------------------
# Tamper evidence
# ---------------------------------------------------------------------------

def test_fresh_chain_verifies():
    rng = seeded_rng(15)
    net, orgs = make_network(rng)
    assert all(net.verify_chain(c) for c in ChannelName)  # genesis only
    tx = make_transaction(ChannelName.DATA, sample_entry(rng),
                          orgs["server-org"], NOW)
    net.submit(tx, NOW)
    net.settle()
    assert net.verify_chain(ChannelName.DATA)


def test_single_byte_mutation_sweep_detected():
    rng = seeded_rng(16)
    net, orgs = make_network(rng, max_block_txs=1)
    for i in range(3):
        tx = make_transaction(ChannelName.DATA, sample_entry(rng),
                              orgs["server-org"], NOW + i)
        net.submit(tx, NOW + i)
    net.settle()
    blocks = net.chains[ChannelName.DATA]
    for height, block in enumerate(blocks):
        raw = block.canonical_bytes()
        for i in range(len(raw)):
            mutated = bytearray(raw)
            mutated[i] ^= 0x01
            try:
                candidate = ledger.decode_block(bytes(mutated))
            except Exception:
                continue  # unparseable counts as detected
            patched = blocks[:height] + [candidate] + blocks[height + 1:]
            ok, _, _ = ledger.verify_blocks(patched, ChannelName.DATA,
                                            net.membership)
            assert not ok, f"block {height} byte {i} mutation missed"


# ---------------------------------------------------------------------------
# Subscriptions
# ---------------------------------------------------------------------------

def test_subscription_exactly_once_in_commit_order():
    rng = seeded_rng(17)
    net, orgs = make_network(rng)
    sub_a = net.subscribe(ChannelName.DATA, None, "homesure")
    sub_b = net.subscribe(ChannelName.DATA, None, "server-org")
    uids = []
    for i in range(4):
        entry = sample_entry(rng)
        uids.append(entry.device_uid)
        tx = make_transaction(ChannelName.DATA, entry, orgs["server-org"],
                              NOW + i * 0.01)
        net.submit(tx, NOW + i * 0.01)
    net.settle()
    got_a = sub_a.poll()
    got_b = sub_b.poll()
    assert [p.device_uid for _, p in got_a] == uids
    assert [p.device_uid for _, p in got_b] == uids
    assert sub_a.poll() == []  # drained, nothing delivered twice


def test_subscription_filter_and_silence():
    rng = seeded_rng(18)
    net, orgs = make_network(rng)
    hot = net.subscribe(ChannelName.DATA, lambda p: p.value > 50.0, "homesure")
    tx = make_transaction(ChannelName.DATA, sample_entry(rng, value=20.0),
                          orgs["server-org"], NOW)
    net.submit(tx, NOW)
    net.settle()
    assert hot.poll() == []


# ---------------------------------------------------------------------------
# Snapshots
# ---------------------------------------------------------------------------

def test_snapshot_round_trip(tmp_path):
    rng = seeded_rng(19)
    net, orgs = make_network(rng)
    for i in range(5):
        tx = make_transaction(ChannelName.DATA, sample_entry(rng),
                              orgs["server-org"], NOW + i)
        net.submit(tx, NOW + i)
    net.settle()
    path = tmp_path / "ledger.snapshot"
    ledger.write_snapshot(net, str(path))
    ok, detail = ledger.verify_snapshot(str(path))
    assert ok, detail
    membership, chains = ledger.load_snapshot(str(path))
    assert [b.block_hash for b in chains[ChannelName.DATA]] == \
        [b.block_hash for b in net.chains[ChannelName.DATA]]


def test_snapshot_corruption_detected(tmp_path):
    rng = seeded_rng(20)
    net, orgs = make_network(rng)
    tx = make_transaction(ChannelName.DATA, sample_entry(rng),
                          orgs["server-org"], NOW)
    net.submit(tx, NOW)
    net.settle()
    path = tmp_path / "ledger.snapshot"
    ledger.write_snapshot(net, str(path))
    lines = path.read_text().splitlines()
    target = next(i for i, ln in enumerate(lines)
                  if ln.startswith("B data 1 "))
    prefix, blob = lines[target].rsplit(" ", 1)
    import base64
    raw = bytearray(base64.b64decode(blob))
    raw[len(raw) // 2] ^= 0xFF
    lines[target] = prefix + " " + base64.b64encode(bytes(raw)).decode()
    path.write_text("\n".join(lines) + "\n")
    ok, detail = ledger.verify_snapshot(str(path))
    assert not ok
    assert "data" in detail
