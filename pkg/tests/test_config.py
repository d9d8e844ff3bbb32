from __future__ import annotations

import pytest

from hearthgate.config import Config, ConfigError, load_config
from hearthgate.ledger import READ_ALL, ChannelName, OrgRole


def test_defaults():
    cfg = load_config(None, env={})
    assert cfg.seed == 7
    assert cfg.totp_step == 30
    assert cfg.mu == 200.0
    assert cfg.kem == "x25519"
    assert cfg.access_overrides == {}


def test_file_values(tmp_path):
    path = tmp_path / "hg.conf"
    path.write_text(
        "[core]\nseed = 42\ntotp_step = 15\nkem = ml-kem-512\n"
        "[ledger]\nmu = 150\nmax_block_txs = 10\nblock_interval = 0.05\n"
        "[demo]\nsnapshot = out.snapshot\nprovisioning_delay = 2.0\nretries = 0\n"
    )
    cfg = load_config(str(path), env={})
    assert cfg.seed == 42
    assert cfg.totp_step == 15
    assert cfg.kem == "ml-kem-512"
    assert cfg.mu == 150.0
    assert cfg.max_block_txs == 10
    assert cfg.snapshot == "out.snapshot"
    assert cfg.provisioning_delay == 2.0
    assert cfg.retries == 0


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "hg.conf"
    path.write_text("[core]\nsped = 42\n")
    with pytest.raises(ConfigError, match="sped"):
        load_config(str(path), env={})


def test_unknown_section_rejected(tmp_path):
    path = tmp_path / "hg.conf"
    path.write_text("[exotic]\nx = 1\n")
    with pytest.raises(ConfigError, match="exotic"):
        load_config(str(path), env={})


def test_nonpositive_duration_rejected(tmp_path):
    path = tmp_path / "hg.conf"
    path.write_text("[core]\ntotp_step = 0\n")
    with pytest.raises(ConfigError, match="positive"):
        load_config(str(path), env={})


def test_bad_type_rejected(tmp_path):
    path = tmp_path / "hg.conf"
    path.write_text("[ledger]\nmu = fast\n")
    with pytest.raises(ConfigError, match="float"):
        load_config(str(path), env={})


def test_env_overrides_file(tmp_path):
    path = tmp_path / "hg.conf"
    path.write_text("[core]\nseed = 42\n")
    cfg = load_config(str(path), env={"HEARTHGATE_CORE_SEED": "9",
                                      "HEARTHGATE_LEDGER_MU": "120"})
    assert cfg.seed == 9
    assert cfg.mu == 120.0


def test_env_unknown_rejected():
    with pytest.raises(ConfigError):
        load_config(None, env={"HEARTHGATE_CORE_SPEED": "9"})


def test_env_multiword_key():
    cfg = load_config(None, env={"HEARTHGATE_LEDGER_MAX_BLOCK_TXS": "7",
                                 "HEARTHGATE_DEMO_PROVISIONING_DELAY": "1.5"})
    assert cfg.max_block_txs == 7
    assert cfg.provisioning_delay == 1.5


def test_access_overrides(tmp_path):
    path = tmp_path / "hg.conf"
    path.write_text("[access]\ndata.emergency_service = all\n"
                    "identity.insurer = all,write\n")
    cfg = load_config(str(path), env={})
    assert cfg.access_overrides[
        (ChannelName.DATA, OrgRole.EMERGENCY_SERVICE)] == \
        {"read": READ_ALL, "write": False}
    assert cfg.access_overrides[
        (ChannelName.IDENTITY, OrgRole.INSURER)] == \
        {"read": READ_ALL, "write": True}


def test_access_override_bad_role(tmp_path):
    path = tmp_path / "hg.conf"
    path.write_text("[access]\ndata.plumber = all\n")
    with pytest.raises(ConfigError):
        load_config(str(path), env={})


def test_unknown_kem_rejected():
    with pytest.raises(ConfigError, match="KEM"):
        load_config(None, env={"HEARTHGATE_CORE_KEM": "rot13"})


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/hg.conf", env={})
