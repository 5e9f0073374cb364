import json

import pytest

from provgate.cli import EXIT_DENY, EXIT_ERROR, EXIT_OK, main

CLOCK = "2024-03-01T12:00:00Z"


@pytest.fixture
def cli(tmp_path, capsys):
    data = tmp_path / "data"

    def run(*argv):
        code = main(["--data-dir", str(data), "--fixed-clock", CLOCK, *argv])
        out = capsys.readouterr()
        return code, out.out, out.err

    assert run("actor", "add", "owner", "Olivia", "Owner")[0] == EXIT_OK
    assert run("actor", "add", "a", "Alice", "AuthorizedUser")[0] == EXIT_OK
    assert run("context", "add", "c1", "office", "--param", "system.machineid=192.168.2.35")[0] == EXIT_OK
    code, _, err = run("preference", "add", "p1", "--target", "Actor.ID",
                       "--condition", 'Actor.role == "AuthorizedUser" && system.machineid == "192.168.2.35"',
                       "--effect", "Permit", "--obligation", "10 days")
    assert code == EXIT_OK, err
    payload = tmp_path / "doc.txt"
    payload.write_bytes(b"hello")
    assert run("upload", "r1", str(payload), "--owner", "owner")[0] == EXIT_OK
    return run


def test_access_permit_writes_out(cli, tmp_path):
    out_file = tmp_path / "out.bin"
    code, out, _ = cli("access", "r1", "--actor", "a", "--role", "AuthorizedUser", "--context", "c1",
                       "--action", "read", "--out", str(out_file))
    assert code == EXIT_OK
    assert json.loads(out)["outcome"] == "FullPermit"
    assert out_file.read_bytes() == b"hello"


def test_access_deny_exit_code(cli):
    code, out, _ = cli("access", "r1", "--actor", "a", "--role", "Owner", "--context", "c1", "--action", "read")
    assert code == EXIT_DENY
    assert json.loads(out)["outcome"] == "Deny"


def test_attribute_override(cli):
    code, _, _ = cli("access", "r1", "--actor", "a", "--role", "AuthorizedUser", "--context", "c1",
                     "--action", "read", "--attr", "system.machineid=10.0.0.1")
    assert code == EXIT_DENY


def test_tamper_verify_regen_audit(cli, tmp_path):
    evil = tmp_path / "evil.txt"
    evil.write_bytes(b"evil")
    assert cli("verify", "r1")[:2] == (EXIT_OK, "intact\n")
    code, _, _ = cli("access", "r1", "--actor", "a", "--role", "AuthorizedUser", "--context", "c1",
                     "--action", "write", "--payload", str(evil))
    assert code == EXIT_OK
    assert cli("verify", "r1")[:2] == (EXIT_DENY, "tampered(payload-digest-mismatch)\n")
    assert cli("regen", "r1")[:2] == (EXIT_OK, "2\n")
    assert cli("verify", "r1")[0] == EXIT_OK
    code, out, _ = cli("audit", "r1")
    assert code == EXIT_OK
    lines = out.splitlines()
    assert lines[0].startswith('{"kind":"operation"')
    assert "accountable user: a (Alice)" in out


def test_errors(cli, tmp_path):
    assert cli("verify", "nope")[0] == EXIT_ERROR
    assert cli("actor", "add", "a", "Dup", "X")[0] == EXIT_ERROR
    assert cli("context", "add", "c2", "s", "--param", "novalue")[0] == EXIT_ERROR
    assert cli("upload", "r2", str(tmp_path / "missing"), "--owner", "owner")[0] == EXIT_ERROR
    assert cli("bogus-verb")[0] == EXIT_ERROR
    code, _, err = cli("preference", "add", "p9", "--target", "Actor.ID", "--condition", "Actor.role ==",
                       "--effect", "Permit")
    assert code == EXIT_ERROR
    assert err.startswith("error:")


def test_help_exits_zero(capsys):
    assert main(["--help"]) == EXIT_OK
