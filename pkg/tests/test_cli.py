import json

import pytest

from replaykit import cli


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def recorded(tmp_path, capsys):
    store = str(tmp_path / "st")
    code, out, err = run(capsys, "run", "--scenario", "navigate", "--store", store, "--collection", "nav")
    assert code == 0, err
    session = out.split()[0]
    final = [line for line in err.splitlines() if line.startswith("final base")][0]
    return store, session, final


def test_run_prints_session(recorded):
    store, session, final = recorded
    assert len(session) == 36
    assert "x=" in final


def test_sessions_lists_run(recorded, capsys):
    store, session, _ = recorded
    code, out, _ = run(capsys, "sessions", "--store", store)
    assert code == 0
    (line,) = out.splitlines()
    assert line.startswith(session) and "kitting/navigate" in line and "/cmd_vel=" in line and "[nav]" in line


def test_sessions_doc_output(recorded, capsys):
    store, session, _ = recorded
    code, out, _ = run(capsys, "sessions", "--store", store, "--output", "doc")
    doc = json.loads(out)
    assert doc["_type"] == "SessionSummary" and doc["session_id"] == session
    assert doc["status"] == "closed"


def test_drive_sim_reproduces_final_state(recorded, capsys):
    store, session, final = recorded
    code, out, _ = run(capsys, "replay", "--store", store, "--session", session, "--topics", "/cmd_vel",
                       "--scenario", "navigate", "--drive-sim")
    assert code == 0
    assert final in out


def test_replay_topic_filter_and_rate(recorded, capsys):
    store, session, _ = recorded
    code, out, _ = run(capsys, "replay", "--store", store, "--session", session,
                       "--topics", "/robotsound", "--rate", "50", "--output", "doc")
    assert code == 0
    doc = json.loads(out)
    assert set(doc["counts"]) == {"/robotsound"} and doc["rate"] == 50.0


def test_replay_time_window(recorded, capsys):
    store, session, _ = recorded
    code, out, _ = run(capsys, "replay", "--store", store, "--session", session,
                       "--from", "0", "--to", "1", "--output", "doc")
    assert code == 0
    assert json.loads(out)["published"] >= 0


def test_env_var_overrides_flag(recorded, capsys, monkeypatch, tmp_path):
    store, session, _ = recorded
    monkeypatch.setenv(cli.STORE_ENV, store)
    code, out, _ = run(capsys, "sessions", "--store", str(tmp_path / "elsewhere"))
    assert code == 0 and session in out


def test_unknown_session_exit_2(recorded, capsys):
    store, _, _ = recorded
    code, _, err = run(capsys, "replay", "--store", store, "--session", "nope")
    assert code == 2 and "unknown session" in err


def test_missing_store_exit_2(tmp_path, capsys):
    code, _, err = run(capsys, "sessions", "--store", str(tmp_path / "none"))
    assert code == 2


def test_bad_rate_exit_2(recorded, capsys):
    store, session, _ = recorded
    code, _, _ = run(capsys, "replay", "--store", store, "--session", session, "--rate", "0")
    assert code == 2


def test_corrupt_collection_exit_2_with_line(recorded, capsys, tmp_path):
    store, session, _ = recorded
    path = tmp_path / "st" / "nav.col"
    lines = path.read_bytes().split(b"\n")
    lines[4] = b"not json"
    path.write_bytes(b"\n".join(lines))
    code, _, err = run(capsys, "replay", "--store", store, "--collection", "nav")
    assert code == 2 and "line 5" in err


def test_malformed_tree_exit_2(tmp_path, capsys):
    tree = tmp_path / "t.xml"
    tree.write_text("<Sequence>\n</Sequence>\n")
    code, _, err = run(capsys, "run", str(tree), "--store", str(tmp_path / "st"))
    assert code == 2 and "line 1" in err


def test_failing_tree_exit_1(tmp_path, capsys):
    tree = tmp_path / "t.xml"
    tree.write_text('<RecordScope label="f" topics="/robotsound"><Action name="AlwaysFailure"/></RecordScope>')
    code, out, _ = run(capsys, "run", str(tree), "--store", str(tmp_path / "st"), "--collection", "c")
    assert code == 1
    assert "f  0 messages" in out


def test_no_store_exit_2(capsys, monkeypatch):
    monkeypatch.delenv(cli.STORE_ENV, raising=False)
    code, _, err = run(capsys, "sessions")
    assert code == 2 and cli.STORE_ENV in err


def test_usage_error_exit_2(capsys):
    assert run(capsys, "frobnicate")[0] == 2


def test_empty_store_lists_nothing(tmp_path, capsys):
    (tmp_path / "st").mkdir()
    code, out, _ = run(capsys, "sessions", "--store", str(tmp_path / "st"))
    assert code == 0 and out == ""


def test_sessions_match_run_output(tmp_path, capsys):
    store = str(tmp_path / "st")
    printed = []
    for name in ("pick", "place"):
        code, out, _ = run(capsys, "run", "--scenario", name, "--store", store)
        assert code == 0
        printed += [line.split()[0] for line in out.splitlines()]
    _, out, _ = run(capsys, "sessions", "--store", store)
    assert sorted(line.split()[0] for line in out.splitlines()) == sorted(printed)


def test_replay_whole_collection(recorded, capsys, tmp_path):
    store, session, _ = recorded
    (summary_line,) = run(capsys, "sessions", "--store", store)[1].splitlines()
    total = sum(int(kv.split("=")[1]) for kv in summary_line.split()[3].split(","))
    code, out, _ = run(capsys, "replay", "--store", store, "--rate", "1000", "--output", "doc")
    assert code == 0 and json.loads(out)["published"] == total


def test_replay_window_excluding_all(recorded, capsys):
    store, _, _ = recorded
    code, out, _ = run(capsys, "replay", "--store", store, "--from", str(10**15), "--to", str(10**15 + 1),
                       "--output", "doc")
    assert code == 0 and json.loads(out)["published"] == 0


def test_drive_sim_unfiltered_reproduces_final_state(recorded, capsys):
    store, session, final = recorded
    code, out, _ = run(capsys, "replay", "--store", store, "--session", session, "--scenario", "navigate",
                       "--drive-sim")
    assert code == 0 and final in out
