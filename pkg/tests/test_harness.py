import json
import socket

import numpy as np
import pytest

from sscirl import cli, plant, sigproc, trainer
from sscirl.envproto import EnvServer, ProtocolError, RemoteEnv

SCN = plant.PlantScenario()


# ---------------------------------------------------------------------------
# CLI

def run_cli(argv):
    return cli.main(argv)


class TestTrainCommand:
    def test_writes_log_and_overrides_snapshot(self, tmp_path, capsys):
        out = tmp_path / "run"
        code = run_cli(["train", "--out", str(out), "--n_epoch", "10",
                        "--n_iter", "2", "--kp_max", "3.5"])
        assert code == 0
        lines = (out / "training_log.csv").read_text().splitlines()
        assert lines[0] == trainer.LOG_HEADER
        assert len(lines) == 11
        scen, cfg = trainer.load_config_snapshot(out / "config.cfg")
        assert cfg.kp_max == 3.5
        assert scen == SCN
        assert "trained 10 epochs" in capsys.readouterr().out
        assert (out / "best.ckpt").exists()
        assert (out / "last.ckpt").exists()

    def test_missing_config_exits_2(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            run_cli(["train", "--out", str(tmp_path / "r"),
                     "--config", str(tmp_path / "nope.cfg")])
        assert exc.value.code == cli.EXIT_BAD_CONFIG
        assert "config not found" in capsys.readouterr().err

    def test_bad_value_exits_2(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            run_cli(["train", "--out", str(tmp_path / "r"),
                     "--kp_min", "5.0", "--kp_max", "4.0"])
        assert exc.value.code == cli.EXIT_BAD_CONFIG
        assert "bad config" in capsys.readouterr().err


class TestSimulateCommand:
    def test_writes_three_csvs(self, tmp_path):
        out = tmp_path / "sim"
        assert run_cli(["simulate", "--kp", "4.0", "--out", str(out)]) == 0
        raw = sigproc.read_trace_csv(out / "raw.csv")
        filtered = sigproc.read_trace_csv(out / "filtered.csv")
        decimated = sigproc.read_trace_csv(out / "decimated.csv")
        assert len(raw) == round(SCN.horizon / SCN.sim_dt)
        assert len(raw) == len(filtered)
        assert decimated.sample_rate == pytest.approx(100.0)
        # band-pass strips the operating point; mean sits near zero
        assert abs(np.mean(filtered.samples)) < 0.01 * np.max(np.abs(filtered.samples))
        assert not (out / "diverged.txt").exists()

    def test_gain_ordering_visible_in_output(self, tmp_path):
        outs = {}
        for kp in (2.0, 4.0):
            out = tmp_path / f"kp{kp}"
            run_cli(["simulate", "--kp", str(kp), "--out", str(out)])
            trace = sigproc.read_trace_csv(out / "filtered.csv")
            post = sigproc.segment(trace, SCN.act_time, SCN.horizon)
            outs[kp] = sigproc.oscillation_energy(post, 0.0, post.duration)
        assert outs[2.0] < outs[4.0]

    def test_divergence_sidecar(self, tmp_path, capsys):
        out = tmp_path / "boom"
        code = run_cli(["simulate", "--kp", "4.0", "--out", str(out),
                        "--zeta_stable", "0.05", "--diverge_threshold", "1000.0"])
        assert code == 0
        assert (out / "diverged.txt").exists()
        assert "diverged" in capsys.readouterr().out


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    run_cli(["train", "--out", str(out), "--n_epoch", "5", "--n_iter", "2"])
    return out


class TestEvaluateAndOracle:
    def test_evaluate_report(self, run_dir, tmp_path, capsys):
        out = tmp_path / "eval"
        code = run_cli(["evaluate", "--checkpoint", str(run_dir / "best.ckpt"),
                        "--out", str(out)])
        assert code == 0
        text = (out / "report.txt").read_text()
        assert "applied_gain" in text and "energy_ratio" in text
        assert (out / "episode.csv").exists()
        assert "energy_ratio" in capsys.readouterr().out

    def test_evaluate_no_mitigation(self, run_dir, tmp_path):
        out = tmp_path / "eval"
        run_cli(["evaluate", "--checkpoint", str(run_dir / "best.ckpt"),
                 "--out", str(out), "--no-mitigation"])
        report = dict(line.split(" = ") for line in
                      (out / "report.txt").read_text().splitlines())
        assert float(report["applied_gain"]) == SCN.kp_unstable
        assert float(report["energy_ratio"]) == pytest.approx(1.0)

    def test_evaluate_missing_checkpoint(self, tmp_path, capsys):
        code = run_cli(["evaluate", "--checkpoint", str(tmp_path / "no.ckpt"),
                        "--out", str(tmp_path / "e")])
        assert code == cli.EXIT_ERROR
        assert "cannot load checkpoint" in capsys.readouterr().err

    def test_oracle_csv(self, tmp_path, capsys):
        out = tmp_path / "oracle.csv"
        code = run_cli(["oracle", "--out", str(out), "--kp_max", "1.0"])
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "gain,reward"
        rows = [line.split(",") for line in lines[1:]]
        assert len(rows) == 11  # 0.5 .. 1.0 at 0.05
        assert float(rows[0][0]) == 0.5
        assert "oracle optimum gain: 0.5" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# line protocol

@pytest.fixture(scope="module")
def server():
    srv = EnvServer(SCN, port=0)
    srv.serve_background()
    yield srv
    srv.shutdown()
    srv.server_close()


class Conn:
    """Raw line-protocol client for exercising the wire format directly."""

    def __init__(self, address):
        self.sock = socket.create_connection(address, timeout=10)
        self.fh = self.sock.makefile("rw", encoding="utf-8", newline="\n")

    def send_raw(self, text):
        self.fh.write(text + "\n")
        self.fh.flush()
        return json.loads(self.fh.readline())

    def send(self, **msg):
        return self.send_raw(json.dumps(msg))

    def close(self):
        self.fh.close()
        self.sock.close()


@pytest.fixture
def conn(server):
    c = Conn(server.address)
    yield c
    c.close()


class TestProtocol:
    def test_session_walk(self, conn):
        reply = conn.send(id=1, kind="reset", seed=0)
        assert reply["kind"] == "ok" and reply["payload"]["t"] == 0.0
        reply = conn.send(id=2, kind="set_gain", kp=2.0)
        assert reply["payload"]["active_kp"] == 2.0
        reply = conn.send(id=3, kind="step", n_steps=5000)
        assert reply["payload"]["t"] == pytest.approx(5000 * SCN.sim_dt)
        reply = conn.send(id=4, kind="measure")
        assert reply["kind"] == "trace"
        assert len(reply["samples"]) == 1
        assert reply["rate"] == SCN.sample_rate

    def test_set_gain_out_of_bounds(self, conn):
        reply = conn.send(id=1, kind="set_gain", kp=10.0)
        assert reply["kind"] == "error" and reply["code"] == "bounds"

    def test_run_episode_matches_local(self, conn):
        reply = conn.send(id=1, kind="run_episode", kp=2.0, seed=5)
        local = plant.run_episode(SCN, plant.GainAction(2.0), seed=5)
        assert reply["kind"] == "trace"
        assert np.array_equal(np.array(reply["samples"]), local.trace.samples)
        assert reply["diverged"] == local.diverged

    def test_unknown_kind_keeps_connection(self, conn):
        reply = conn.send(id=1, kind="bogus")
        assert reply["kind"] == "error" and reply["code"] == "unknown_kind"
        reply = conn.send(id=2, kind="reset")
        assert reply["kind"] == "ok"

    def test_malformed_json_keeps_connection(self, conn):
        reply = conn.send_raw("{not json")
        assert reply["kind"] == "error" and reply["code"] == "parse"
        reply = conn.send(id=1, kind="reset")
        assert reply["kind"] == "ok"

    def test_sequence_ids_enforced(self, conn):
        assert conn.send(id=5, kind="reset")["kind"] == "ok"
        reply = conn.send(id=5, kind="measure")
        assert reply["kind"] == "error" and reply["code"] == "sequence"
        assert conn.send(id=6, kind="measure")["kind"] == "trace"

    def test_sessions_are_isolated(self, server):
        c1, c2 = Conn(server.address), Conn(server.address)
        try:
            c1.send(id=1, kind="reset", seed=0)
            c1.send(id=2, kind="set_gain", kp=3.0)
            c1.send(id=3, kind="step", n_steps=100)
            # fresh connection: own id sequence, pristine state at t = 0
            reply = c2.send(id=1, kind="reset")
            assert reply["kind"] == "ok" and reply["payload"]["t"] == 0.0
        finally:
            c1.close()
            c2.close()

    def test_reset_scenario_overrides(self, conn):
        reply = conn.send(id=1, kind="reset", scenario={"f_osc": 30.0}, seed=0)
        assert reply["kind"] == "ok"
        # bad field name surfaces as an args error
        reply = conn.send(id=2, kind="reset", scenario={"nope": 1.0})
        assert reply["kind"] == "error" and reply["code"] == "args"


class TestRemoteEnv:
    def test_episode_bit_identical(self, server):
        env = RemoteEnv(*server.address, scenario=SCN)
        try:
            remote = env.run_episode(2.0, 5)
        finally:
            env.close()
        local = plant.run_episode(SCN, plant.GainAction(2.0), seed=5)
        assert np.array_equal(remote.trace.samples, local.trace.samples)
        assert remote.trace.sample_rate == local.trace.sample_rate
        assert env.episode_count == 1

    def test_server_down_raises(self):
        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            free_port = s.getsockname()[1]
        with pytest.raises(ProtocolError, match="cannot connect"):
            RemoteEnv("127.0.0.1", free_port, scenario=SCN)

    def test_retry_recovers_from_dropped_connection(self, server):
        env = RemoteEnv(*server.address, scenario=SCN)
        try:
            env._sock.close()  # sever the transport under the adapter
            result = env.run_episode(2.0, 5)
        finally:
            env.close()
        local = plant.run_episode(SCN, plant.GainAction(2.0), seed=5)
        assert np.array_equal(result.trace.samples, local.trace.samples)

    def test_remote_training_log_matches_local(self, server, tmp_path):
        cfg = trainer.TrainConfig(n_epoch=5, n_iter=2, seed=11)
        d_local, d_remote = tmp_path / "local", tmp_path / "remote"
        trainer.train(SCN, cfg, run_dir=d_local)
        env = RemoteEnv(*server.address, scenario=SCN)
        trainer.train(SCN, cfg, run_dir=d_remote, env=env)
        env.close()
        assert (d_local / "training_log.csv").read_bytes() == \
               (d_remote / "training_log.csv").read_bytes()
