import csv
import io
import json
import subprocess
import sys
import time

import numpy as np
import pytest

from artifact.cli import ConfigError, main, resolve

from conftest import DATA, lung_table


def run(capsys, *argv):
    code = main(["-q" if a == "-q" else a for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def tsv_rows(text):
    return list(csv.DictReader(io.StringIO(text), delimiter="\t"))


def cell(v):
    return None if v == "NA" else float(v)


class TestConfig:
    def test_precedence(self):
        assert resolve("pvclust", {}, {})["B"] == 10000
        assert resolve("pvclust", {}, {"B": 50})["B"] == 50
        assert resolve("pvclust", {"B": "70"}, {"B": 50})["B"] == 70

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="bogus"):
            resolve("fit", {}, {"bogus": 1})
        # keys valid for one subcommand are not accepted by another
        with pytest.raises(ConfigError, match="inner_order"):
            resolve("fit", {}, {"inner_order": 8})

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="format"):
            resolve("sphere", {}, {"format": "xml"})

    def test_lists(self):
        assert resolve("sphere", {"dims": "10,30"}, {})["dims"] == [10, 30]
        assert resolve("sphere", {}, {"dims": [10, 30]})["dims"] == [10, 30]

    @pytest.mark.parametrize("suffix", [".json", ".yaml"])
    def test_config_file(self, tmp_path, capsys, suffix):
        cfg = tmp_path / f"c{suffix}"
        body = {"methods": ["SI2"], "thetas": [0.0, 1.0], "format": "json"}
        cfg.write_text(json.dumps(body))  # JSON is valid YAML
        code, out, _ = run(capsys, "simulate", "--region", "halfspace", "--config", str(cfg), "-q")
        assert code == 0 and json.loads(out)["thetas"] == [0.0, 1.0]
        code, out, _ = run(capsys, "simulate", "--region", "halfspace", "--config", str(cfg),
                           "--format", "tsv", "-q")
        assert out.startswith("method\t")

    def test_unknown_key_in_file_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text('{"nope": 1}')
        with pytest.raises(SystemExit) as e:
            main(["fit", str(DATA / "lung_57.tsv"), "--config", str(cfg)])
        assert e.value.code == 2
        assert "nope" in capsys.readouterr().err


class TestFit:
    def test_lung_57(self, capsys):
        code, out, _ = run(capsys, "fit", str(DATA / "lung_57.tsv"), "--complement", "-q")
        rep = tsv_rows(out.split("\n\n")[0])[0]
        assert code == 0 and rep["model"] == "poly.3"
        assert cell(rep["p_si"]) == pytest.approx(0.2006, abs=0.01)

    def test_complement_flag_matches_h_side(self, tmp_path, capsys):
        h = tmp_path / "h.tsv"
        h.write_text(lung_table(62).complement().to_tsv())
        _, direct, _ = run(capsys, "fit", str(h), "-q")
        _, flipped, _ = run(capsys, "fit", str(DATA / "lung_62.tsv"), "--complement", "-q")
        assert direct == flipped

    def test_json_matches_tsv(self, capsys):
        _, t, _ = run(capsys, "fit", str(DATA / "lung_37.tsv"), "-q")
        _, j, _ = run(capsys, "fit", str(DATA / "lung_37.tsv"), "--format", "json", "-q")
        rep_t = tsv_rows(t.split("\n\n")[0])[0]
        doc = json.loads(j)
        for k in ("z_H", "z_S", "t_hat", "gamma_hat", "p_bp", "p_au", "p_si"):
            assert cell(rep_t[k]) == doc["report"][k]
        models = tsv_rows(t.split("\n\n")[1])
        assert [m["model"] for m in models] == [m["model"] for m in doc["models"]]
        assert [float(m["aic"]) for m in models] == [m["aic"] for m in doc["models"]]
        assert sum(m["selected"] for m in doc["models"]) == 1

    def test_single_row_is_degenerate(self, tmp_path, capsys):
        f = tmp_path / "one.tsv"
        f.write_text("sigma2\tnprime\tB\tC\n1.0\t916\t10000\t4000\n")
        code, out, _ = run(capsys, "fit", str(f), "-q")
        rep = tsv_rows(out.split("\n\n")[0])[0]
        assert code == 3
        assert rep["flags"] == "degenerate_fit" and rep["p_bp"] == "0.4" and rep["p_au"] == "NA"

    def test_parse_error_has_line(self, tmp_path, capsys):
        f = tmp_path / "bad.tsv"
        f.write_text("sigma2\tnprime\tB\tC\n1.0\t916\t10000\t4000\n0.5\t1832\t10000\tx\n")
        code, _, err = run(capsys, "fit", str(f), "-q")
        assert code == 1 and "line 3" in err and "bad.tsv" in err

    def test_missing_file(self, tmp_path, capsys):
        code, _, err = run(capsys, "fit", str(tmp_path / "none.tsv"), "-q")
        assert code == 1 and "none.tsv" in err


class TestSimulate:
    def test_halfspace(self, capsys):
        code, out, _ = run(capsys, "simulate", "--region", "halfspace", "--methods", "SI2,SI3,SDBP", "-q")
        rows = {r["method"]: r for r in tsv_rows(out)}
        assert code == 0
        for m in ("SI2", "SI3", "SDBP"):
            vals = [v for k, v in rows[m].items() if k.startswith("theta=")]
            assert all(v == "10.00" for v in vals) and rows[m]["Bias"] == "0.00"

    def test_json_full_precision(self, capsys):
        _, out, _ = run(capsys, "simulate", "--region", "halfspace", "--methods", "SI3",
                        "--thetas", "0,1", "--format", "json", "-q")
        doc = json.loads(out)
        assert doc["rows"]["SI3"] == pytest.approx([10.0, 10.0], abs=1e-6)
        assert doc["selection"] == pytest.approx([50.0, 50.0], abs=1e-9)

    def test_unknown_method(self, capsys):
        code, _, err = run(capsys, "simulate", "--methods", "XYZ", "-q")
        assert code == 2 and "XYZ" in err


class TestSphere:
    def test_small_run_is_fast(self, capsys):
        run(capsys, "sphere", "--dims", "10", "--gammas", "-1", "-q")
        t0 = time.perf_counter()
        code, out, _ = run(capsys, "sphere", "--dims", "10", "-q")
        assert code == 0 and time.perf_counter() - t0 < 1.0
        rows = tsv_rows(out)
        assert {r["dim"] for r in rows} == {"10", "inf"}

    def test_limits(self, capsys):
        from scipy.stats import norm

        _, out, _ = run(capsys, "sphere", "--dims", "10", "--gammas", "-1", "--format", "json", "-q")
        lim = {r["method"]: r["percent"] for r in json.loads(out)["rows"] if r["dim"] == "inf"}
        # a doubled test at alpha rejects with probability alpha / 2 before selection
        assert lim["2AU3"] == pytest.approx(100 * 0.05 / norm.sf(1.0), rel=1e-9)
        assert lim["SI3"] == pytest.approx(10.0)

    @pytest.mark.parametrize("args", [["--dims", "5"], ["--dims", "2000"], ["--gammas", "0.5"]])
    def test_rejects(self, capsys, args):
        code, _, _ = run(capsys, "sphere", *args, "-q")
        assert code == 2


def mixture_file(tmp_path, capsys, a=1.0, n=200, seed=4):
    f = tmp_path / "mix.tsv"
    code, _, _ = run(capsys, "mixture-sim", "--a", str(a), "--n", str(n), "--seed", str(seed), "-o", str(f), "-q")
    assert code == 0
    return f


class TestPvclust:
    def test_report_and_newick(self, tmp_path, capsys):
        f = mixture_file(tmp_path, capsys)
        nw = tmp_path / "tree.nwk"
        code, out, _ = run(capsys, "pvclust", str(f), "--B", "100", "--newick", str(nw), "-q")
        assert code == 0
        body, tail = out.rstrip("\n").rsplit("\n", 1)
        rows = tsv_rows(body + "\n")
        assert len(rows) == 1
        assert all(rows[0][k] != "" for k in ("bp", "au", "si"))
        assert tail.startswith("# newick\t") and tail.split("\t")[1] == nw.read_text().strip()

    def test_json_matches_tsv(self, tmp_path, capsys):
        f = mixture_file(tmp_path, capsys)
        _, t, _ = run(capsys, "pvclust", str(f), "--B", "100", "-q")
        _, j, _ = run(capsys, "pvclust", str(f), "--B", "100", "--format", "json", "-q")
        row = tsv_rows(t.rsplit("\n# newick", 1)[0] + "\n")[0]
        doc = json.loads(j)["clusters"][0]
        for k in ("bp", "au", "si", "t", "gamma"):
            assert cell(row[k]) == doc[k]
        assert row["model"] == doc["model"]

    def test_csv_input(self, tmp_path, capsys):
        x = np.random.default_rng(0).normal(size=(60, 4))
        f = tmp_path / "d.csv"
        f.write_text("a,b,c,d\n" + "\n".join(",".join(repr(float(v)) for v in r) for r in x) + "\n")
        code, out, _ = run(capsys, "pvclust", str(f), "--B", "50", "--format", "json", "-q")
        assert code == 0 and len(json.loads(out)["clusters"]) == 2

    def test_parse_error(self, tmp_path, capsys):
        f = tmp_path / "d.csv"
        f.write_text("a,b,c\n1,2,3\n4,five,6\n")
        code, _, err = run(capsys, "pvclust", str(f), "--B", "10", "-q")
        assert code == 1 and "line 3" in err


class TestSeeds:
    @pytest.mark.parametrize("argv", [
        ["mixture-sim", "--a", "0.5", "--n", "50"],
        ["mixture-sim", "--a", "0.5", "--n", "100", "--datasets", "3", "--B", "50"],
    ])
    def test_same_seed_same_bytes(self, capsys, argv):
        _, a, _ = run(capsys, *argv, "--seed", "3", "-q")
        _, b, _ = run(capsys, *argv, "--seed", "3", "-q")
        _, c, _ = run(capsys, *argv, "--seed", "4", "-q")
        assert a == b and a != c

    def test_pvclust_seed(self, tmp_path, capsys):
        f = mixture_file(tmp_path, capsys, a=0.0)
        _, a, _ = run(capsys, "pvclust", str(f), "--B", "60", "--seed", "1", "-q")
        _, b, _ = run(capsys, "pvclust", str(f), "--B", "60", "--seed", "1", "-q")
        assert a == b

    def test_mixture_dataset_json_matches_tsv(self, capsys):
        _, t, _ = run(capsys, "mixture-sim", "--n", "20", "--seed", "2", "-q")
        _, j, _ = run(capsys, "mixture-sim", "--n", "20", "--seed", "2", "--format", "json", "-q")
        vals = np.array([[float(v) for v in line.split("\t")[1:]] for line in t.strip().split("\n")[1:]])
        assert np.array_equal(vals, np.array(json.loads(j)["values"]))


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "artifact", "sphere", "--dims", "10", "--gammas", "-1",
                        "--methods", "SI3", "-q"], capture_output=True, text=True, timeout=120)
    assert r.returncode == 0 and r.stdout.startswith("gamma\tdim\tmethod\tpercent")
    assert r.stderr == ""
