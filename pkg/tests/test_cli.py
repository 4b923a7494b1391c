import os
import subprocess
import sys

from panelsolve.cli import main


def run_cli(args, env=None):
    """Run the CLI in a subprocess; returns (exit code, stdout, stderr)."""
    e = dict(os.environ)
    if env:
        e.update(env)
    proc = subprocess.run([sys.executable, "-m", "panelsolve", *args],
                          capture_output=True, text=True, env=e)
    return proc.returncode, proc.stdout, proc.stderr


def csv_rows(text):
    lines = [l for l in text.strip().splitlines() if not l.startswith("#")]
    header = lines[0].split(",")
    return [dict(zip(header, l.split(","))) for l in lines[1:]]


class TestFactor:
    def test_check_run(self, capsys):
        assert main(["factor", "--lap2d", "16", "16", "--scheduler", "dynamic",
                     "--threads", "4", "--check"]) == 0
        out = capsys.readouterr().out
        assert out.startswith("# schema=1\n")
        row = csv_rows(out)[0]
        assert row["status"] == "ok"
        assert float(row["residual"]) <= 1e-11
        assert float(row["gflops"]) > 0

    def test_tiny_tridiagonal_counts(self, capsys):
        assert main(["factor", "--lap2d", "2", "1"]) == 0
        row = csv_rows(capsys.readouterr().out)[0]
        assert row["nnz_l"] == "3"
        assert row["flops"] == "5"
        assert row["residual"] == ""

    def test_indefinite_exits_2(self, tmp_path):
        mtx = tmp_path / "indef.mtx"
        mtx.write_text("%%MatrixMarket matrix coordinate real symmetric\n"
                       "2 2 3\n1 1 1.0\n2 1 2.0\n2 2 1.0\n")
        code, out, err = run_cli(["factor", "--mm", str(mtx), "--format", "llt"])
        assert code == 2
        assert "not positive definite" in err

    def test_missing_file_exits_3(self):
        code, out, err = run_cli(["factor", "--mm", "/nonexistent/x.mtx"])
        assert code == 3

    def test_ldlt_on_indefinite(self, tmp_path):
        mtx = tmp_path / "indef.mtx"
        mtx.write_text("%%MatrixMarket matrix coordinate real symmetric\n"
                       "2 2 3\n1 1 1.0\n2 1 2.0\n2 2 1.0\n")
        code, out, err = run_cli(["factor", "--mm", str(mtx), "--format",
                                  "ldlt", "--check"])
        assert code == 0
        assert float(csv_rows(out)[0]["residual"]) <= 1e-12

    def test_threads_env_default(self, capsys, monkeypatch):
        monkeypatch.setenv("SOLVER_THREADS", "3")
        assert main(["factor", "--lap2d", "4", "4"]) == 0
        row = csv_rows(capsys.readouterr().out)[0]
        assert row["threads"] == "3"

    def test_trace_written(self, tmp_path, capsys):
        trace = tmp_path / "t.csv"
        assert main(["factor", "--lap2d", "6", "6", "--trace", str(trace)]) == 0
        capsys.readouterr()
        lines = trace.read_text().strip().splitlines()
        assert lines[0] == "task_id,kind,src,dst,worker,start_ns,end_ns"
        assert len(lines) > 1

    def test_deterministic_csv_stable(self, tmp_path):
        outs = []
        for rep in range(2):
            path = tmp_path / f"r{rep}.csv"
            code, _, _ = run_cli(["factor", "--lap2d", "8", "8",
                                  "--deterministic", "--check",
                                  "--out", str(path)])
            assert code == 0
            outs.append(path.read_text())
        rows = [csv_rows(o)[0] for o in outs]
        for field in rows[0]:
            if field in ("wall_s", "gflops"):
                continue
            assert rows[0][field] == rows[1][field]


class TestGenSymbolDag:
    def test_gen_factor_path_equivalence(self, tmp_path, capsys):
        mtx = tmp_path / "m.mtx"
        assert main(["gen", "--lap2d", "5", "3", "--out", str(mtx)]) == 0
        assert main(["factor", "--mm", str(mtx)]) == 0
        via_file = csv_rows(capsys.readouterr().out)[0]
        assert main(["factor", "--lap2d", "5", "3"]) == 0
        direct = csv_rows(capsys.readouterr().out)[0]
        assert via_file["nnz_l"] == direct["nnz_l"]
        assert via_file["flops"] == direct["flops"]

    def test_symbol_partition(self, capsys):
        assert main(["symbol", "--lap2d", "2", "2"]) == 0
        out = capsys.readouterr().out.strip().splitlines()
        diag = [l for l in out[1:] if l.split()[0] == l.split()[3]]
        cols = set()
        for line in diag:
            p, fc, lc, _ = map(int, line.split())
            cols.update(range(fc, lc))
        assert cols == {0, 1, 2, 3}

    def test_dag_feeds_sim(self, tmp_path, capsys):
        dag = tmp_path / "g.dag"
        assert main(["dag", "--lap2d", "4", "4", "--out", str(dag)]) == 0
        assert main(["sim", "--dag", str(dag), "--gpus", "1", "--streams",
                     "2"]) == 0
        row = csv_rows(capsys.readouterr().out)[0]
        assert float(row["makespan"]) > 0

    def test_sim_compare(self, tmp_path, capsys):
        dag = tmp_path / "g.dag"
        assert main(["dag", "--lap2d", "4", "4", "--out", str(dag)]) == 0
        assert main(["sim", "--dag", str(dag), "--gpus", "1", "--compare"]) == 0
        rows = csv_rows(capsys.readouterr().out)
        assert len(rows) == 2 * 2 * 3  # policies x gpus {0,1} x streams {1,2,3}


class TestBench:
    def test_single_row(self, capsys):
        assert main(["bench", "--lap2d", "6", "6", "--threads-list", "1",
                     "--scheduler-list", "dynamic", "--reps", "2"]) == 0
        rows = csv_rows(capsys.readouterr().out)
        assert len(rows) == 1

    def test_cartesian_product(self, capsys):
        assert main(["bench", "--lap2d", "4", "4", "--lap2d", "5", "5",
                     "--threads-list", "1,2", "--scheduler-list",
                     "static,dynamic", "--reps", "1"]) == 0
        rows = csv_rows(capsys.readouterr().out)
        assert len(rows) == 2 * 2 * 2

    def test_median_and_residuals(self, capsys):
        assert main(["bench", "--lap2d", "8", "8", "--threads-list", "2",
                     "--scheduler-list", "dynamic", "--reps", "5",
                     "--check"]) == 0
        row = csv_rows(capsys.readouterr().out)[0]
        assert row["reps"] == "5"
        assert float(row["residual_max"]) <= 1e-10
        assert float(row["min_s"]) <= float(row["median_s"])
