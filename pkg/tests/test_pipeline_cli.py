import json
from pathlib import Path

import pytest

from corpusgen import generate_corpus
from sscd.cli import main
from sscd.errors import SscdError
from sscd.pipeline import bench

T1_FUNC = """int alpha(int a, int b) {
    int x = a + b;
    x = x * 2;
    if (x > 10) {
        x = x - 1;
    }
    return x;
}"""
T1_CLONE = """int alpha(int a,  int b) {
    int x = a + b; /* sum */
    x = x * 2;
    if (x > 10) {
        x = x - 1;
    }
    return x;
}"""
OTHER_FUNC = '''const char *describe(int code) {
    switch (code) {
    case 1:
        return "created";
    case 2:
        return "updated";
    case 3:
        return "deleted";
    default:
        break;
    }
    return code < 0 ? "error" : "unknown";
}'''


@pytest.fixture(scope="module")
def small_tree(tmp_path_factory):
    root = tmp_path_factory.mktemp("small")
    (root / "a.c").write_text(T1_FUNC + "\n\n" + OTHER_FUNC + "\n")
    (root / "b.c").write_text(T1_CLONE + "\n")
    return root


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    return generate_corpus(tmp_path_factory.mktemp("corpus"))


def run_cli(*args):
    return main([str(a) for a in args])


class TestDetectCommand:
    def test_detect_small_tree(self, small_tree, tmp_path, capsys):
        out = tmp_path / "out"
        code = run_cli(
            "detect", small_tree, "--min-loc", 0, "--similarity", 0.95,
            "--top-n", 10, "--out", out,
        )
        assert code == 0
        report = (out / "report.csv").read_text().splitlines()
        assert len(report) == 2  # header + the single planted T1 pair
        assert "a.c" in report[1] and "b.c" in report[1]
        assert report[1].endswith("1.000000")
        timing = json.loads((out / "timing.json").read_text())
        assert set(timing) == {"parse_ms", "inference_ms", "index_build_ms", "search_ms", "total_ms"}

    def test_reports_byte_identical_across_runs(self, corpus, tmp_path):
        outs = []
        for name in ("run1", "run2"):
            out = tmp_path / name
            code = run_cli(
                "detect", corpus.root / "src", "--min-loc", 6,
                "--similarity", 0.95, "--top-n", 10, "--seed", 7, "--out", out,
            )
            assert code == 0
            outs.append((out / "report.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_exact_and_hnsw_backends_both_work(self, corpus, tmp_path):
        reports = {}
        for backend in ("exact", "hnsw"):
            out = tmp_path / backend
            code = run_cli(
                "detect", corpus.root / "src", "--min-loc", 6,
                "--similarity", 0.95, "--top-n", 10,
                "--search-type", backend, "--out", out,
            )
            assert code == 0
            reports[backend] = (out / "report.csv").read_text()
        # planted exact duplicates surface in both back-ends
        assert reports["exact"].count("1.000000") >= 80
        assert reports["hnsw"].count("1.000000") >= 80

    def test_sigma_eps_tightening_gives_subset(self, corpus, tmp_path):
        def rows(out):
            return set((out / "report.csv").read_text().splitlines()[1:])

        loose_dir, tight_dir = tmp_path / "loose", tmp_path / "tight"
        assert run_cli(
            "detect", corpus.root / "src", "--min-loc", 6,
            "--similarity", 0.95, "--top-n", 10, "--out", loose_dir,
        ) == 0
        assert run_cli(
            "detect", corpus.root / "src", "--min-loc", 6,
            "--similarity", 0.98, "--top-n", 1, "--out", tight_dir,
        ) == 0
        loose, tight = rows(loose_dir), rows(tight_dir)
        tight_pairs = {r.rsplit(",", 1)[0] for r in tight}
        loose_pairs = {r.rsplit(",", 1)[0] for r in loose}
        assert tight_pairs <= loose_pairs

    def test_empty_source_dir(self, tmp_path, capsys):
        empty = tmp_path / "empty"
        empty.mkdir()
        out = tmp_path / "out"
        assert run_cli("detect", empty, "--out", out) == 0
        assert (out / "report.csv").read_text().splitlines()[0].startswith("file_a")
        assert len((out / "report.csv").read_text().splitlines()) == 1

    def test_manifest_source(self, small_tree, tmp_path):
        manifest = tmp_path / "m.jsonl"
        records = [
            {"file": "a.c", "start_line": 1, "end_line": 8, "name": "alpha", "text": T1_FUNC},
            {"file": "b.c", "start_line": 1, "end_line": 8, "name": "alpha", "text": T1_CLONE},
        ]
        manifest.write_text("".join(json.dumps(r) + "\n" for r in records))
        out = tmp_path / "out"
        code = run_cli(
            "detect", manifest, "--language", "manifest", "--min-loc", 0,
            "--similarity", 0.95, "--out", out,
        )
        assert code == 0
        assert len((out / "report.csv").read_text().splitlines()) == 2


class TestEmbedCacheFlow:
    def test_cached_run_has_zero_inference(self, small_tree, tmp_path):
        cache = tmp_path / "emb.bin"
        assert run_cli(
            "embed-cache", small_tree, "--min-loc", 0, "--out", cache,
        ) == 0
        assert cache.exists()
        out = tmp_path / "out"
        assert run_cli(
            "detect", small_tree, "--min-loc", 0, "--similarity", 0.95,
            "--embeddings-cache", cache, "--out", out,
        ) == 0
        timing = json.loads((out / "timing.json").read_text())
        assert timing["inference_ms"] == 0.0
        assert timing["parse_ms"] > 0.0
        assert timing["index_build_ms"] > 0.0
        assert timing["search_ms"] > 0.0

    def test_cache_and_fresh_reports_identical(self, small_tree, tmp_path):
        cache = tmp_path / "emb.bin"
        fresh, cached = tmp_path / "fresh", tmp_path / "cached"
        assert run_cli("embed-cache", small_tree, "--min-loc", 0, "--out", cache) == 0
        assert run_cli("detect", small_tree, "--min-loc", 0, "--out", fresh) == 0
        assert run_cli(
            "detect", small_tree, "--min-loc", 0, "--embeddings-cache", cache,
            "--out", cached,
        ) == 0
        assert (fresh / "report.csv").read_bytes() == (cached / "report.csv").read_bytes()


class TestEvalCommand:
    def test_perfect_report(self, tmp_path, capsys):
        truth = tmp_path / "truth.csv"
        truth.write_text(
            "file_a,start_a,end_a,file_b,start_b,end_b,type\n"
            "a.c,1,10,b.c,1,10,T1\n"
            "c.c,1,10,d.c,1,10,T2\n"
        )
        report = tmp_path / "report.csv"
        report.write_text(
            "file_a,start_a,end_a,file_b,start_b,end_b,similarity\n"
            "a.c,1,10,b.c,1,10,1.000000\n"
            "c.c,1,10,d.c,1,10,1.000000\n"
        )
        out = tmp_path / "eval.json"
        assert run_cli("eval", "--report", report, "--truth", truth, "--out", out) == 0
        data = json.loads(out.read_text())
        assert data["recall_overall_pct"] == 100.0
        assert data["recall_by_type_pct"] == {"T1": 100.0, "T2": 100.0}

    def test_empty_report_zero_recall(self, tmp_path):
        truth = tmp_path / "truth.csv"
        truth.write_text("a.c,1,10,b.c,1,10,T1\nc.c,1,10,d.c,1,10,MT3\n")
        report = tmp_path / "report.csv"
        report.write_text("file_a,start_a,end_a,file_b,start_b,end_b,similarity\n")
        out = tmp_path / "eval.json"
        assert run_cli("eval", "--report", report, "--truth", truth, "--out", out) == 0
        data = json.loads(out.read_text())
        assert data["recall_overall_pct"] == 0.0
        assert data["recall_by_type_pct"] == {"T1": 0.0, "MT3": 0.0}

    def test_overlap_threshold_flip(self, tmp_path):
        truth = tmp_path / "truth.csv"
        truth.write_text("a.c,10,19,b.c,10,19,T1\n")
        report = tmp_path / "report.csv"
        report.write_text("a.c,13,19,b.c,13,19,0.990000\n")
        out = tmp_path / "eval.json"
        assert run_cli("eval", "--report", report, "--truth", truth,
                       "--overlap", 0.70, "--out", out) == 0
        assert json.loads(out.read_text())["recall_overall_pct"] == 100.0
        assert run_cli("eval", "--report", report, "--truth", truth,
                       "--overlap", 0.71, "--out", out) == 0
        assert json.loads(out.read_text())["recall_overall_pct"] == 0.0


class TestBenchCommand:
    def test_minimum_size_and_determinism(self, capsys):
        assert run_cli("bench", "--n", 100, "--dimension", 16, "--hnsw-m", 4,
                       "--hnsw-efc", 16, "--hnsw-efs", 100, "--k", 5) == 0
        first = capsys.readouterr().out
        assert run_cli("bench", "--n", 100, "--dimension", 16, "--hnsw-m", 4,
                       "--hnsw-efc", 16, "--hnsw-efs", 100, "--k", 5) == 0
        second = capsys.readouterr().out
        # quality numbers are seed-deterministic even though timings differ
        recall = lambda text: [ln.split()[1] for ln in text.splitlines()[1:]]
        assert recall(first) == recall(second)

    def test_full_beam_recall_is_perfect(self):
        result = bench(100, dimension=16, seed=3, k=5, hnsw_m=8,
                       hnsw_ef_construction=32, ef_search=100)
        assert result.recall_at_k == 1.0

    def test_too_small_n_is_user_error(self):
        with pytest.raises(SscdError):
            bench(50, dimension=8)
        assert run_cli("bench", "--n", 50) == 1


class TestConfigPrecedence:
    def test_file_overrides_env_flag_overrides_file(self, small_tree, tmp_path, monkeypatch):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"min_loc": 99, "similarity": 0.95}))
        monkeypatch.setenv("SSCD_MIN_LOC", "0")

        # config file wins over env: min_loc 99 filters everything out
        out1 = tmp_path / "o1"
        assert run_cli("detect", small_tree, "--config", cfg, "--out", out1) == 0
        assert len((out1 / "report.csv").read_text().splitlines()) == 1

        # explicit flag wins over config file
        out2 = tmp_path / "o2"
        assert run_cli("detect", small_tree, "--config", cfg, "--min-loc", 0,
                       "--out", out2) == 0
        assert len((out2 / "report.csv").read_text().splitlines()) == 2

    def test_env_used_when_nothing_else_set(self, small_tree, tmp_path, monkeypatch):
        monkeypatch.setenv("SSCD_MIN_LOC", "99")
        out = tmp_path / "o"
        assert run_cli("detect", small_tree, "--out", out) == 0
        assert len((out / "report.csv").read_text().splitlines()) == 1

    def test_unknown_config_key_rejected(self, small_tree, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"minloc": 6}))
        assert run_cli("detect", small_tree, "--config", cfg) == 1


class TestExitCodes:
    def test_missing_source_is_user_error(self, tmp_path):
        assert run_cli("detect", tmp_path / "nope") == 1

    def test_bad_flag_value_is_user_error(self, small_tree):
        assert run_cli("detect", small_tree, "--language", "cobol") == 1

    def test_help_is_success(self):
        assert run_cli("--help") == 0

    def test_remote_without_endpoint_is_user_error(self, small_tree, tmp_path):
        assert run_cli("detect", small_tree, "--provider", "remote",
                       "--out", tmp_path / "o") == 1

    def test_internal_error_is_two(self, small_tree, tmp_path, monkeypatch):
        import sscd.cli

        def boom(config):
            raise RuntimeError("simulated crash")

        monkeypatch.setattr(sscd.cli, "detect", boom)
        assert run_cli("detect", small_tree, "--out", tmp_path / "o") == 2
