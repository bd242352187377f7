import pytest

from layerassign.assignments import iter_assignments
from layerassign.nn.network import SearchSpaceSpec
from layerassign.oracle import (
    ArchitectureDataset,
    ArchitectureRecord,
    SurrogateLandscape,
    compare_search_to_oracle,
    dataset_from_landscape,
    surrogate_search_adapter,
)
from layerassign.report import (
    accuracy_vs_depth,
    candidate_table,
    compare_table,
    distribution_table,
    read_csv,
    topk_table,
    write_report,
)
from layerassign.search import SearchConfig, run_search


@pytest.fixture(scope="module")
def artifacts():
    land = SurrogateLandscape("planted", 3, seed=2)
    ds = dataset_from_landscape(land, 4, 8, family="plain")
    trace = run_search(SearchConfig(spec=SearchSpaceSpec(target_depth=8)), evaluator=surrogate_search_adapter(land))
    cmp = compare_table(compare_search_to_oracle(trace, ds, landscape=land))
    return ds, trace, cmp


def test_accuracy_vs_depth(artifacts):
    ds, trace, cmp = artifacts
    rows = accuracy_vs_depth(ds, trace, cmp)
    assert [r["depth"] for r in rows] == [4, 5, 6, 7, 8]
    assert [r["count"] for r in rows] == [3, 6, 10, 15, 21]
    for r in rows:
        assert r["min"] <= r["q1"] <= r["median"] <= r["q3"] <= r["max"]
        assert r["searched_acc"] == r["max"]  # planted landscape: search finds the best


def test_tables(artifacts):
    ds, trace, _ = artifacts
    dist = distribution_table(ds)
    assert len(dist) == 55
    top = topk_table(ds, 4)
    assert [r["rank"] for r in top if r["depth"] == 4] == [1, 2, 3]
    assert len([r for r in top if r["depth"] == 8]) == 4
    cand = candidate_table(trace)
    assert len(cand) == 15 and sum(r["winner"] for r in cand) == 5


def test_write_report_pure(artifacts, tmp_path):
    ds, trace, cmp = artifacts
    files = write_report(tmp_path / "a", ds, trace, cmp)
    write_report(tmp_path / "b", ds, trace, cmp, figures=False)
    csvs = sorted(p.name for p in files if p.suffix == ".csv")
    assert csvs == ["accuracy_vs_depth.csv", "distribution.csv", "search_candidates.csv", "topk_chains.csv"]
    assert all(p.stat().st_size > 0 for p in files)
    assert {p.name for p in files if p.suffix == ".png"} == {n.replace(".csv", ".png") for n in csvs}
    for name in csvs:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert not list((tmp_path / "b").glob("*.png"))


def test_float_roundtrip(tmp_path):
    ds = ArchitectureDataset(ArchitectureRecord("plain", a, 1 / 3, 0) for a in iter_assignments(4, 3))
    write_report(tmp_path, ds, figures=False)
    rows = read_csv(tmp_path / "distribution.csv")
    assert float(rows[0]["val_acc"]) == 1 / 3


def test_trace_only(artifacts, tmp_path):
    _, trace, _ = artifacts
    files = write_report(tmp_path, trace=trace)
    assert sorted(p.name for p in files) == ["search_candidates.csv", "search_candidates.png"]
