import json
import statistics

import pytest

from recongen.reports import (
    ABLATION_COLUMNS,
    ablation_rows,
    format_delta,
    read_records,
    render_summary,
    summary_rows,
    to_csv,
)


def rec(gen, seed, acc, scale=1.0, ptq=0.9, flt=0.97, scheme="w4a4"):
    return {"model": "lenet_bn", "scheme": scheme, "generator": gen, "scale": scale, "seed": seed,
            "float_accuracy": flt, "ptq_accuracy": ptq, "accuracy": [acc], "final_accuracy": acc}


@pytest.mark.parametrize("delta,text", [(0.003, "(+0.30%)"), (-0.01, "(-1.00%)"), (0.0, "(+0.00%)")])
def test_format_delta(delta, text):
    assert format_delta(delta) == text


def test_single_run_single_block():
    rows = summary_rows([rec("searched", 0, 0.95)])
    assert [r["label"] for r in rows] == ["float", "A0", "A2"]
    assert rows[-1]["delta"] == ""


def test_three_seeds_statistics_and_delta():
    h = [0.94, 0.95, 0.96]
    s = [0.955, 0.97, 0.95]
    records = [rec("human", i, a, ptq=0.9 + i / 100) for i, a in enumerate(h)]
    records += [rec("searched", i, a, ptq=0.5) for i, a in enumerate(s)]
    rows = {r["label"]: r for r in summary_rows(records)}
    assert rows["A1"]["median"] == statistics.median(h)
    assert (rows["A2"]["min"], rows["A2"]["max"]) == (0.95, 0.97)
    assert rows["A2"]["n_seeds"] == 3
    assert rows["A2"]["delta"] == format_delta(statistics.median(s) - statistics.median(h))
    assert rows["A0"]["median"] == pytest.approx(0.91)  # from the human runs


def test_groups_by_scheme_and_scale():
    rows = summary_rows([rec("human", 0, 0.9), rec("human", 0, 0.8, scheme="w8a8"), rec("human", 0, 0.7, scale=2.0)])
    assert {(r["scheme"], r["scale"]) for r in rows} == {("w4a4", 1.0), ("w8a8", 1.0), ("w4a4", 2.0)}


def test_corrupt_records_skipped_with_warning(tmp_path):
    good = tmp_path / "a" / "result.jsonl"
    good.parent.mkdir()
    good.write_text(json.dumps(rec("human", 0, 0.9)) + "\n")
    bad = tmp_path / "b" / "result.jsonl"
    bad.parent.mkdir()
    bad.write_text("{not json\n")
    partial = tmp_path / "c" / "result.jsonl"
    partial.parent.mkdir()
    partial.write_text(json.dumps({"model": "lenet_bn"}) + "\n")
    records, warnings = read_records(tmp_path)
    assert len(records) == 1 and len(warnings) == 2
    text = render_summary(summary_rows(records), warnings)
    assert text.count("# warning: skipped corrupt record") == 2


def test_ablation_rows_shape():
    records = [rec(g, seed, 0.9 + 0.01 * seed + (0.02 if g == "searched" else 0), scale=s)
               for g in ("searched", "human") for s in (0.5, 1.0, 2.0) for seed in range(3)]
    rows = ablation_rows(records, [0.5, 1.0, 2.0], "lenet_bn", "w4a4")
    assert len(rows) == 6
    assert all(tuple(r) == ABLATION_COLUMNS for r in rows)
    assert rows[0] == {"method": "searched", "scale": 0.5, "top1": 93.0, "seed_median": 93.0}
    header = to_csv(rows, ABLATION_COLUMNS).splitlines()[0]
    assert header == "method,scale,top1,seed_median"
