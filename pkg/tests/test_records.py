import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cropsight.classes import CLASS_CODES
from cropsight.records import (
    PREDICTIONS_HEADER,
    PredictionRecord,
    PredictionsFormatError,
    ScoredSet,
    format_probability,
    read_predictions,
    write_predictions,
)

HEADER = ",".join(PREDICTIONS_HEADER)


def test_header_is_fixed():
    assert HEADER == ("photo_id,true_class,p_B11,p_B12,p_B13,p_B14,p_B15,p_B16,p_B21,p_B22,"
                      "p_B31,p_B32,p_B33,p_B55,country,year,width,height,condition")


def test_probability_format_keeps_six_digits():
    assert format_probability(0.0) == "0.000000"
    assert format_probability(0.5) == "0.500000"
    assert format_probability(0.1 + 0.2) == "0.30000000000000004"


probs = st.lists(st.integers(0, 1000), min_size=12, max_size=12).filter(sum).map(
    lambda xs: tuple(x / sum(xs) for x in xs))


@settings(max_examples=50, deadline=None)
@given(st.lists(probs, min_size=1, max_size=8))
def test_round_trip_is_byte_identical(tmp_path_factory, rows):
    d = tmp_path_factory.mktemp("rt")
    recs = [PredictionRecord(f"p{i}", CLASS_CODES[i % 12], p, "FR", 2018, 1600, 1200) for i, p in enumerate(rows)]
    write_predictions(d / "a.csv", recs)
    back = read_predictions(d / "a.csv")
    assert back == recs
    write_predictions(d / "b.csv", back)
    assert (d / "a.csv").read_bytes() == (d / "b.csv").read_bytes()


def _write(path, rows):
    path.write_text(HEADER + "\n" + "\n".join(rows) + "\n")


def _row(pid="a", cls="B11", p=None, tail="FR,2018,1600,1200,none"):
    p = p or ["1"] + ["0"] * 11
    return ",".join([pid, cls, *p, tail])


def test_blank_optional_fields(tmp_path):
    _write(tmp_path / "p.csv", [_row(tail=",,,,")])
    (r,) = read_predictions(tmp_path / "p.csv")
    assert r.year is None and r.pixels is None and r.condition == "none" and r.country == ""


@pytest.mark.parametrize("row,needle", [
    (_row(cls="B99"), "unknown class"),
    (_row(p=["0.5"] * 12), "sum"),
    (_row(p=["-0.1", "1.1"] + ["0"] * 10), "[0, 1]"),
    (_row(tail="XX,2018,1600,1200,none"), "country"),
    (_row(tail="FR,2018,wide,1200,none"), "width"),
    (_row(tail="FR,2018,1600,1200,foggy"), "condition"),
    ("a,B11,1,0", "fields"),
])
def test_bad_rows_name_the_line(tmp_path, row, needle):
    _write(tmp_path / "p.csv", [_row("ok"), row])
    with pytest.raises(PredictionsFormatError) as exc:
        read_predictions(tmp_path / "p.csv")
    assert "line 3" in str(exc.value) and needle in str(exc.value)


def test_bad_header_and_duplicates(tmp_path):
    (tmp_path / "p.csv").write_text("photo_id,class\n")
    with pytest.raises(PredictionsFormatError):
        read_predictions(tmp_path / "p.csv")
    _write(tmp_path / "p.csv", [_row("a"), _row("a")])
    with pytest.raises(PredictionsFormatError):
        read_predictions(tmp_path / "p.csv")


def test_record_properties(make_record):
    r = make_record("x", "B11", "B13", peak=0.5, width=10, height=20)
    assert r.predicted_class == "B13" and not r.correct
    assert r.top1 == pytest.approx(0.5) and r.pixels == 200


def test_scored_set_columns(make_record):
    recs = [make_record("a", "B11"), make_record("b", "B12", "B11", peak=0.9)]
    s = ScoredSet.from_records(recs)
    assert s.labels == ("B11", "B12")
    assert list(s.correct) == [True, False]
    assert s.mp[1] == pytest.approx(0.9)
    sub = s.subset(s.correct)
    assert len(sub) == 1 and sub.records[0].photo_id == "a"
    with pytest.raises(ValueError):
        s.metric("entropy")
